"""Tolerant JSON extraction from free-form model replies."""

from __future__ import annotations

import json
from typing import Iterator


def iter_json_objects(text: str) -> Iterator[dict]:
    """Every well-formed JSON object in the text, in start-position order.

    Nested objects are yielded too (an object inside an object counts as
    appearing later), so "last object containing key X" works regardless
    of how a reply wraps its payload.
    """
    decoder = json.JSONDecoder()
    pos = 0
    while True:
        start = text.find("{", pos)
        if start == -1:
            return
        try:
            obj, _ = decoder.raw_decode(text, start)
        except json.JSONDecodeError:
            pos = start + 1
            continue
        if isinstance(obj, dict):
            yield obj
        pos = start + 1


def last_json_object_with_key(text: str, key: str) -> dict | None:
    """The last JSON object in the text that has `key` at its top level."""
    found: dict | None = None
    for obj in iter_json_objects(text):
        if key in obj:
            found = obj
    return found
