"""Prompt template library: external .txt files with {placeholder} markers.

Templates live next to this module so they can be inspected and swapped
without code changes. Placeholders are lowercase identifiers in braces;
JSON braces in example output never collide because a quote follows the
opening brace.
"""

from __future__ import annotations

import re
from pathlib import Path

PROMPT_DIR = Path(__file__).parent / "prompts"

SYSTEM_TEACHER = "You synthesize tabular data, task instructions, and reference answers. Follow each output contract exactly."
SYSTEM_TARGET = "You are a helpful assistant. Answer the user's request about the given table."
SYSTEM_JUDGE = "You are a strict, consistent grader. Follow the output contract exactly."

_PLACEHOLDER_RE = re.compile(r"\{([a-z][a-z0-9_]*)\}")

TABLE_BLOCK_BEGIN = "BEGIN TABLE"
TABLE_BLOCK_END = "END TABLE"
_TABLE_BLOCK_RE = re.compile(
    re.escape(TABLE_BLOCK_BEGIN) + r"\n(.*?)\n" + re.escape(TABLE_BLOCK_END), re.DOTALL
)


class MissingTemplate(Exception):
    """No template file with the requested name exists."""


class MissingPlaceholder(Exception):
    """A template placeholder was left without a value."""


def template_path(name: str) -> Path:
    return PROMPT_DIR / f"{name}.txt"


def load_template(name: str) -> str:
    path = template_path(name)
    if not path.is_file():
        raise MissingTemplate(f"no prompt template named {name!r} under {PROMPT_DIR}")
    return path.read_text(encoding="utf-8")


def list_templates() -> list[str]:
    return sorted(p.stem for p in PROMPT_DIR.glob("*.txt"))


def render(name: str, **values: object) -> str:
    """Substitute every placeholder; missing values are an error."""
    template = load_template(name)
    needed = set(_PLACEHOLDER_RE.findall(template))
    missing = sorted(needed - set(values))
    if missing:
        raise MissingPlaceholder(f"template {name!r} is missing values for {missing}")
    return _PLACEHOLDER_RE.sub(lambda m: str(values[m.group(1)]), template)


def fence_table(table_text: str) -> str:
    """Wrap serialized table text in recoverable begin/end markers."""
    return f"{TABLE_BLOCK_BEGIN}\n{table_text}\n{TABLE_BLOCK_END}"


def extract_table_block(prompt: str) -> str | None:
    """Recover the first fenced table block from an assembled prompt."""
    match = _TABLE_BLOCK_RE.search(prompt)
    return match.group(1) if match else None
