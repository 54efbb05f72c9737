"""Provider-agnostic chat access for the teacher, target, and judge roles.

One wire protocol (OpenAI-style chat completions over HTTPS) covers all
three roles. The HTTP client retries transient failures with exponential
backoff and obeys a sliding-window rate limit; a content-addressed file
cache makes resumed runs free; a scripted backend driven by a plain
callable gives tests and demos byte-for-byte determinism offline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable
from urllib import error as urlerror
from urllib import request as urlrequest

logger = logging.getLogger(__name__)


class BackendError(Exception):
    """Base class for completion failures."""


class ProviderError(BackendError):
    """Non-transient provider failure (bad request, malformed reply)."""


class RetriesExhausted(BackendError):
    """Transient failures persisted past the retry budget."""


class AuthMissing(BackendError):
    """The configured API-key environment variable is not set."""


@dataclass(frozen=True)
class ChatRequest:
    role_tag: str
    model: str
    system: str
    user: str
    temperature: float
    max_tokens: int
    sampling_seed: int | None = None

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("user message must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int = 0
    completion_tokens: int = 0
    from_cache: bool = False

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str
    api_key_env: str = ""
    max_in_flight: int = 4
    requests_per_minute: int = 60
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 120.0

    def __post_init__(self) -> None:
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")


def fingerprint(req: ChatRequest) -> str:
    """Stable cache key over the fields that determine the reply."""
    payload = json.dumps(
        {
            "model": req.model,
            "system": req.system,
            "user": req.user,
            "temperature": req.temperature,
            "sampling_seed": req.sampling_seed,
        },
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ChatBackend:
    """Interface: complete one request; batch fan-out is shared here."""

    max_in_flight: int = 4

    def complete(self, req: ChatRequest) -> ChatResponse:
        raise NotImplementedError

    def complete_batch(self, reqs: list[ChatRequest]) -> list[ChatResponse | BackendError]:
        """All requests answered, input order kept, failures per item."""
        if not reqs:
            return []
        results: list[ChatResponse | BackendError] = [None] * len(reqs)  # type: ignore[list-item]

        def run(index: int, req: ChatRequest) -> None:
            try:
                results[index] = self.complete(req)
            except BackendError as exc:
                results[index] = exc
            except Exception as exc:  # pragma: no cover - defensive
                results[index] = ProviderError(str(exc))

        workers = max(1, min(self.max_in_flight, len(reqs)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for index, req in enumerate(reqs):
                pool.submit(run, index, req)
        return results


class ScriptedBackend(ChatBackend):
    """Deterministic offline backend; replies come from a handler callable.

    The handler may raise BackendError subclasses to script failures.
    Every accepted request is recorded, so tests can assert call counts
    and prove that resumed runs never repeat a completed call.
    """

    def __init__(self, handler: Callable[[ChatRequest], str], max_in_flight: int = 1):
        self._handler = handler
        self.max_in_flight = max_in_flight
        self._lock = threading.Lock()
        self.calls: list[ChatRequest] = []
        self.fingerprints: list[str] = []

    @classmethod
    def from_replies(cls, replies: list[str]) -> ScriptedBackend:
        """Sequential queue of canned replies; raises when drained."""
        queue = deque(replies)

        def handler(req: ChatRequest) -> str:
            if not queue:
                raise ProviderError("scripted reply queue is empty")
            return queue.popleft()

        return cls(handler, max_in_flight=1)

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def complete(self, req: ChatRequest) -> ChatResponse:
        text = self._handler(req)
        with self._lock:
            self.calls.append(req)
            self.fingerprints.append(fingerprint(req))
        return ChatResponse(text=text, from_cache=False)


class RateLimiter:
    """Sliding 60-second window: at most `limit` acquisitions per window."""

    def __init__(
        self,
        limit: int,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if limit < 1:
            raise ValueError("rate limit must be >= 1")
        self.limit = limit
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._window: deque[float] = deque()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._window and self._window[0] <= now - 60.0:
                    self._window.popleft()
                if len(self._window) < self.limit:
                    self._window.append(now)
                    return
                wait = self._window[0] + 60.0 - now
            self._sleep(max(wait, 0.01))


class TransportFailure(Exception):
    """Connection-level failure the retry policy treats as transient."""


Transport = Callable[[str, dict, bytes, float], tuple[int, str]]


def _urllib_transport(url: str, headers: dict, body: bytes, timeout: float) -> tuple[int, str]:
    req = urlrequest.Request(url, data=body, headers=headers, method="POST")
    try:
        with urlrequest.urlopen(req, timeout=timeout) as resp:
            return resp.status, resp.read().decode("utf-8")
    except urlerror.HTTPError as exc:
        return exc.code, exc.read().decode("utf-8", errors="replace")
    except (urlerror.URLError, TimeoutError, OSError) as exc:
        raise TransportFailure(str(exc)) from exc


class HttpChatBackend(ChatBackend):
    """OpenAI-compatible chat-completions client with retry and rate limit."""

    def __init__(
        self,
        config: BackendConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self.config = config
        self.max_in_flight = config.max_in_flight
        self._transport = transport or _urllib_transport
        self._sleep = sleep
        self._limiter = RateLimiter(config.requests_per_minute, clock=clock, sleep=sleep)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env)
            if not key:
                raise AuthMissing(f"environment variable {self.config.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _body(self, req: ChatRequest) -> bytes:
        payload: dict = {
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.sampling_seed is not None:
            payload["seed"] = req.sampling_seed
        return json.dumps(payload, ensure_ascii=False).encode("utf-8")

    def complete(self, req: ChatRequest) -> ChatResponse:
        headers = self._headers()
        body = self._body(req)
        attempts = self.config.max_retries + 1
        last_failure = ""
        for attempt in range(attempts):
            if attempt:
                self._sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            self._limiter.acquire()
            try:
                status, text = self._transport(
                    self.config.endpoint, headers, body, self.config.timeout
                )
            except TransportFailure as exc:
                last_failure = f"transport: {exc}"
                logger.warning("attempt %d/%d failed (%s)", attempt + 1, attempts, last_failure)
                continue
            if status == 429 or status >= 500:
                last_failure = f"HTTP {status}"
                logger.warning("attempt %d/%d failed (%s)", attempt + 1, attempts, last_failure)
                continue
            if status != 200:
                raise ProviderError(f"HTTP {status}: {text[:500]}")
            return self._parse_reply(text)
        raise RetriesExhausted(f"{attempts} attempts failed; last: {last_failure}")

    @staticmethod
    def _parse_reply(text: str) -> ChatResponse:
        try:
            data = json.loads(text)
            content = data["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed completion body: {exc}") from exc
        usage = data.get("usage") or {}
        return ChatResponse(
            text=content,
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            completion_tokens=int(usage.get("completion_tokens", 0)),
        )


class CachingBackend(ChatBackend):
    """Content-addressed response cache: cache/<2 hex>/<fingerprint>.json."""

    def __init__(self, inner: ChatBackend, cache_dir: Path | str):
        self.inner = inner
        self.cache_dir = Path(cache_dir)
        self.max_in_flight = inner.max_in_flight

    def _path(self, fp: str) -> Path:
        return self.cache_dir / fp[:2] / f"{fp}.json"

    def complete(self, req: ChatRequest) -> ChatResponse:
        fp = fingerprint(req)
        path = self._path(fp)
        if path.exists():
            data = json.loads(path.read_text(encoding="utf-8"))
            return ChatResponse(
                text=data["text"],
                prompt_tokens=data.get("prompt_tokens", 0),
                completion_tokens=data.get("completion_tokens", 0),
                from_cache=True,
            )
        resp = self.inner.complete(req)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(
            json.dumps(
                {
                    "text": resp.text,
                    "prompt_tokens": resp.prompt_tokens,
                    "completion_tokens": resp.completion_tokens,
                },
                ensure_ascii=False,
            ),
            encoding="utf-8",
        )
        os.replace(tmp, path)
        return resp


@dataclass
class LlmRole:
    """A backend bound to one role's model and sampling defaults."""

    backend: ChatBackend
    role_tag: str
    model: str
    temperature: float
    max_tokens: int = 2048

    def request(self, system: str, user: str, sampling_seed: int | None = None) -> ChatRequest:
        return ChatRequest(
            role_tag=self.role_tag,
            model=self.model,
            system=system,
            user=user,
            temperature=self.temperature,
            max_tokens=self.max_tokens,
            sampling_seed=sampling_seed,
        )

    def complete(self, system: str, user: str, sampling_seed: int | None = None) -> ChatResponse:
        return self.backend.complete(self.request(system, user, sampling_seed))

    def complete_batch(self, requests: list[ChatRequest]) -> list[ChatResponse | BackendError]:
        return self.backend.complete_batch(requests)
