"""Chat-completion gateway: HTTP and mock backends, retries, rate limiting, call ledger."""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Protocol

import httpx

log = logging.getLogger(__name__)

PURPOSES = ("profile", "rerank", "loss", "summarize", "optimize")


class GatewayError(RuntimeError):
    """Unrecoverable failure talking to the model backend."""


class AuthError(GatewayError):
    pass


class RateLimitError(GatewayError):
    pass


class MalformedResponseError(GatewayError):
    pass


class TransientError(GatewayError):
    """Raised by backends for failures worth retrying."""


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[Message, ...]
    purpose: str
    temperature: float = 0.0
    max_tokens: int = 1024
    # ledger scope, e.g. "train/e0/b3" or "validation/e2"
    scope: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        if self.purpose not in PURPOSES:
            raise ValueError(f"unknown purpose {self.purpose!r}")
        if not self.messages:
            raise ValueError("request has no messages")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @classmethod
    def build(cls, purpose: str, system: str | None, user: str, **kw) -> "ChatRequest":
        msgs = []
        if system is not None:
            msgs.append(Message("system", system))
        msgs.append(Message("user", user))
        return cls(tuple(msgs), purpose, **kw)

    @property
    def system(self) -> str:
        return "\n".join(m.content for m in self.messages if m.role == "system")

    @property
    def user(self) -> str:
        return "\n".join(m.content for m in self.messages if m.role == "user")

    @property
    def text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass
class ChatResponse:
    text: str
    usage: dict | None = None
    latency: float = 0.0


class CallLedger:
    """Thread-safe per-purpose and per-scope call counters."""

    def __init__(self):
        self._lock = threading.Lock()
        self.by_purpose: Counter[str] = Counter()
        self.by_scope: Counter[str] = Counter()
        self.by_scope_purpose: Counter[tuple[str, str]] = Counter()

    def record(self, purpose: str, scope: str = "") -> None:
        with self._lock:
            self.by_purpose[purpose] += 1
            self.by_scope[scope] += 1
            self.by_scope_purpose[(scope, purpose)] += 1

    @property
    def total(self) -> int:
        with self._lock:
            return sum(self.by_purpose.values())

    def count(self, purpose: str | None = None, scope_prefix: str | None = None) -> int:
        with self._lock:
            return sum(
                n
                for (s, p), n in self.by_scope_purpose.items()
                if (purpose is None or p == purpose)
                and (scope_prefix is None or s.startswith(scope_prefix))
            )

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "by_purpose": dict(self.by_purpose),
                "by_scope_purpose": [[s, p, n] for (s, p), n in sorted(self.by_scope_purpose.items())],
            }

    @classmethod
    def from_snapshot(cls, snap: dict) -> "CallLedger":
        ledger = cls()
        for s, p, n in snap.get("by_scope_purpose", []):
            ledger.by_purpose[p] += n
            ledger.by_scope[s] += n
            ledger.by_scope_purpose[(s, p)] += n
        return ledger

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["purpose", "count"])
        with self._lock:
            for p in PURPOSES:
                w.writerow([p, self.by_purpose.get(p, 0)])
            w.writerow(["total", sum(self.by_purpose.values())])
        return buf.getvalue()


@dataclass(frozen=True)
class CallEstimate:
    per_epoch: int
    n_batches: int
    approximate: bool

    def __int__(self) -> int:
        return self.per_epoch


def expected_calls(batch_size: int, n_train: int) -> CallEstimate:
    """Training-stage calls per epoch: (3 per user + 2 per batch) per batch.

    When ``batch_size`` does not divide ``n_train`` the batch count is
    rounded up and the estimate is flagged approximate.
    """
    if batch_size < 1 or n_train < 1:
        raise ValueError("batch_size and n_train must be positive")
    n_batches = math.ceil(n_train / batch_size)
    approximate = n_train % batch_size != 0
    return CallEstimate((batch_size * 3 + 2) * n_batches, n_batches, approximate)


class Backend(Protocol):
    def send(self, request: ChatRequest) -> ChatResponse: ...


class RateLimiter:
    """Spaces out call starts to honour a requests-per-minute ceiling."""

    def __init__(self, rpm: float | None, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 60.0 / rpm if rpm else 0.0
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = 0.0

    def acquire(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = self._clock()
            start = max(now, self._next)
            self._next = start + self.interval
        wait = start - now
        if wait > 0:
            self._sleep(wait)


class Gateway:
    def __init__(
        self,
        backend: Backend,
        *,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 20.0,
        rpm: float | None = None,
        ledger: CallLedger | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.ledger = ledger or CallLedger()
        self.limiter = RateLimiter(rpm, sleep=sleep)
        self._sleep = sleep

    def complete(self, request: ChatRequest) -> ChatResponse:
        attempt = 0
        while True:
            self.limiter.acquire()
            t0 = time.monotonic()
            try:
                resp = self.backend.send(request)
            except TransientError as exc:
                if attempt >= self.max_retries:
                    if isinstance(exc, _RateLimited):
                        raise RateLimitError(f"rate limited after {attempt + 1} attempts") from exc
                    raise GatewayError(f"giving up after {attempt + 1} attempts: {exc}") from exc
                delay = min(self.backoff_cap, self.backoff_base * 2**attempt)
                log.warning("transient failure (%s); retry %d in %.2fs", exc, attempt + 1, delay)
                self._sleep(delay)
                attempt += 1
                continue
            resp.latency = resp.latency or time.monotonic() - t0
            self.ledger.record(request.purpose, request.scope)
            return resp


class _RateLimited(TransientError):
    pass


class HttpBackend:
    """Generic ``/chat/completions`` client."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        api_key_env: str = "AGP_API_KEY",
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(api_key_env)
        if not self.api_key:
            raise AuthError(f"no credential: set ${api_key_env}")
        self.client = client or httpx.Client(timeout=timeout)

    @classmethod
    def from_env(cls, model: str, **kw) -> "HttpBackend":
        base_url = os.environ.get("AGP_BASE_URL")
        if not base_url:
            raise GatewayError("AGP_BASE_URL is not set")
        return cls(base_url, model, **kw)

    def send(self, request: ChatRequest) -> ChatResponse:
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            r = self.client.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {self.api_key}"},
            )
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        if r.status_code in (401, 403):
            raise AuthError(f"authentication failed (HTTP {r.status_code})")
        if r.status_code == 429:
            raise _RateLimited("HTTP 429")
        if r.status_code >= 500:
            raise TransientError(f"HTTP {r.status_code}")
        if r.status_code >= 400:
            raise GatewayError(f"HTTP {r.status_code}: {r.text[:200]}")
        try:
            data = r.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponseError(f"unexpected response body: {r.text[:200]}") from exc
        if not isinstance(text, str):
            raise MalformedResponseError("message content is not a string")
        return ChatResponse(text=text, usage=data.get("usage"))
