"""Transport, retry and rate limiting shared by the service clients.

Two transports sit behind the same interface:

* :class:`LiveTransport` talks HTTP through ``requests``.
* :class:`FixtureTransport` replays canned responses from a directory. Each
  request is reduced to a canonical JSON document (method, path, sorted
  params, body) and hashed with SHA-256. ``<fixture_dir>/<hash>.json``
  holds ``{"request": ..., "responses": [...]}``. Successive identical
  requests consume successive responses, and the last one repeats.

Timing goes through a clock object so backoff and rate limiting can be
tested against :class:`VirtualClock` without sleeping.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import threading
import time
from collections import deque
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol

from ..errors import AuthError, ClientError, RetryableError, ValidationError

logger = logging.getLogger(__name__)

TOKEN_ENV = "POISCOUT_API_TOKEN"
RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})
JITTER = 0.25
WINDOW_S = 60.0
# absorbs float rounding when a sleep lands exactly on a window edge
_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class ClientConfig:
    base_url: str = "https://graph.mapillary.com"
    auth_token: str = field(default="", repr=False)
    max_retries: int = 5
    base_backoff_ms: float = 500.0
    rate_limit_per_min: int = 60
    mode: str = "live"
    fixture_dir: Path | None = None
    timeout_s: float = 30.0

    def __post_init__(self) -> None:
        if self.mode not in ("live", "fixture"):
            raise ValidationError(f"mode must be 'live' or 'fixture', got {self.mode!r}")
        if self.mode == "live" and not self.auth_token:
            raise ValidationError(f"live mode needs an API token (set {TOKEN_ENV})")
        if self.mode == "fixture":
            if self.fixture_dir is None or not Path(self.fixture_dir).is_dir():
                raise ValidationError(f"fixture directory {self.fixture_dir} does not exist")
            object.__setattr__(self, "fixture_dir", Path(self.fixture_dir))
        if self.max_retries < 0 or self.base_backoff_ms < 0 or self.rate_limit_per_min < 1:
            raise ValidationError("max_retries/base_backoff_ms must be >= 0 and rate_limit_per_min >= 1")

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs: Any) -> ClientConfig:
        env = os.environ if env is None else env
        return cls(auth_token=env.get(TOKEN_ENV, ""), **kwargs)


class Clock(Protocol):
    def monotonic(self) -> float: ...

    def sleep(self, seconds: float) -> None: ...


class SystemClock:
    def monotonic(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)


class VirtualClock:
    """A clock that only moves when slept on; records every sleep."""

    def __init__(self, start: float = 0.0):
        self.now = start
        self.sleeps: list[float] = []
        self._lock = threading.Lock()

    def monotonic(self) -> float:
        return self.now

    def sleep(self, seconds: float) -> None:
        with self._lock:
            self.sleeps.append(seconds)
            if seconds > 0:
                self.now += seconds

    def advance(self, seconds: float) -> None:
        self.now += seconds


class RateLimiter:
    """At most ``limit`` acquisitions in any sliding ``window`` seconds."""

    def __init__(self, limit: int, clock: Clock, window: float = WINDOW_S):
        self.limit = limit
        self.window = window
        self.clock = clock
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()
        self.history: list[float] = []

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self.clock.monotonic()
                while self._stamps and self._stamps[0] + self.window <= now + _EDGE_EPS:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    self.history.append(now)
                    return
                self.clock.sleep(max(self._stamps[0] + self.window - now, _EDGE_EPS))


@dataclass
class Response:
    status: int
    body: Any = None
    text: str | None = None


def canonical_request(method: str, path: str, params: Mapping[str, Any] | None = None, body: Any = None) -> str:
    doc = {
        "method": method.upper(),
        "path": "/" + path.lstrip("/"),
        "params": {str(k): str(v) for k, v in sorted((params or {}).items())},
        "body": body,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def fixture_key(method: str, path: str, params: Mapping[str, Any] | None = None, body: Any = None) -> str:
    return hashlib.sha256(canonical_request(method, path, params, body).encode("ascii")).hexdigest()


def record_fixture(
    fixture_dir: str | Path,
    method: str,
    path: str,
    params: Mapping[str, Any] | None = None,
    body: Any = None,
    responses: list[dict[str, Any]] | None = None,
) -> Path:
    """Write a fixture file; each response is ``{"status": int, "body": ...}`` or ``{"status", "text"}``."""
    key = fixture_key(method, path, params, body)
    out = Path(fixture_dir) / f"{key}.json"
    doc = {"request": json.loads(canonical_request(method, path, params, body)), "responses": responses or []}
    out.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out


class Transport(Protocol):
    def send(self, method: str, path: str, params: Mapping[str, Any] | None, body: Any) -> Response: ...


class FixtureTransport:
    def __init__(self, fixture_dir: str | Path):
        self.fixture_dir = Path(fixture_dir)
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()
        self.calls: list[str] = []

    def send(self, method: str, path: str, params: Mapping[str, Any] | None, body: Any) -> Response:
        key = fixture_key(method, path, params, body)
        fpath = self.fixture_dir / f"{key}.json"
        with self._lock:
            self.calls.append(key)
            if not fpath.is_file():
                return Response(404, {"error": f"no fixture for {method.upper()} {path}"})
            responses = json.loads(fpath.read_text(encoding="utf-8"))["responses"]
            i = self._cursor.get(key, 0)
            self._cursor[key] = i + 1
        if not responses:
            return Response(404, {"error": "fixture has no responses"})
        r = responses[min(i, len(responses) - 1)]
        return Response(int(r["status"]), r.get("body"), r.get("text"))


class LiveTransport:
    def __init__(self, cfg: ClientConfig):
        import requests

        self._requests = requests
        self.base_url = cfg.base_url.rstrip("/")
        self.timeout = cfg.timeout_s
        self.session = requests.Session()
        self.session.headers["Authorization"] = f"OAuth {cfg.auth_token}"

    def send(self, method: str, path: str, params: Mapping[str, Any] | None, body: Any) -> Response:
        url = path if path.startswith("http") else f"{self.base_url}/{path.lstrip('/')}"
        try:
            r = self.session.request(method, url, params=params, json=body, timeout=self.timeout)
        except (self._requests.ConnectionError, self._requests.Timeout) as exc:
            raise RetryableError(f"transport error: {type(exc).__name__}") from None
        ctype = r.headers.get("Content-Type", "")
        if "json" in ctype:
            try:
                return Response(r.status_code, r.json())
            except ValueError:
                return Response(r.status_code, None, r.text)
        return Response(r.status_code, None, r.text)


class ApiSession:
    """Retrying, rate-limited request loop over a transport.

    Attempt ``n`` that fails with a retryable status waits
    ``base_backoff_ms * 2**(n-1)`` milliseconds, scaled by a uniform factor
    in ``[0.75, 1.25]``, before the next try. At most ``max_retries + 1``
    attempts are made.
    """

    def __init__(
        self,
        cfg: ClientConfig,
        transport: Transport | None = None,
        clock: Clock | None = None,
        rng: random.Random | None = None,
    ):
        self.cfg = cfg
        self.clock = clock or SystemClock()
        self.rng = rng or random.Random()
        if transport is None:
            transport = FixtureTransport(cfg.fixture_dir) if cfg.mode == "fixture" else LiveTransport(cfg)
        self.transport = transport
        self.limiter = RateLimiter(cfg.rate_limit_per_min, self.clock)
        self.attempts = 0
        self.backoffs: list[float] = []

    def _redact(self, text: str) -> str:
        token = self.cfg.auth_token
        return text.replace(token, "***") if token else text

    def backoff_seconds(self, attempt: int) -> float:
        base = self.cfg.base_backoff_ms * 2 ** (attempt - 1) / 1000.0
        return base * (1.0 + self.rng.uniform(-JITTER, JITTER))

    def request(self, method: str, path: str, params: Mapping[str, Any] | None = None, body: Any = None) -> Response:
        last: ClientError | None = None
        for attempt in range(1, self.cfg.max_retries + 2):
            self.limiter.acquire()
            self.attempts += 1
            try:
                resp = self.transport.send(method, path, params, body)
            except RetryableError as exc:
                last = exc
            else:
                if resp.status in (401, 403):
                    raise AuthError(f"{method.upper()} {path}: authentication failed", status=resp.status)
                if resp.status in RETRYABLE_STATUS:
                    last = RetryableError(f"{method.upper()} {path}: HTTP {resp.status}", status=resp.status)
                elif resp.status >= 400:
                    detail = resp.body if resp.body is not None else resp.text
                    raise ClientError(
                        self._redact(f"{method.upper()} {path}: HTTP {resp.status}: {detail}"), status=resp.status
                    )
                else:
                    return resp
            if attempt <= self.cfg.max_retries:
                wait = self.backoff_seconds(attempt)
                self.backoffs.append(wait)
                logger.info("retrying %s %s in %.3fs (%s)", method.upper(), path, wait, last)
                self.clock.sleep(wait)
        assert last is not None
        raise RetryableError(f"{last} (gave up after {self.cfg.max_retries + 1} attempts)", status=last.status)
