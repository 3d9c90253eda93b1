"""Chat-completion HTTP client with retries, admission control and replay.

Every call produces an :class:`ExchangeRecord`. Records written under
``<run>/raw_llm/`` can be fed to :class:`ReplayGateway` to rerun a stage
without touching the network.
"""

from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping

import httpx

from .errors import AuthError, ProtocolError, RateLimitedExhausted, ReplayMiss, TimeoutExhausted
from .prompts import PromptBundle
from .storage import atomic_write, dumps

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ModelEndpoint:
    base_url: str
    model_name: str
    api_key_ref: str = "ADOS_LLM_API_KEY"
    path: str = "/chat/completions"
    timeout_s: float = 120.0
    max_retries: int = 3
    max_concurrent: int = 4
    requests_per_minute: int = 60
    backoff_base_s: float = 1.0
    backoff_cap_s: float = 30.0
    # provider settings passed through untouched (temperature is left unset)
    extra_body: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be at least 1")
        if self.requests_per_minute < 1:
            raise ValueError("requests_per_minute must be at least 1")

    @property
    def url(self) -> str:
        return self.base_url.rstrip("/") + "/" + self.path.lstrip("/")

    def descriptor(self) -> dict:
        return {"url": self.url, "model": self.model_name}

    @classmethod
    def from_json(cls, data: Mapping) -> "ModelEndpoint":
        return cls(**data)


@dataclass
class ExchangeRecord:
    request_id: str
    endpoint: dict
    prompt_digest: str
    request_body: dict
    response_body: object
    response_text: str | None
    latency_ms: float
    attempt_count: int
    timestamp: str | None
    attempts: list = field(default_factory=list)
    key: str | None = None
    replayed: bool = False

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: Mapping) -> "ExchangeRecord":
        return cls(**data)


def request_id_for(bundle: PromptBundle, key: str | None) -> str:
    if key:
        safe = re.sub(r"[^A-Za-z0-9_.-]+", "_", key).strip("_")
        return f"{safe}-{bundle.digest[:12]}"
    return bundle.digest[:24]


class RollingWindowLimiter:
    """Blocks until fewer than ``limit`` requests were issued in the last ``window`` seconds."""

    def __init__(self, limit: int, window: float = 60.0, clock=time.monotonic, sleep=time.sleep):
        self.limit = limit
        self.window = window
        self._clock = clock
        self._sleep = sleep
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and self._stamps[0] <= now - self.window:
                    self._stamps.popleft()
                if len(self._stamps) < self.limit:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + self.window - now
            self._sleep(max(wait, 1e-3))


class RecordSink:
    """Persists exchange records as ``<dir>/<request_id>.json``."""

    def __init__(self, directory: str | Path | None):
        self.directory = Path(directory) if directory is not None else None

    def write(self, record: ExchangeRecord) -> None:
        if self.directory is None:
            return
        atomic_write(self.directory / f"{record.request_id}.json", dumps(record.to_json()))


class LlmGateway:
    """Sends prompt bundles to one endpoint.

    Thread-safe: share a single instance across workers so the concurrency
    and per-minute limits apply globally.
    """

    def __init__(
        self,
        endpoint: ModelEndpoint,
        *,
        record_dir: str | Path | None = None,
        transport: httpx.BaseTransport | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
        env: Mapping[str, str] | None = None,
    ):
        self.endpoint = endpoint
        self._sink = RecordSink(record_dir)
        self._client = httpx.Client(transport=transport, timeout=endpoint.timeout_s)
        self._slots = threading.BoundedSemaphore(endpoint.max_concurrent)
        self._limiter = RollingWindowLimiter(endpoint.requests_per_minute, clock=clock, sleep=sleep)
        self._clock = clock
        self._sleep = sleep
        self._env = os.environ if env is None else env
        self.network_calls = 0
        self._count_lock = threading.Lock()

    def close(self):
        self._client.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def check_credentials(self) -> None:
        """Fail fast with :class:`AuthError` when the API key variable is unset."""
        self._api_key()

    def _api_key(self) -> str:
        key = self._env.get(self.endpoint.api_key_ref)
        if not key:
            raise AuthError(f"API key variable {self.endpoint.api_key_ref} is not set")
        return key

    def _backoff(self, attempt: int, retry_after: str | None) -> float:
        ep = self.endpoint
        delay = min(ep.backoff_cap_s, ep.backoff_base_s * (2 ** attempt))
        if retry_after:
            try:
                delay = min(ep.backoff_cap_s, max(delay, float(retry_after)))
            except ValueError:
                pass
        return delay

    def complete(self, bundle: PromptBundle, key: str | None = None) -> tuple[str, ExchangeRecord]:
        """Return the assistant text for ``bundle`` and the exchange record.

        Timeouts, 429 and 5xx responses are retried with exponential backoff
        up to ``max_retries`` times; other 4xx responses fail immediately.
        """
        ep = self.endpoint
        api_key = self._api_key()
        body = {
            "model": ep.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            **ep.extra_body,
        }
        headers = {"Authorization": f"Bearer {api_key}", "Content-Type": "application/json"}
        record = ExchangeRecord(
            request_id=request_id_for(bundle, key),
            endpoint=ep.descriptor(),
            prompt_digest=bundle.digest,
            request_body=body,
            response_body=None,
            response_text=None,
            latency_ms=0.0,
            attempt_count=0,
            timestamp=datetime.now(timezone.utc).isoformat(),
            key=key,
        )
        started = self._clock()
        failure: Exception | None = None
        for attempt in range(ep.max_retries + 1):
            self._limiter.acquire()
            retry_after = None
            with self._slots:
                with self._count_lock:
                    self.network_calls += 1
                record.attempt_count += 1
                t0 = self._clock()
                try:
                    resp = self._client.post(ep.url, json=body, headers=headers, timeout=ep.timeout_s)
                except httpx.TimeoutException as exc:
                    record.attempts.append({"status": None, "error": "timeout", "latency_ms": _ms(t0, self._clock())})
                    failure = TimeoutExhausted(f"timed out after {record.attempt_count} attempts: {exc}")
                    resp = None
                except httpx.TransportError as exc:
                    record.attempts.append({"status": None, "error": f"transport: {exc}", "latency_ms": _ms(t0, self._clock())})
                    failure = ProtocolError(None, str(exc)[:200])
                    resp = None
            if resp is not None:
                record.attempts.append({"status": resp.status_code, "error": None, "latency_ms": _ms(t0, self._clock())})
                record.response_body = _body(resp)
                status = resp.status_code
                if status == 200:
                    try:
                        text = resp.json()["choices"][0]["message"]["content"]
                    except (ValueError, KeyError, IndexError, TypeError):
                        failure = ProtocolError(status, resp.text[:200])
                        break
                    if not isinstance(text, str):
                        failure = ProtocolError(status, "assistant content is not text")
                        break
                    record.response_text = text
                    record.latency_ms = _ms(started, self._clock())
                    self._sink.write(record)
                    return text, record
                if status in (401, 403):
                    failure = AuthError(f"HTTP {status}: {resp.text[:200]}")
                    break
                if status not in RETRYABLE_STATUS:
                    failure = ProtocolError(status, resp.text[:200])
                    break
                if status == 429:
                    failure = RateLimitedExhausted(f"HTTP 429 after {record.attempt_count} attempts")
                else:
                    failure = ProtocolError(status, resp.text[:200])
                retry_after = resp.headers.get("retry-after")
            if attempt < ep.max_retries:
                delay = self._backoff(attempt, retry_after)
                logger.info("retrying %s in %.2fs (attempt %d)", record.request_id, delay, attempt + 1)
                self._sleep(delay)

        record.latency_ms = _ms(started, self._clock())
        self._sink.write(record)
        failure.record = record
        raise failure


def _ms(t0: float, t1: float) -> float:
    return round((t1 - t0) * 1000.0, 3)


def _body(resp: httpx.Response):
    try:
        return resp.json()
    except ValueError:
        return resp.text[:2000]


def complete(bundle: PromptBundle, ep: ModelEndpoint, **kwargs) -> tuple[str, ExchangeRecord]:
    """One-shot convenience wrapper around :class:`LlmGateway`."""
    with LlmGateway(ep, **kwargs) as gw:
        return gw.complete(bundle)


class ReplayGateway:
    """Serves responses from stored exchange records; never opens a socket."""

    network_calls = 0

    def __init__(self, records: Mapping[str, ExchangeRecord] | None = None, record_dir: str | Path | None = None):
        self._by_digest = dict(records or {})
        self._sink = RecordSink(record_dir)

    @classmethod
    def from_dir(cls, directory: str | Path, record_dir: str | Path | None = None) -> "ReplayGateway":
        records = {}
        for path in sorted(Path(directory).glob("*.json")):
            rec = ExchangeRecord.from_json(json.loads(path.read_text(encoding="utf-8")))
            if rec.response_text is not None:
                records[rec.prompt_digest] = rec
        return cls(records, record_dir)

    def complete(self, bundle: PromptBundle, key: str | None = None) -> tuple[str, ExchangeRecord]:
        rec = self._by_digest.get(bundle.digest)
        if rec is None:
            raise ReplayMiss(f"no recorded exchange for prompt {bundle.digest[:12]} ({key})")
        self._sink.write(rec)
        return rec.response_text, rec


class FixtureGateway:
    """Serves canned response texts looked up by call key (``<session>/<mode>``)."""

    network_calls = 0

    def __init__(self, fixtures: Mapping[str, str] | Callable[[str], str | None], record_dir=None, model_name="fixture"):
        self._lookup = fixtures.get if isinstance(fixtures, Mapping) else fixtures
        self._sink = RecordSink(record_dir)
        self._model = model_name

    @classmethod
    def from_corpus_dir(cls, corpus_dir: str | Path, record_dir=None) -> "FixtureGateway":
        root = Path(corpus_dir) / "fixtures"

        def lookup(key: str) -> str | None:
            session, name = key.split("/", 1)
            path = root / session / f"{name}.txt"
            return path.read_text(encoding="utf-8") if path.exists() else None

        return cls(lookup, record_dir)

    def complete(self, bundle: PromptBundle, key: str | None = None) -> tuple[str, ExchangeRecord]:
        text = self._lookup(key) if key else None
        if text is None:
            raise ReplayMiss(f"no fixture for {key}")
        rec = ExchangeRecord(
            request_id=request_id_for(bundle, key),
            endpoint={"url": "fixture://", "model": self._model},
            prompt_digest=bundle.digest,
            request_body={
                "messages": [
                    {"role": "system", "content": bundle.system_text},
                    {"role": "user", "content": bundle.user_text},
                ]
            },
            response_body=None,
            response_text=text,
            latency_ms=0.0,
            attempt_count=0,
            timestamp=None,
            key=key,
            replayed=True,
        )
        self._sink.write(rec)
        return text, rec
