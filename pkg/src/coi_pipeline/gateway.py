"""Chat-completion gateway with caching, retry, rate limiting, and a mock.

Every pipeline stage talks to an LLM through this module so the whole
toolchain runs offline against canned responses. The gateway instance may be
shared across worker threads; the rate limiter and cache serialize conflicting
access internally.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, ThrottledError, TransportError

logger = logging.getLogger(__name__)

API_KEY_ENV = "COI_API_KEY"


@dataclass(frozen=True)
class LlmRequest:
    model_id: str
    prompt: str
    max_tokens: int = 1024
    temperature: float = 0.0
    stop_sequences: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")


@dataclass
class LlmResponse:
    text: str
    cached: bool = False
    latency_ms: int | None = None
    attempts: int = 1


@dataclass(frozen=True)
class CacheKey:
    digest: str

    @classmethod
    def from_request(cls, request: LlmRequest) -> "CacheKey":
        payload = json.dumps(
            {
                "model_id": request.model_id,
                "prompt": request.prompt,
                "max_tokens": request.max_tokens,
                "temperature": request.temperature,
                "stop_sequences": list(request.stop_sequences or []),
            },
            sort_keys=True,
            ensure_ascii=False,
        )
        return cls(hashlib.sha256(payload.encode("utf-8")).hexdigest())


def prompt_digest(prompt: str) -> str:
    """Digest used by canned-table files that key on hashed prompts."""
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockProvider:
    """Deterministic provider backed by a canned response table.

    Lookup order for a prompt: exact match, prompt digest, first matching
    `contains` rule, then the default response. A table value may be a list,
    consumed one element per call (the last element repeats once exhausted),
    which lets tests script retry sequences. `fail_times` injects transient
    failures before the first success.
    """

    def __init__(
        self,
        table: dict[str, str | list[str]] | None = None,
        *,
        digests: dict[str, str | list[str]] | None = None,
        rules: list[dict] | None = None,
        default: str | list[str] | None = None,
        fail_times: int = 0,
        failure: type[Exception] = TransportError,
    ) -> None:
        self._table = dict(table or {})
        self._digests = dict(digests or {})
        self._rules = list(rules or [])
        self._default = default
        self._fail_remaining = fail_times
        self._failure = failure
        self._lock = threading.Lock()
        self._sequence_positions: dict[int, int] = {}
        self.call_count = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "MockProvider":
        """Load a canned table from JSON.

        Either a flat {prompt: response} object, or a structured object with
        any of the keys "exact", "digest", "rules", "default".
        """
        with Path(path).open("r", encoding="utf-8") as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise ConfigurationError(f"mock table {path} must be a JSON object")
        structured = {"exact", "digest", "rules", "default"} & set(data)
        if structured:
            return cls(
                table=data.get("exact"),
                digests=data.get("digest"),
                rules=data.get("rules"),
                default=data.get("default"),
            )
        return cls(table=data)

    def _next_in_sequence(self, value: str | list[str]) -> str:
        if isinstance(value, str):
            return value
        key = id(value)
        pos = self._sequence_positions.get(key, 0)
        self._sequence_positions[key] = pos + 1
        return value[min(pos, len(value) - 1)]

    def _lookup(self, prompt: str) -> str | list[str] | None:
        if prompt in self._table:
            return self._table[prompt]
        digest = prompt_digest(prompt)
        if digest in self._digests:
            return self._digests[digest]
        for rule in self._rules:
            needles = rule.get("contains", [])
            if isinstance(needles, str):
                needles = [needles]
            if needles and all(needle in prompt for needle in needles):
                return rule.get("response", "")
        return self._default

    def complete(self, request: LlmRequest) -> str:
        with self._lock:
            self.call_count += 1
            if self._fail_remaining > 0:
                self._fail_remaining -= 1
                raise self._failure("injected mock failure")
            value = self._lookup(request.prompt)
            if value is None:
                head = request.prompt[:120].replace("\n", " ")
                raise ConfigurationError(f"mock provider has no canned response for: {head!r}")
            return self._next_in_sequence(value)


class RemoteProvider:
    """OpenAI-style chat-completions provider over HTTPS.

    The API key comes from the COI_API_KEY environment variable and is
    checked before any network traffic.
    """

    def __init__(self, api_base: str = "https://api.openai.com/v1", timeout: float = 60.0) -> None:
        self.api_base = api_base.rstrip("/")
        self.timeout = timeout

    def complete(self, request: LlmRequest) -> str:
        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise ConfigurationError(
                f"remote provider requires the {API_KEY_ENV} environment variable"
            )
        import requests

        payload: dict = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "max_tokens": request.max_tokens,
            "temperature": request.temperature,
        }
        if request.stop_sequences:
            payload["stop"] = list(request.stop_sequences)
        try:
            response = requests.post(
                f"{self.api_base}/chat/completions",
                headers={"Authorization": f"Bearer {api_key}"},
                json=payload,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if response.status_code in (401, 403):
            raise ConfigurationError(f"authentication failed ({response.status_code})")
        if response.status_code == 429:
            raise ThrottledError("provider rate limit (429)")
        if response.status_code >= 500:
            raise TransportError(f"server error ({response.status_code})")
        if response.status_code >= 400:
            raise ConfigurationError(
                f"API error {response.status_code}: {response.text[:200]}"
            )
        try:
            data = response.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise TransportError(f"malformed provider response: {exc}") from exc
        return text if isinstance(text, str) else ""


class RateLimiter:
    """Sliding-window requests-per-minute limiter, safe for concurrent use."""

    def __init__(
        self,
        requests_per_minute: int | None,
        clock=time.monotonic,
        sleep=time.sleep,
    ) -> None:
        if requests_per_minute is not None and requests_per_minute < 1:
            raise ValueError("requests_per_minute must be >= 1 when set")
        self.requests_per_minute = requests_per_minute
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        if self.requests_per_minute is None:
            return
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.requests_per_minute:
                    self._stamps.append(now)
                    return
                wait = 60.0 - (now - self._stamps[0])
            self._sleep(max(wait, 0.0))


class Gateway:
    """Blocking request/response front door to a provider.

    Transient failures (throttling, transport) are retried with exponential
    backoff up to `retry_limit` total attempts; configuration errors are
    raised immediately.
    """

    def __init__(
        self,
        provider,
        *,
        retry_limit: int = 3,
        requests_per_minute: int | None = None,
        cache_dir: str | Path | None = None,
        backoff_base: float = 0.5,
        sleep=time.sleep,
    ) -> None:
        if retry_limit < 1:
            raise ValueError("retry_limit must be >= 1")
        self.provider = provider
        self.retry_limit = retry_limit
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._limiter = RateLimiter(requests_per_minute)
        self._cache_lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        last_error: Exception | None = None
        for attempt in range(1, self.retry_limit + 1):
            self._limiter.acquire()
            start = time.monotonic()
            try:
                text = self.provider.complete(request)
            except ConfigurationError:
                raise
            except (ThrottledError, TransportError) as exc:
                last_error = exc
                if attempt < self.retry_limit:
                    delay = self.backoff_base * (2 ** (attempt - 1))
                    logger.warning(
                        "attempt %d/%d failed (%s); retrying in %.2fs",
                        attempt, self.retry_limit, exc, delay,
                    )
                    self._sleep(delay)
                continue
            latency_ms = int((time.monotonic() - start) * 1000)
            return LlmResponse(text=text, cached=False, latency_ms=latency_ms, attempts=attempt)
        assert last_error is not None
        raise last_error

    def cached_complete(self, request: LlmRequest, cache_dir: str | Path | None = None) -> LlmResponse:
        """Serve from the content-addressed cache, completing on a miss.

        Corrupt cache entries are ignored, recomputed, and rewritten. When no
        cache directory is configured this degrades to a plain complete().
        """
        directory = Path(cache_dir) if cache_dir is not None else self.cache_dir
        if directory is None:
            return self.complete(request)
        key = CacheKey.from_request(request)
        path = directory / f"{key.digest}.json"
        if path.exists():
            try:
                entry = json.loads(path.read_text(encoding="utf-8"))
                text = entry["text"]
                if isinstance(text, str):
                    return LlmResponse(text=text, cached=True, attempts=0)
            except (ValueError, KeyError, OSError):
                logger.warning("ignoring corrupt cache entry %s", path)
        response = self.complete(request)
        self._write_cache(directory, path, response.text)
        return response

    def _write_cache(self, directory: Path, path: Path, text: str) -> None:
        with self._cache_lock:
            directory.mkdir(parents=True, exist_ok=True)
            fd, tmp_name = tempfile.mkstemp(dir=directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    json.dump({"text": text}, handle, ensure_ascii=False)
                os.replace(tmp_name, path)
            except BaseException:
                if os.path.exists(tmp_name):
                    os.unlink(tmp_name)
                raise
