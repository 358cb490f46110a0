"""Chat-completion client with a content-addressed record/replay cache.

Every completion is keyed by a hash of (model name, sampling params, prompt
text) and stored as one JSON file under ``cache_dir/<first two hex>/<key>.json``.
Modes:

- ``live``    — read-through cache; on a miss, call the API and record.
- ``record``  — same behavior; the intent-revealing alias for capturing
  fixtures.
- ``replay``  — cache only; a miss raises ReplayMissError naming the key, so
  a replayed experiment can never silently hit the network.

Cached responses are immutable: a key is written at most once and later
identical calls are served from disk.  Stub clients route completions to
canned responses for offline tests.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .prompts import RenderedPrompt

logger = logging.getLogger(__name__)

API_KEY_ENV = "EAPMT_API_KEY"
API_BASE_ENV = "EAPMT_API_BASE"
DEFAULT_API_BASE = "https://api.openai.com/v1"

MODES = ("live", "replay", "record")


class ClientError(RuntimeError):
    """Base class for completion client failures."""


class ReplayMissError(ClientError):
    """A replay-mode completion had no cached record."""

    def __init__(self, cache_key: str, model: str, prompt: str) -> None:
        head = prompt.splitlines()[0][:80] if prompt else ""
        super().__init__(
            f"replay cache miss for key {cache_key} "
            f"(model={model!r}, prompt starts {head!r})"
        )
        self.cache_key = cache_key


class TransportError(ClientError):
    """A retryable API failure (network error, 429, 5xx)."""


class StubError(ClientError):
    """A stubbed client saw a prompt its behavior table does not cover."""


@dataclass(frozen=True)
class ModelSpec:
    """A model endpoint plus the sampling params that identify a call."""

    name: str
    endpoint: str | None = None
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int | None = None
    request_timeout: float = 120.0

    @property
    def params(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class CompletionRecord:
    """One cached completion, exactly as stored on disk."""

    cache_key: str
    model: str
    params: Mapping[str, object]
    prompt: str
    response: str
    timestamp: str
    token_usage: Mapping[str, int] | None = None

    def to_json(self) -> dict:
        return {
            "cache_key": self.cache_key,
            "model": self.model,
            "params": dict(self.params),
            "prompt": self.prompt,
            "response": self.response,
            "timestamp": self.timestamp,
            "token_usage": dict(self.token_usage) if self.token_usage else None,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CompletionRecord":
        return cls(
            cache_key=obj["cache_key"],
            model=obj["model"],
            params=obj["params"],
            prompt=obj["prompt"],
            response=obj["response"],
            timestamp=obj["timestamp"],
            token_usage=obj.get("token_usage"),
        )


def cache_key(spec: ModelSpec, prompt: str) -> str:
    """Content address of a completion: model name, params, prompt text."""
    payload = json.dumps(
        {"model": spec.name, "params": spec.params, "prompt": prompt},
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


# ── transports ───────────────────────────────────────────────────────


class HttpTransport:
    """OpenAI-compatible chat-completions endpoint over HTTPS."""

    def __init__(self, api_key: str | None = None, api_base: str | None = None):
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.api_base = (
            api_base
            if api_base is not None
            else os.environ.get(API_BASE_ENV, DEFAULT_API_BASE)
        )

    def send(self, spec: ModelSpec, prompt: str) -> tuple[str, dict | None]:
        import requests

        base = (spec.endpoint or self.api_base).rstrip("/")
        url = f"{base}/chat/completions"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        body: dict = {
            "model": spec.name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": spec.temperature,
            "top_p": spec.top_p,
        }
        if spec.max_tokens is not None:
            body["max_tokens"] = spec.max_tokens
        try:
            response = requests.post(
                url, json=body, headers=headers, timeout=spec.request_timeout
            )
        except requests.RequestException as exc:
            raise TransportError(f"request to {url} failed: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(
                f"{url} returned {response.status_code}: {response.text[:200]}"
            )
        if response.status_code != 200:
            # 4xx other than 429 is a caller bug; retrying will not help
            raise ClientError(
                f"{url} returned {response.status_code}: {response.text[:200]}"
            )
        payload = response.json()
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ClientError(f"malformed completion payload from {url}") from exc
        return text, payload.get("usage")


class StubTransport:
    """Routes prompts to canned responses by regex; records every call.

    Behavior keys are regex patterns matched with ``search``; values are
    either response strings or callables taking the prompt.  Exactly one
    pattern must match each prompt: zero matches and overlapping matches are
    both errors, so stub-driven tests cannot pass by accident.
    """

    def __init__(self, behavior: Mapping[str, str | Callable[[str], str]]):
        self._rules = [
            (pattern, re.compile(pattern, re.DOTALL), response)
            for pattern, response in behavior.items()
        ]
        self.calls: list[tuple[str, str]] = []
        self._lock = threading.Lock()

    def send(self, spec: ModelSpec, prompt: str) -> tuple[str, dict | None]:
        with self._lock:
            self.calls.append((spec.name, prompt))
        matches = [
            (pattern, response)
            for pattern, compiled, response in self._rules
            if compiled.search(prompt)
        ]
        if not matches:
            head = prompt.splitlines()[0][:80] if prompt else ""
            raise StubError(f"no stub behavior matches prompt starting {head!r}")
        if len(matches) > 1:
            raise StubError(
                f"stub patterns overlap on one prompt: "
                f"{[pattern for pattern, _ in matches]}"
            )
        _, response = matches[0]
        text = response(prompt) if callable(response) else response
        return text, None


# ── client ───────────────────────────────────────────────────────────


class LLMClient:
    """Completion front end: cache, retries, and bounded parallelism."""

    def __init__(
        self,
        cache_dir: str | Path | None = None,
        mode: str = "live",
        transport=None,
        max_parallel: int = 4,
        max_attempts: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        api_key: str | None = None,
        api_base: str | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        if mode == "replay" and cache_dir is None:
            raise ValueError("replay mode requires a cache_dir")
        if max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.mode = mode
        self.transport = transport or HttpTransport(api_key=api_key, api_base=api_base)
        self.max_parallel = max_parallel
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self._sleep = sleep
        self._write_lock = threading.Lock()

    # ── cache plumbing ──

    def _record_path(self, key: str) -> Path:
        assert self.cache_dir is not None
        return self.cache_dir / key[:2] / f"{key}.json"

    def cached_record(self, spec: ModelSpec, prompt: str | RenderedPrompt) -> CompletionRecord | None:
        """The stored record for this call, if any."""
        if self.cache_dir is None:
            return None
        text = prompt.text if isinstance(prompt, RenderedPrompt) else prompt
        path = self._record_path(cache_key(spec, text))
        if not path.exists():
            return None
        with path.open(encoding="utf-8") as handle:
            return CompletionRecord.from_json(json.load(handle))

    def _write_record(self, record: CompletionRecord) -> None:
        path = self._record_path(record.cache_key)
        with self._write_lock:
            if path.exists():
                return  # first write wins; records are immutable
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".json.tmp")
            tmp.write_text(
                json.dumps(record.to_json(), ensure_ascii=False, indent=2),
                encoding="utf-8",
            )
            os.replace(tmp, path)

    # ── completion ──

    def _call_with_retries(self, spec: ModelSpec, prompt: str) -> tuple[str, dict | None]:
        delay = self.backoff_base
        for attempt in range(1, self.max_attempts + 1):
            try:
                return self.transport.send(spec, prompt)
            except TransportError as exc:
                if attempt == self.max_attempts:
                    raise
                logger.warning(
                    "attempt %d/%d failed (%s); retrying in %.1fs",
                    attempt,
                    self.max_attempts,
                    exc,
                    delay,
                )
                self._sleep(delay)
                delay = min(delay * 2, self.backoff_cap)
        raise AssertionError("unreachable")

    def complete(self, spec: ModelSpec, prompt: str | RenderedPrompt) -> str:
        """Return the completion text for one prompt under the active mode."""
        text = prompt.text if isinstance(prompt, RenderedPrompt) else prompt
        key = cache_key(spec, text)

        if self.cache_dir is not None:
            cached = self.cached_record(spec, text)
            if cached is not None:
                return cached.response
        if self.mode == "replay":
            raise ReplayMissError(key, spec.name, text)

        response, usage = self._call_with_retries(spec, text)
        if self.cache_dir is not None:
            self._write_record(
                CompletionRecord(
                    cache_key=key,
                    model=spec.name,
                    params=spec.params,
                    prompt=text,
                    response=response,
                    timestamp=datetime.now(timezone.utc).isoformat(),
                    token_usage=usage,
                )
            )
        return response

    def complete_many(
        self,
        spec: ModelSpec,
        prompts: Sequence[str | RenderedPrompt],
    ) -> list[str]:
        """Complete prompts concurrently (bounded), preserving order."""
        if not prompts:
            return []
        workers = min(self.max_parallel, len(prompts))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(lambda p: self.complete(spec, p), prompts))


def make_stub(
    behavior: Mapping[str, str | Callable[[str], str]],
    cache_dir: str | Path | None = None,
) -> LLMClient:
    """A live-mode client whose transport serves canned responses.

    The transport is exposed as ``client.transport`` so tests can inspect
    ``transport.calls`` (the (model, prompt) sequence actually sent).
    """
    return LLMClient(cache_dir=cache_dir, mode="live", transport=StubTransport(behavior))
