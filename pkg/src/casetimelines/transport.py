"""Chat-completion transports: HTTP client, recorded fixtures, on-disk cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import requests

from .errors import (AuthError, RequestTimeout, TemperatureRejected, TransientTransportError,
                     TransportError)

logger = logging.getLogger(__name__)

API_KEY_ENV = "CASETIMELINES_LLM_API_KEY"
ENDPOINT_ENV = "CASETIMELINES_LLM_ENDPOINT"
DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class ChatTransport(Protocol):
    def complete(self, prompt: str, model: str, temperature: float, timeout: float) -> str:
        ...


class RateLimiter:
    """Minimum spacing between requests, shared across threads."""

    def __init__(self, requests_per_minute: float | None = None):
        self.interval = 60.0 / requests_per_minute if requests_per_minute else 0.0
        self._lock = threading.Lock()
        self._next = 0.0

    def wait(self) -> None:
        if not self.interval:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._next - now
            self._next = max(now, self._next) + self.interval
        if delay > 0:
            time.sleep(delay)


class HttpChatTransport:
    """POSTs ``{model, messages, temperature}`` to an OpenAI-style endpoint.

    The API key is read from the environment only and never logged.
    """

    def __init__(self, endpoint_url: str | None = None, api_key: str | None = None,
                 session: requests.Session | None = None,
                 rate_limiter: RateLimiter | None = None):
        self.endpoint_url = endpoint_url or os.environ.get(ENDPOINT_ENV) or DEFAULT_ENDPOINT
        self._api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.session = session or requests.Session()
        self.rate_limiter = rate_limiter or RateLimiter()

    def complete(self, prompt: str, model: str, temperature: float, timeout: float) -> str:
        if not self._api_key:
            raise AuthError(f"no API key; set {API_KEY_ENV}")
        payload = {
            "model": model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": temperature,
        }
        headers = {"Authorization": f"Bearer {self._api_key}"}
        self.rate_limiter.wait()
        try:
            resp = self.session.post(self.endpoint_url, json=payload, headers=headers,
                                     timeout=timeout)
        except requests.Timeout as exc:
            raise RequestTimeout(f"request timed out after {timeout}s") from exc
        except requests.RequestException as exc:
            raise TransientTransportError(f"connection failed: {type(exc).__name__}") from exc

        if resp.status_code in (401, 403):
            raise AuthError(f"endpoint refused credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientTransportError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            body = resp.text[:500]
            if "temperature" in body.lower():
                raise TemperatureRejected(f"HTTP {resp.status_code}: {body}")
            raise TransportError(f"HTTP {resp.status_code}: {body}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError("unexpected response shape") from exc


@dataclass(frozen=True)
class FixtureRule:
    contains: str
    response: str
    source: str = ""


class FixtureTransport:
    """Offline transport replaying canned responses.

    Lookup order: exact prompt digest (recorded exchanges, i.e. cache
    documents), then the first substring rule found in the prompt.
    """

    def __init__(self, by_digest: dict[str, str] | None = None,
                 rules: list[FixtureRule] | None = None):
        self.by_digest = dict(by_digest or {})
        self.rules = list(rules or [])
        self.calls: list[str] = []
        self._lock = threading.Lock()

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "FixtureTransport":
        return cls(by_digest={sha256_text(p): r for p, r in mapping.items()})

    @classmethod
    def from_dir(cls, path: str | os.PathLike | None) -> "FixtureTransport":
        """Load ``*.json`` fixtures: either ``{"contains", "response"}`` rules
        or recorded exchanges with ``request_text``/``response_text``."""
        t = cls()
        if path is None or not Path(path).is_dir():
            return t
        for f in sorted(Path(path).rglob("*.json")):
            doc = json.loads(f.read_text(encoding="utf-8"))
            if "request_text" in doc and "response_text" in doc:
                t.by_digest[sha256_text(doc["request_text"])] = doc["response_text"]
            elif "contains" in doc and "response" in doc:
                t.rules.append(FixtureRule(doc["contains"], doc["response"], str(f)))
            else:
                logger.warning("ignoring fixture %s: unknown shape", f)
        return t

    def complete(self, prompt: str, model: str, temperature: float, timeout: float) -> str:
        with self._lock:
            self.calls.append(prompt)
        hit = self.by_digest.get(sha256_text(prompt))
        if hit is not None:
            return hit
        for rule in self.rules:
            if rule.contains in prompt:
                return rule.response
        raise TransportError("no fixture response for prompt "
                             f"{sha256_text(prompt)[:12]} (offline mode)")


class ExchangeCache:
    """One JSON document per exchange, keyed by
    (report_id, model, strategy, round, prompt digest). Writes are atomic
    renames under a lock; reads need no lock."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        self._lock = threading.Lock()

    @staticmethod
    def key(report_id: str, model: str, strategy: str, round_index: int, prompt: str) -> str:
        return sha256_text(json.dumps([report_id, model, strategy, round_index,
                                       sha256_text(prompt)]))

    def path_for(self, report_id: str, key: str) -> Path:
        return self.root / report_id / f"{key}.json"

    def get(self, report_id: str, model: str, strategy: str, round_index: int,
            prompt: str) -> dict | None:
        p = self.path_for(report_id, self.key(report_id, model, strategy, round_index, prompt))
        if not p.exists():
            return None
        doc = json.loads(p.read_text(encoding="utf-8"))
        if doc.get("request_text") != prompt:
            return None
        return doc

    def put(self, doc: dict) -> Path:
        key = self.key(doc["report_id"], doc["model"], doc["strategy"], doc["round_index"],
                       doc["request_text"])
        p = self.path_for(doc["report_id"], key)
        with self._lock:
            p.parent.mkdir(parents=True, exist_ok=True)
            tmp = p.with_suffix(f".tmp{threading.get_ident()}")
            tmp.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
            os.replace(tmp, p)
        return p
