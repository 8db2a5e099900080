"""OpenAI-compatible chat-completions client with retries and key redaction."""
from __future__ import annotations

import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import httpx

log = logging.getLogger(__name__)


class LLMError(RuntimeError):
    pass


class Timeout(LLMError):
    pass


class AuthError(LLMError):
    pass


class TransportError(LLMError):
    pass


class RateLimited(LLMError):
    pass


@dataclass
class PolicyConfig:
    kind: str = "stub"
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str = "LLM_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    temperature: float = 0.7
    seed: int | None = 0
    backoff: float = 0.5
    max_in_flight: int = 4
    template_dir: str | None = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("stub", "remote"):
            raise ValueError(f"policy kind must be stub or remote, not {self.kind!r}")
        if self.kind == "remote" and not (self.endpoint and self.model):
            raise ValueError("remote policy requires endpoint and model")
        if self.kind == "stub" and self.seed is None:
            raise ValueError("stub policy requires a seed")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items()}


def redact(text: str, secret: str | None) -> str:
    if secret:
        text = text.replace(secret, "[REDACTED]")
    return text


def _url(endpoint: str) -> str:
    endpoint = endpoint.rstrip("/")
    return endpoint if endpoint.endswith("/chat/completions") else endpoint + "/chat/completions"


class ChatClient:
    """Thread-safe client; concurrency bounded by ``max_in_flight``."""

    def __init__(self, config: PolicyConfig, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(max(1, config.max_in_flight))
        self._http = httpx.Client(transport=transport, timeout=config.timeout)

    def close(self) -> None:
        self._http.close()

    def complete(self, messages: Sequence[dict]) -> str:
        key = os.environ.get(self.config.api_key_env)
        if not key:
            raise AuthError(f"environment variable {self.config.api_key_env} is not set")
        body = {"model": self.config.model, "messages": list(messages),
                "temperature": self.config.temperature}
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}
        url = _url(self.config.endpoint)
        last: LLMError | None = None
        with self._slots:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    self._sleep(self.config.backoff * 2 ** (attempt - 1))
                log.debug("POST %s model=%s attempt=%d", url, self.config.model, attempt)
                try:
                    resp = self._http.post(url, json=body, headers=headers)
                except httpx.TimeoutException as exc:
                    last = Timeout(redact(f"request timed out: {exc}", key))
                    continue
                except httpx.TransportError as exc:
                    last = TransportError(redact(f"transport failure: {exc}", key))
                    continue
                status = resp.status_code
                if status in (401, 403):
                    raise AuthError(f"credentials rejected (HTTP {status})")
                if status == 429:
                    last = RateLimited("rate limited (HTTP 429)")
                    continue
                if status >= 500:
                    last = TransportError(f"server error (HTTP {status})")
                    continue
                if status >= 400:
                    raise TransportError(redact(f"HTTP {status}: {resp.text[:200]}", key))
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise TransportError(f"unexpected response shape: {exc}") from None
                log.debug("response %d chars", len(content or ""))
                return content or ""
        assert last is not None
        log.warning("giving up after %d attempts: %s", self.config.max_retries + 1, last)
        raise last


def llm_complete(prompt: str | Sequence[dict], config: PolicyConfig,
                 client: ChatClient | None = None) -> str:
    if config.kind != "remote":
        raise ValueError("llm_complete needs a remote policy config")
    messages = [{"role": "user", "content": prompt}] if isinstance(prompt, str) else prompt
    own = client is None
    client = client or ChatClient(config)
    try:
        return client.complete(messages)
    finally:
        if own:
            client.close()
