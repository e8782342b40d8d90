"""Cached, rate-limited access to chat-completion backends."""

from __future__ import annotations

import json
import math
import os
import string
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from gramlineup.llm.backends import (
    MOCKS,
    Backend,
    CapabilityError,
    ChatRequest,
    Completion,
    OpenAIBackend,
    TransportError,
)
from gramlineup.llm.cache import ResponseCache, request_digest

API_KEY_ENV = "GRAMLINEUP_API_KEY"
BASE_URL_ENV = "GRAMLINEUP_BASE_URL"

_STRIP = string.whitespace + string.punctuation + "▁Ġ"  # sentencepiece / BPE space markers


@dataclass(frozen=True)
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    api_key: str | None = None
    supports_logprobs: bool = True
    timeout: float = 60.0
    max_retries: int = 4

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict[str, str] | None = None) -> EndpointConfig:
        """Read ``{"base_url", "api_key", ...}`` from JSON; environment variables win."""
        env = os.environ if env is None else env
        data: dict[str, Any] = {}
        if path:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        if env.get(BASE_URL_ENV):
            data["base_url"] = env[BASE_URL_ENV]
        key = env.get(API_KEY_ENV) or env.get("OPENAI_API_KEY")
        if key:
            data["api_key"] = key
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass(frozen=True)
class YesProbe:
    p_yes: float
    p_no: float
    first_token: str
    fallback: bool

    @property
    def p_yes_normalized(self) -> float:
        total = self.p_yes + self.p_no
        return self.p_yes / total if total else 0.0


def fold_token(token: str) -> str:
    return token.strip(_STRIP).casefold()


def yes_probe(top_logprobs: tuple[tuple[str, float], ...]) -> YesProbe:
    """Sum first-token probability over case/space/punctuation variants of yes and no."""
    p_yes = p_no = 0.0
    seen = False
    for tok, lp in top_logprobs:
        folded = fold_token(tok)
        if folded == "yes":
            p_yes += math.exp(lp)
            seen = True
        elif folded == "no":
            p_no += math.exp(lp)
            seen = True
    total = p_yes + p_no
    if total > 1.0:
        # Rounded log-probabilities can overshoot slightly.
        p_yes, p_no = p_yes / total, p_no / total
    first = top_logprobs[0][0] if top_logprobs else ""
    return YesProbe(p_yes, p_no, first, fallback=not seen)


class Gateway:
    """Routes requests to backends by model reference and caches every response.

    Model references starting with ``mock:`` select an offline mock; anything
    else is a model id on the configured HTTP endpoint. With ``offline=True``
    a cache miss raises :class:`TransportError` instead of calling out.
    """

    def __init__(
        self,
        cache: ResponseCache | None = None,
        endpoint: EndpointConfig | None = None,
        *,
        max_in_flight: int = 8,
        offline: bool = False,
        backends: dict[str, Backend] | None = None,
    ) -> None:
        self.cache = cache if cache is not None else ResponseCache()
        self.endpoint = endpoint
        self.offline = offline
        self.max_in_flight = max_in_flight
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._backends: dict[str, Backend] = dict(backends or {})
        self._lock = threading.Lock()
        self.calls = 0

    def backend(self, model_ref: str) -> Backend:
        key = model_ref if model_ref.startswith("mock:") else "http"
        with self._lock:
            if key not in self._backends:
                if key in MOCKS:
                    self._backends[key] = MOCKS[key]()
                elif key.startswith("mock:"):
                    raise ValueError(f"unknown mock backend {model_ref!r}")
                else:
                    ep = self.endpoint or EndpointConfig.load()
                    self._backends[key] = OpenAIBackend(
                        ep.base_url,
                        ep.api_key,
                        supports_logprobs=ep.supports_logprobs,
                        timeout=ep.timeout,
                        max_retries=ep.max_retries,
                    )
            return self._backends[key]

    def generate(self, req: ChatRequest) -> Completion:
        backend = self.backend(req.model_id)
        if req.want_logprobs and not backend.supports_logprobs:
            raise CapabilityError(f"{req.model_id} does not return log-probabilities")
        key = request_digest(req.cache_payload())
        cached = self.cache.get(key)
        if cached is not None:
            return Completion.from_json(cached)
        if self.offline:
            raise TransportError(f"offline and no cached response for {req.model_id} request {key[:12]}")
        with self._slots:
            completion = backend.generate(req)
        with self._lock:
            self.calls += 1
        self.cache.put(key, completion.to_json(), {"model_id": req.model_id})
        return completion

    def complete(self, req: ChatRequest) -> str:
        return self.generate(req).text

    def probe_yes(self, prompt: str, model_ref: str, top_k: int = 20) -> YesProbe:
        req = ChatRequest(model_ref, prompt, temperature=0.0, max_tokens=1, want_logprobs=True, top_k_logprobs=top_k)
        completion = self.generate(req)
        if not completion.top_logprobs:
            return YesProbe(0.0, 0.0, completion.text, fallback=True)
        return yes_probe(completion.top_logprobs)
