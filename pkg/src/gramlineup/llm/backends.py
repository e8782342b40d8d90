"""Chat-completion backends: an OpenAI-compatible HTTP client and offline mocks.

Mocks are pure functions of the prompt, so cached transcripts replay exactly:

``mock:echo``
    digest-derived text, no log-probabilities.
``mock:oracle``
    feedback carries a fingerprint of the essay it was written for (and, when
    a correction is supplied, the edit spans); the judge answers "Yes" only
    for the matching pair.
``mock:uniform``
    every probe gets the same yes/no distribution.
``mock:calibrated``
    like the oracle, but on M2 matching the yes-probability halves with each
    unit of difference in edit count.
"""

from __future__ import annotations

import hashlib
import logging
import math
import re
import time
from dataclasses import dataclass
from typing import Any, Callable

import httpx

from gramlineup.corpus import tokenize
from gramlineup.llm.prompts import (
    CORRECTED,
    ESSAY,
    FEEDBACK,
    M2_FILE,
    PromptKind,
    parse_prompt,
)

log = logging.getLogger(__name__)


class GatewayError(RuntimeError):
    """Base class for backend failures."""


class TransportError(GatewayError):
    pass


class AuthError(GatewayError):
    pass


class QuotaError(GatewayError):
    pass


class CapabilityError(GatewayError):
    pass


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    prompt: str
    temperature: float = 0.0
    max_tokens: int = 512
    want_logprobs: bool = False
    top_k_logprobs: int = 20

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not 1 <= self.top_k_logprobs <= 20:
            raise ValueError("top_k_logprobs must lie in [1, 20]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    def cache_payload(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "prompt": self.prompt,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "want_logprobs": self.want_logprobs,
            "top_k_logprobs": self.top_k_logprobs if self.want_logprobs else None,
        }


@dataclass(frozen=True)
class Completion:
    text: str
    # First-token candidates as (token, logprob), most likely first.
    top_logprobs: tuple[tuple[str, float], ...] | None = None

    def to_json(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "top_logprobs": None if self.top_logprobs is None else [list(p) for p in self.top_logprobs],
        }

    @classmethod
    def from_json(cls, obj: dict[str, Any]) -> Completion:
        lp = obj.get("top_logprobs")
        return cls(obj["text"], None if lp is None else tuple((str(t), float(v)) for t, v in lp))


class Backend:
    name = "backend"
    supports_logprobs = True

    def generate(self, req: ChatRequest) -> Completion:
        raise NotImplementedError


# -- OpenAI-compatible HTTP ------------------------------------------------


class OpenAIBackend(Backend):
    """POSTs to ``{base_url}/chat/completions``.

    429 and 5xx responses and transport failures are retried with capped
    exponential backoff; 401/403 fail immediately.
    """

    name = "openai"

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        *,
        supports_logprobs: bool = True,
        timeout: float = 60.0,
        max_retries: int = 4,
        backoff: float = 0.5,
        max_backoff: float = 8.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self.client = httpx.Client(
            base_url=base_url.rstrip("/"), headers=headers, timeout=timeout, transport=transport
        )
        self.supports_logprobs = supports_logprobs
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._sleep = sleep

    def _body(self, req: ChatRequest) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": req.model_id,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.want_logprobs:
            body["logprobs"] = True
            body["top_logprobs"] = req.top_k_logprobs
        return body

    def generate(self, req: ChatRequest) -> Completion:
        body = self._body(req)
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(min(self.max_backoff, self.backoff * 2 ** (attempt - 1)))
            try:
                resp = self.client.post("/chat/completions", json=body)
            except httpx.TransportError as exc:
                last = TransportError(f"{type(exc).__name__}: {exc}")
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            if resp.status_code == 429:
                last = QuotaError(f"HTTP 429: {resp.text[:200]}")
                continue
            if resp.status_code >= 500:
                last = TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
                continue
            if resp.status_code >= 400:
                raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp.json(), req)
        log.warning("giving up after %d attempts: %s", self.max_retries + 1, last)
        assert last is not None
        raise last

    @staticmethod
    def _parse(data: dict[str, Any], req: ChatRequest) -> Completion:
        try:
            choice = data["choices"][0]
            text = choice["message"].get("content") or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload: {exc}") from None
        top = None
        if req.want_logprobs:
            content = (choice.get("logprobs") or {}).get("content") or []
            if content:
                first = content[0]
                cands = first.get("top_logprobs") or [first]
                top = tuple((c["token"], float(c["logprob"])) for c in cands)
            else:
                top = ()
        return Completion(text, top)


# -- mocks -----------------------------------------------------------------


def _digest(text: str, n: int = 16) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:n]


def essay_fingerprint(essay_text: str) -> str:
    return _digest(" ".join(tokenize(essay_text)))


def merged_spans(spans: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Merge touching spans so adjacent annotated edits compare equal to one aligned run."""
    out: list[list[int]] = []
    for s, e in sorted(spans):
        if out and s <= out[-1][1]:
            out[-1][1] = max(out[-1][1], e)
        else:
            out.append([s, e])
    return [(s, e) for s, e in out]


_MARKER_RE = re.compile(r"\[\[oracle essay=(\w+) edits=(\?|\d+) spans=([^\]]*)\]\]")
_A_SPAN_RE = re.compile(r"^A (\d+) (\d+)", re.M)


def oracle_feedback(essay: str, corrected: str | None) -> str:
    fp = essay_fingerprint(essay)
    if corrected is None:
        count, spans_txt = "?", "?"
    else:
        from gramlineup.metrics import extract_edits

        spans = merged_spans([e.span for e in extract_edits(tokenize(essay), tokenize(corrected))])
        count = str(len(spans))
        spans_txt = ",".join(f"{s}-{e}" for s, e in spans)
    return f"Dear learner, here is some feedback on your essay. [[oracle essay={fp} edits={count} spans={spans_txt}]]"


def parse_marker(feedback: str) -> tuple[str, int | None, list[tuple[int, int]] | None] | None:
    m = _MARKER_RE.search(feedback)
    if not m:
        return None
    fp, count, spans = m.groups()
    if count == "?":
        return fp, None, None
    parsed = [tuple(int(x) for x in part.split("-")) for part in spans.split(",") if part]
    return fp, int(count), parsed  # type: ignore[return-value]


def m2_spans(m2_text: str) -> list[tuple[int, int]]:
    return merged_spans([(int(a), int(b)) for a, b in _A_SPAN_RE.findall(m2_text)])


def yes_no(p_yes: float) -> Completion:
    p_yes = min(max(p_yes, 1e-6), 1 - 1e-6)
    pairs = [("Yes", math.log(p_yes)), ("No", math.log(1 - p_yes))]
    pairs.sort(key=lambda p: -p[1])
    return Completion(pairs[0][0], tuple(pairs))


class EchoBackend(Backend):
    name = "mock:echo"
    supports_logprobs = False

    def generate(self, req: ChatRequest) -> Completion:
        return Completion(f"[mock:echo {_digest(req.prompt)}]")


class OracleBackend(Backend):
    name = "mock:oracle"
    hit, miss = 0.9, 0.1

    def generate(self, req: ChatRequest) -> Completion:
        parsed = parse_prompt(req.prompt)
        if parsed is None:
            return Completion(f"[{self.name} unrecognised prompt {_digest(req.prompt)}]")
        kind, slots = parsed
        if kind is PromptKind.GEC:
            return Completion(slots[ESSAY])
        if kind in (PromptKind.GEF_WITH_GEC, PromptKind.GEF_WITH_GEC_100):
            return Completion(oracle_feedback(slots[ESSAY], slots[CORRECTED]))
        if kind is PromptKind.GEF_NO_GEC:
            return Completion(oracle_feedback(slots[ESSAY], None))
        if kind is PromptKind.ESSAY_MATCH:
            return yes_no(self.essay_match(slots[ESSAY], slots[FEEDBACK]))
        return yes_no(self.m2_match(slots[M2_FILE], slots[FEEDBACK]))

    def essay_match(self, essay: str, feedback: str) -> float:
        marker = parse_marker(feedback)
        return self.hit if marker and marker[0] == essay_fingerprint(essay) else self.miss

    def m2_match(self, m2_text: str, feedback: str) -> float:
        marker = parse_marker(feedback)
        if not marker or marker[2] is None:
            return self.miss
        return self.hit if marker[2] == m2_spans(m2_text) else self.miss


class CalibratedBackend(OracleBackend):
    name = "mock:calibrated"

    def m2_match(self, m2_text: str, feedback: str) -> float:
        marker = parse_marker(feedback)
        if not marker or marker[1] is None:
            return self.miss
        return self.hit * 0.5 ** abs(len(m2_spans(m2_text)) - marker[1])


class UniformBackend(Backend):
    name = "mock:uniform"

    def generate(self, req: ChatRequest) -> Completion:
        parsed = parse_prompt(req.prompt)
        if parsed and parsed[0] in (PromptKind.ESSAY_MATCH, PromptKind.FEEDBACK_MATCH):
            return yes_no(0.5)
        if parsed and parsed[0] is PromptKind.GEC:
            return Completion(parsed[1][ESSAY])
        return Completion(f"Dear learner, [mock:uniform {_digest(req.prompt)}]")


MOCKS: dict[str, type[Backend]] = {
    "mock:echo": EchoBackend,
    "mock:oracle": OracleBackend,
    "mock:uniform": UniformBackend,
    "mock:calibrated": CalibratedBackend,
}
