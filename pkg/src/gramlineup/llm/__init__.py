"""LLM access: prompt catalog, backends, response cache and yes-probability probes."""

from gramlineup.llm.backends import (
    AuthError,
    Backend,
    CapabilityError,
    ChatRequest,
    Completion,
    GatewayError,
    OpenAIBackend,
    QuotaError,
    TransportError,
)
from gramlineup.llm.cache import ResponseCache
from gramlineup.llm.gateway import EndpointConfig, Gateway, YesProbe, yes_probe
from gramlineup.llm.prompts import MissingSlot, PromptKind, render_prompt

__all__ = [
    "AuthError",
    "Backend",
    "CapabilityError",
    "ChatRequest",
    "Completion",
    "EndpointConfig",
    "Gateway",
    "GatewayError",
    "MissingSlot",
    "OpenAIBackend",
    "PromptKind",
    "QuotaError",
    "ResponseCache",
    "TransportError",
    "YesProbe",
    "render_prompt",
    "yes_probe",
]
