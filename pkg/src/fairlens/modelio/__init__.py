"""Model I/O: endpoint descriptors, HTTP clients, the offline simulator, and
the cached image-generation service."""

from .endpoints import (
    EndpointKind,
    ModelEndpoint,
    ChatRequest,
    ChatResult,
    HttpChatClient,
    HttpEmbeddingClient,
    HttpImageClient,
)
from .simulator import SimulatedModelSpec, SimulatedModel, SimulatedGeneration
from .cache import GenerationCache, request_digest
from .generation import GenerationRecord, generate_image

__all__ = [
    "EndpointKind",
    "ModelEndpoint",
    "ChatRequest",
    "ChatResult",
    "HttpChatClient",
    "HttpEmbeddingClient",
    "HttpImageClient",
    "SimulatedModelSpec",
    "SimulatedModel",
    "SimulatedGeneration",
    "GenerationCache",
    "request_digest",
    "GenerationRecord",
    "generate_image",
]
