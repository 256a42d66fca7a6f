"""Endpoint descriptors and HTTP clients for OpenAI-compatible services.

Three wire shapes are used: /chat/completions for chat (and the LVLM judge),
/embeddings for text embeddings, and /images/generations for image synthesis.
The image route carries the audit's system prompt in a "system_prompt"
extension field. Transient failures (connection errors, 429, 5xx) retry with
exponential backoff; anything derived from a response is independent of how
many retries it took.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import os
import time
import urllib.parse
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import httpx
import numpy as np

from ..errors import EmbeddingShapeError, EndpointError, LogprobsUnsupported

log = logging.getLogger(__name__)

_RETRY_STATUS = {429, 500, 502, 503, 504}


class EndpointKind(str, Enum):
    CHAT = "chat"
    EMBEDDING = "embedding"
    IMAGE = "image"


@dataclass(frozen=True)
class ModelEndpoint:
    """Connection details for one OpenAI-compatible service."""

    kind: EndpointKind
    base_url: str
    model_name: str
    auth_token_env: str = ""
    timeout: float = 60.0
    max_retries: int = 2

    def __post_init__(self):
        object.__setattr__(self, "kind", EndpointKind(self.kind))
        parsed = urllib.parse.urlparse(self.base_url)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"base_url must be an absolute http(s) URL: {self.base_url!r}")
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def identity(self) -> str:
        """Stable identity used in cache keys (never includes the token)."""
        return f"{self.kind.value}:{self.base_url.rstrip('/')}:{self.model_name}"

    def auth_token(self) -> str | None:
        if not self.auth_token_env:
            return None
        return os.environ.get(self.auth_token_env)


@dataclass(frozen=True)
class ChatRequest:
    user_prompt: str
    system_prompt: str | None = None
    temperature: float = 0.0
    seed: int | None = None
    top_logprobs: int | None = None

    def __post_init__(self):
        if not self.user_prompt:
            raise ValueError("user_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.top_logprobs is not None and not 1 <= self.top_logprobs <= 20:
            raise ValueError("top_logprobs must be in [1, 20]")

    def messages(self) -> list[dict]:
        """Chat messages; no system message is sent when system_prompt is None."""
        msgs = []
        if self.system_prompt is not None:
            msgs.append({"role": "system", "content": self.system_prompt})
        msgs.append({"role": "user", "content": self.user_prompt})
        return msgs


@dataclass(frozen=True)
class ChatResult:
    text: str
    token_logprobs: dict[str, float] | None = None


class _HttpBase:
    def __init__(self, endpoint: ModelEndpoint, client: httpx.Client | None = None,
                 backoff_base: float = 0.5):
        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=endpoint.timeout)
        self._backoff_base = backoff_base

    @property
    def identity(self) -> str:
        return self.endpoint.identity

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = self.endpoint.auth_token()
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def _post(self, path: str, payload: dict) -> dict:
        url = f"{self.endpoint.base_url.rstrip('/')}{path}"
        attempts = self.endpoint.max_retries + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            if attempt:
                time.sleep(self._backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._client.post(url, json=payload, headers=self._headers())
            except httpx.HTTPError as exc:
                last_error = exc
                log.warning("transport error on %s (attempt %d/%d): %s",
                            url, attempt + 1, attempts, exc)
                continue
            if response.status_code == 200:
                return response.json()
            if response.status_code in _RETRY_STATUS:
                last_error = EndpointError(
                    f"{url} returned {response.status_code}: {response.text[:200]}"
                )
                log.warning("retryable status %d on %s (attempt %d/%d)",
                            response.status_code, url, attempt + 1, attempts)
                continue
            raise EndpointError(
                f"{url} returned {response.status_code}: {response.text[:200]}"
            )
        raise EndpointError(f"{url} failed after {attempts} attempts: {last_error}")


class HttpChatClient(_HttpBase):
    def chat(self, request: ChatRequest) -> ChatResult:
        payload: dict = {
            "model": self.endpoint.model_name,
            "messages": request.messages(),
            "temperature": request.temperature,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        if request.top_logprobs is not None:
            payload["logprobs"] = True
            payload["top_logprobs"] = request.top_logprobs
        data = self._post("/chat/completions", payload)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed chat response: {exc}") from exc
        logprobs = None
        if request.top_logprobs is not None:
            logprobs = self._extract_logprobs(choice)
        return ChatResult(text=text, token_logprobs=logprobs)

    def chat_messages(self, messages: list[dict], temperature: float = 0.0,
                      seed: int | None = None) -> str:
        """Raw-message chat for multimodal content (judge questions with images)."""
        payload: dict = {
            "model": self.endpoint.model_name,
            "messages": messages,
            "temperature": temperature,
        }
        if seed is not None:
            payload["seed"] = seed
        data = self._post("/chat/completions", payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed chat response: {exc}") from exc

    @staticmethod
    def _extract_logprobs(choice: dict) -> dict[str, float]:
        content = (choice.get("logprobs") or {}).get("content") or []
        if not content:
            raise LogprobsUnsupported("endpoint returned no logprobs content")
        first = content[0]
        out = {}
        for item in first.get("top_logprobs", []):
            out[item["token"]] = float(item["logprob"])
        if not out:
            raise LogprobsUnsupported("endpoint returned empty top_logprobs")
        return out


class HttpEmbeddingClient(_HttpBase):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed a batch of texts; vectors come back unit-normalized."""
        if not texts:
            raise ValueError("texts must be non-empty")
        payload = {"model": self.endpoint.model_name, "input": list(texts)}
        data = self._post("/embeddings", payload)
        try:
            rows = sorted(data["data"], key=lambda r: r["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float64) for r in rows]
        except (KeyError, TypeError) as exc:
            raise EndpointError(f"malformed embeddings response: {exc}") from exc
        if len(vectors) != len(texts):
            raise EmbeddingShapeError(
                f"asked for {len(texts)} embeddings, got {len(vectors)}"
            )
        dims = {v.shape for v in vectors}
        if len(dims) != 1 or vectors[0].ndim != 1:
            raise EmbeddingShapeError(f"inconsistent embedding shapes: {dims}")
        out = []
        for vec in vectors:
            norm = float(np.linalg.norm(vec))
            if norm < 1e-12:
                raise EmbeddingShapeError("endpoint returned a zero embedding")
            out.append(vec / norm)
        return out


class HttpImageClient(_HttpBase):
    def generate(self, system_prompt: str | None, user_prompt: str, seed: int
                 ) -> tuple[bytes, str]:
        """Generate one image; returns (image bytes, content digest)."""
        payload: dict = {
            "model": self.endpoint.model_name,
            "prompt": user_prompt,
            "seed": seed,
            "response_format": "b64_json",
        }
        if system_prompt is not None:
            payload["system_prompt"] = system_prompt
        data = self._post("/images/generations", payload)
        try:
            b64 = data["data"][0]["b64_json"]
        except (KeyError, IndexError, TypeError) as exc:
            raise EndpointError(f"malformed image response: {exc}") from exc
        image = base64.b64decode(b64)
        return image, hashlib.sha256(image).hexdigest()
