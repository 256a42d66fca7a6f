"""Image generation service: one record per (prompt, seed, mode)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import EmbeddingShapeError
from ..jsonutil import sha256_hex
from .cache import GenerationCache, request_digest
from .simulator import SimulatedGeneration


@dataclass
class GenerationRecord:
    """Everything downstream stages need about one generated image."""

    prompt_id: str
    seed: int
    mode: str
    raw_digest: str
    system_prompt_digest: str | None = None
    image_ref: str | None = None
    image_embedding: np.ndarray | None = None
    metadata: dict | None = None

    def __post_init__(self):
        if self.image_embedding is not None:
            emb = np.asarray(self.image_embedding, dtype=np.float64)
            norm = float(np.linalg.norm(emb))
            if abs(norm - 1.0) > 1e-6:
                raise EmbeddingShapeError(f"image embedding norm {norm} is not 1")
            self.image_embedding = emb

    def to_dict(self) -> dict:
        return {
            "prompt_id": self.prompt_id,
            "seed": self.seed,
            "mode": self.mode,
            "raw_digest": self.raw_digest,
            "system_prompt_digest": self.system_prompt_digest,
            "image_ref": self.image_ref,
            "image_embedding": (
                None if self.image_embedding is None else self.image_embedding.tolist()
            ),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationRecord":
        emb = data.get("image_embedding")
        return cls(
            prompt_id=data["prompt_id"],
            seed=data["seed"],
            mode=data["mode"],
            raw_digest=data["raw_digest"],
            system_prompt_digest=data.get("system_prompt_digest"),
            image_ref=data.get("image_ref"),
            image_embedding=None if emb is None else np.asarray(emb, dtype=np.float64),
            metadata=data.get("metadata"),
        )


def generate_image(
    backend,
    *,
    prompt_id: str,
    mode: str,
    system_prompt: str | None,
    user_prompt: str,
    seed: int,
    cache: GenerationCache | None = None,
    embed_image: Callable[[bytes], np.ndarray] | None = None,
) -> GenerationRecord:
    """Generate (or fetch from cache) one image record.

    `backend` is an HttpImageClient or SimulatedModel; both expose .identity
    and .generate(system_prompt, user_prompt, seed).
    """
    key = request_digest(backend.identity, mode, system_prompt, user_prompt, seed)
    if cache is not None:
        cached = cache.get(key)
        if cached is not None:
            return GenerationRecord.from_dict(cached)
    result = backend.generate(system_prompt, user_prompt, seed)
    sys_digest = None if system_prompt is None else sha256_hex(system_prompt)
    if isinstance(result, SimulatedGeneration):
        record = GenerationRecord(
            prompt_id=prompt_id,
            seed=seed,
            mode=mode,
            raw_digest=result.digest,
            system_prompt_digest=sys_digest,
            image_ref=None,
            image_embedding=result.image_embedding,
            metadata={"occupation": result.occupation, "classes": result.classes},
        )
        if cache is not None:
            cache.put(key, record.to_dict())
        return record
    image_bytes, digest = result
    embedding = embed_image(image_bytes) if embed_image is not None else None
    record = GenerationRecord(
        prompt_id=prompt_id,
        seed=seed,
        mode=mode,
        raw_digest=digest,
        system_prompt_digest=sys_digest,
        image_ref=cache.image_ref_for(key) if cache is not None else None,
        image_embedding=embedding,
        metadata=None,
    )
    if cache is not None:
        cache.put(key, record.to_dict(), image_bytes=image_bytes)
    return record
