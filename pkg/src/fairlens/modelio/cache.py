"""Content-addressed cache for generation records.

Keys digest the canonicalized request (backend identity, prompt mode, system
prompt digest, user prompt, seed), so a resumed run recognizes work it has
already done no matter how it got interrupted. Writes are atomic.
"""

from __future__ import annotations

import threading
from pathlib import Path

from ..jsonutil import digest_obj, read_json, sha256_hex, write_json_atomic


def request_digest(
    backend_identity: str,
    mode: str,
    system_prompt: str | None,
    user_prompt: str,
    seed: int,
) -> str:
    return digest_obj(
        {
            "backend": backend_identity,
            "mode": mode,
            "system_prompt_digest": None if system_prompt is None else sha256_hex(system_prompt),
            "user_prompt": user_prompt,
            "seed": seed,
        }
    )


class GenerationCache:
    """Keyed JSON store with optional image sidecar files.

    With root=None the cache lives in memory (useful for tests and one-shot
    library calls).
    """

    def __init__(self, root: Path | str | None = None):
        self.root = Path(root) if root is not None else None
        self._memory: dict[str, dict] = {}
        self._images: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def _record_path(self, key: str) -> Path:
        assert self.root is not None
        return self.root / key[:2] / f"{key}.json"

    def _image_path(self, key: str) -> Path:
        assert self.root is not None
        return self.root / key[:2] / f"{key}.png"

    def image_ref_for(self, key: str) -> str:
        """Where put() will store image bytes for this key."""
        if self.root is None:
            return f"memory:{key}"
        return str(self._image_path(key))

    def get(self, key: str) -> dict | None:
        if self.root is None:
            with self._lock:
                return self._memory.get(key)
        path = self._record_path(key)
        if not path.exists():
            return None
        return read_json(path)

    def put(self, key: str, record: dict, image_bytes: bytes | None = None) -> str | None:
        """Store a record; returns the image path when bytes were given."""
        image_ref: str | None = None
        if self.root is None:
            with self._lock:
                if image_bytes is not None:
                    self._images[key] = image_bytes
                    image_ref = f"memory:{key}"
                self._memory[key] = record
            return image_ref
        if image_bytes is not None:
            image_path = self._image_path(key)
            image_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = image_path.with_suffix(".png.tmp")
            tmp.write_bytes(image_bytes)
            tmp.replace(image_path)
            image_ref = str(image_path)
        write_json_atomic(self._record_path(key), record)
        return image_ref

    def image_bytes(self, key: str) -> bytes | None:
        if self.root is None:
            with self._lock:
                return self._images.get(key)
        path = self._image_path(key)
        return path.read_bytes() if path.exists() else None
