"""Shared fixtures: taxonomy, record factories, run configs, an HTTP stub."""

from __future__ import annotations

import base64
import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from fairlens.judge import AnnotationRecord
from fairlens.pipeline.config import RunConfig
from fairlens.taxonomy import Taxonomy

settings.register_profile(
    "sandbox", deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("sandbox")

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def taxonomy() -> Taxonomy:
    return Taxonomy.default()


@pytest.fixture
def annotation_factory():
    def make(prompt_id, seed, labels, mode="default", raw_answers=None):
        return AnnotationRecord(
            prompt_id=prompt_id,
            seed=seed,
            mode=mode,
            labels=dict(labels),
            raw_answers=dict(raw_answers or {}),
            judge_id="test-judge",
        )

    return make


def small_config_dict(out_dir, **overrides) -> dict:
    cfg = {
        "output_dir": str(out_dir),
        "occupations": ["a welder", "a florist", "a librarian"],
        "levels": ["occupation", "simple"],
        "modes": ["default", "none", "fairpro"],
        "seeds": [0, 1, 2],
        "endpoints": {"generator": {"simulator": "desk"}},
        "default_system_prompt": "@descriptive",
        "probes": True,
    }
    cfg.update(overrides)
    return cfg


@pytest.fixture
def small_config(tmp_path):
    def make(subdir="run", **overrides) -> RunConfig:
        return RunConfig.from_dict(small_config_dict(tmp_path / subdir, **overrides))

    return make


def tree_digests(root) -> dict[str, str]:
    """Map of relative path to content digest for every file under root."""
    root = Path(root)
    out = {}
    for path in sorted(root.rglob("*")):
        if path.is_file():
            out[str(path.relative_to(root))] = hashlib.sha256(
                path.read_bytes()
            ).hexdigest()
    return out


class _StubHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def do_POST(self):
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        server = self.server
        with server.lock:
            server.requests.append(
                {
                    "path": self.path,
                    "auth": self.headers.get("Authorization"),
                    "body": body,
                }
            )
            if server.fail_remaining > 0:
                server.fail_remaining -= 1
                return self._send(500, {"error": "temporary failure"})
            if server.status_override is not None:
                return self._send(server.status_override, {"error": "forced"})
            if server.ok_budget is not None:
                if server.ok_budget <= 0:
                    return self._send(500, {"error": "budget exhausted"})
                server.ok_budget -= 1
        if self.path.endswith("/chat/completions"):
            return self._send(200, self._chat_payload(body))
        if self.path.endswith("/embeddings"):
            return self._send(200, self._embeddings_payload(body))
        if self.path.endswith("/images/generations"):
            image = f"img:{body.get('prompt')}:{body.get('seed')}".encode()
            return self._send(
                200, {"data": [{"b64_json": base64.b64encode(image).decode()}]}
            )
        return self._send(404, {"error": f"no route for {self.path}"})

    def _chat_payload(self, body):
        user = ""
        for message in body.get("messages", []):
            if message.get("role") == "user":
                user = message.get("content", "")
        text = self.server.chat_text(body, user)
        choice = {"message": {"content": text}}
        if body.get("logprobs") and self.server.logprobs is not None:
            choice["logprobs"] = {
                "content": [{"top_logprobs": list(self.server.logprobs)}]
            }
        return {"choices": [choice]}

    def _embeddings_payload(self, body):
        texts = body.get("input", [])
        data = [
            {"index": i, "embedding": stub_embedding(t, self.server.embed_shape)}
            for i, t in enumerate(texts)
        ]
        return {"data": list(reversed(data))}

    def _send(self, status, payload):
        raw = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)


def stub_embedding(text: str, shape: str = "normal") -> list[float]:
    """The stub's deterministic, deliberately non-normalized embedding."""
    if shape == "zero":
        return [0.0, 0.0]
    vec = [float((len(text) * 7) % 10 + 1), float((sum(map(ord, text)) % 10) + 1)]
    if shape == "ragged":
        vec = vec + [1.0] * (len(text) % 2)
    return vec


class StubServer:
    """Tiny OpenAI-style HTTP server with scriptable failures.

    fail_remaining: respond 500 to this many requests, then recover.
    status_override: respond with this status to every request.
    ok_budget: when set, serve this many requests then 500 every request.
    chat_text: callable (body, user_text) -> completion text.
    logprobs: list of {token, logprob} attached when the request asks for them.
    embed_shape: "normal", "zero", or "ragged" embedding payloads.
    """

    def __init__(self):
        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
        self._httpd.lock = threading.Lock()
        self._httpd.requests = []
        self._httpd.fail_remaining = 0
        self._httpd.status_override = None
        self._httpd.ok_budget = None
        self._httpd.logprobs = None
        self._httpd.embed_shape = "normal"
        self._httpd.chat_text = lambda body, user: f"stub reply to: {user}"
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True
        )
        self._thread.start()

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address
        return f"http://{host}:{port}/v1"

    @property
    def requests(self):
        return self._httpd.requests

    def set(self, **attrs):
        for key, value in attrs.items():
            if not hasattr(self._httpd, key):
                raise AttributeError(key)
            setattr(self._httpd, key, value)

    def close(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def stub_server():
    server = StubServer()
    yield server
    server.close()
