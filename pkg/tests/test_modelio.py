"""HTTP clients against a local stub server, plus the generation cache."""

from __future__ import annotations

import hashlib

import numpy as np
import pytest

from fairlens.errors import EmbeddingShapeError, EndpointError, LogprobsUnsupported
from fairlens.modelio.cache import GenerationCache, request_digest
from fairlens.modelio.endpoints import (
    ChatRequest,
    HttpChatClient,
    HttpEmbeddingClient,
    HttpImageClient,
    ModelEndpoint,
)
from fairlens.modelio.generation import GenerationRecord, generate_image
from fairlens.modelio.simulator import SimulatedModel, SimulatedModelSpec

from conftest import stub_embedding


def endpoint_for(server, kind="chat", **overrides):
    fields = {
        "kind": kind,
        "base_url": server.url,
        "model_name": "stub-model",
        "max_retries": 2,
    }
    fields.update(overrides)
    return ModelEndpoint(**fields)


def chat_client(server, **overrides) -> HttpChatClient:
    return HttpChatClient(endpoint_for(server, **overrides), backoff_base=0.0)


class TestModelEndpoint:
    def test_validation(self):
        with pytest.raises(ValueError):
            ModelEndpoint(kind="chat", base_url="ftp://x", model_name="m")
        with pytest.raises(ValueError):
            ModelEndpoint(kind="chat", base_url="/relative", model_name="m")
        with pytest.raises(ValueError):
            ModelEndpoint(kind="chat", base_url="http://h/v1", model_name="")
        with pytest.raises(ValueError):
            ModelEndpoint(
                kind="chat", base_url="http://h/v1", model_name="m", timeout=0
            )
        with pytest.raises(ValueError):
            ModelEndpoint(
                kind="chat", base_url="http://h/v1", model_name="m", max_retries=-1
            )

    def test_identity_excludes_token(self, monkeypatch):
        monkeypatch.setenv("STUB_TOKEN", "secret")
        endpoint = ModelEndpoint(
            kind="chat",
            base_url="http://h:9999/v1/",
            model_name="m",
            auth_token_env="STUB_TOKEN",
        )
        assert endpoint.identity == "chat:http://h:9999/v1:m"
        assert "secret" not in endpoint.identity
        assert endpoint.auth_token() == "secret"

    def test_missing_token_env_is_empty(self):
        endpoint = ModelEndpoint(
            kind="chat",
            base_url="http://h/v1",
            model_name="m",
            auth_token_env="FAIRLENS_UNSET_TOKEN",
        )
        assert endpoint.auth_token() is None


class TestChatRequest:
    def test_validation(self):
        with pytest.raises(ValueError):
            ChatRequest(user_prompt="")
        with pytest.raises(ValueError):
            ChatRequest(user_prompt="x", temperature=2.5)
        with pytest.raises(ValueError):
            ChatRequest(user_prompt="x", top_logprobs=0)
        with pytest.raises(ValueError):
            ChatRequest(user_prompt="x", top_logprobs=21)

    def test_messages_shape(self):
        bare = ChatRequest(user_prompt="hello").messages()
        assert bare == [{"role": "user", "content": "hello"}]
        full = ChatRequest(user_prompt="hello", system_prompt="be brief").messages()
        assert full == [
            {"role": "system", "content": "be brief"},
            {"role": "user", "content": "hello"},
        ]


class TestHttpChat:
    def test_round_trip_and_payload(self, stub_server, monkeypatch):
        monkeypatch.setenv("STUB_TOKEN", "tok-123")
        client = chat_client(stub_server, auth_token_env="STUB_TOKEN")
        result = client.chat(
            ChatRequest(user_prompt="hello", system_prompt="sys", seed=5)
        )
        assert result.text == "stub reply to: hello"
        assert result.token_logprobs is None
        (request,) = stub_server.requests
        assert request["auth"] == "Bearer tok-123"
        body = request["body"]
        assert body["model"] == "stub-model"
        assert body["seed"] == 5
        assert body["temperature"] == 0.0
        assert "logprobs" not in body
        assert body["messages"][0] == {"role": "system", "content": "sys"}

    def test_no_seed_no_system_no_auth(self, stub_server):
        client = chat_client(stub_server)
        client.chat(ChatRequest(user_prompt="hi"))
        (request,) = stub_server.requests
        assert request["auth"] is None
        assert "seed" not in request["body"]
        assert len(request["body"]["messages"]) == 1

    def test_retry_is_transparent(self, stub_server):
        clean = chat_client(stub_server).chat(ChatRequest(user_prompt="ping"))
        stub_server.requests.clear()
        stub_server.set(fail_remaining=1)
        retried = chat_client(stub_server).chat(ChatRequest(user_prompt="ping"))
        assert retried == clean
        assert len(stub_server.requests) == 2

    def test_retries_exhausted(self, stub_server):
        stub_server.set(fail_remaining=10)
        client = chat_client(stub_server, max_retries=1)
        with pytest.raises(EndpointError, match="after 2 attempts"):
            client.chat(ChatRequest(user_prompt="ping"))
        assert len(stub_server.requests) == 2

    def test_non_retryable_status_fails_fast(self, stub_server):
        stub_server.set(status_override=404)
        client = chat_client(stub_server, max_retries=3)
        with pytest.raises(EndpointError):
            client.chat(ChatRequest(user_prompt="ping"))
        assert len(stub_server.requests) == 1

    def test_connection_refused(self):
        endpoint = ModelEndpoint(
            kind="chat",
            base_url="http://127.0.0.1:9/v1",
            model_name="m",
            max_retries=0,
            timeout=2.0,
        )
        client = HttpChatClient(endpoint, backoff_base=0.0)
        with pytest.raises(EndpointError):
            client.chat(ChatRequest(user_prompt="ping"))

    def test_logprobs_extracted(self, stub_server):
        stub_server.set(
            logprobs=[
                {"token": "A", "logprob": -0.2},
                {"token": "B", "logprob": -1.7},
            ]
        )
        client = chat_client(stub_server)
        result = client.chat(ChatRequest(user_prompt="pick", top_logprobs=2))
        assert result.token_logprobs == {"A": -0.2, "B": -1.7}
        body = stub_server.requests[0]["body"]
        assert body["logprobs"] is True
        assert body["top_logprobs"] == 2

    def test_logprobs_missing_raises(self, stub_server):
        client = chat_client(stub_server)
        with pytest.raises(LogprobsUnsupported):
            client.chat(ChatRequest(user_prompt="pick", top_logprobs=2))

    def test_chat_messages_passthrough(self, stub_server):
        client = chat_client(stub_server)
        messages = [{"role": "user", "content": [{"type": "text", "text": "q"}]}]
        text = client.chat_messages(messages, temperature=0.5, seed=9)
        assert text.startswith("stub reply")
        body = stub_server.requests[0]["body"]
        assert body["messages"] == messages
        assert body["temperature"] == 0.5
        assert body["seed"] == 9


class TestHttpEmbeddings:
    def test_normalized_and_index_ordered(self, stub_server):
        client = HttpEmbeddingClient(
            endpoint_for(stub_server, kind="embedding"), backoff_base=0.0
        )
        texts = ["alpha", "omega text"]
        vectors = client.embed(texts)
        assert len(vectors) == 2
        for text, vec in zip(texts, vectors):
            raw = np.array(stub_embedding(text))
            expected = raw / np.linalg.norm(raw)
            assert np.allclose(vec, expected, atol=1e-12)
            assert np.linalg.norm(vec) == pytest.approx(1.0, abs=1e-12)

    def test_zero_vector_rejected(self, stub_server):
        stub_server.set(embed_shape="zero")
        client = HttpEmbeddingClient(
            endpoint_for(stub_server, kind="embedding"), backoff_base=0.0
        )
        with pytest.raises(EmbeddingShapeError):
            client.embed(["anything"])

    def test_ragged_shapes_rejected(self, stub_server):
        stub_server.set(embed_shape="ragged")
        client = HttpEmbeddingClient(
            endpoint_for(stub_server, kind="embedding"), backoff_base=0.0
        )
        with pytest.raises(EmbeddingShapeError):
            client.embed(["even", "odd x"])

    def test_empty_batch_rejected(self, stub_server):
        client = HttpEmbeddingClient(
            endpoint_for(stub_server, kind="embedding"), backoff_base=0.0
        )
        with pytest.raises(ValueError):
            client.embed([])


class TestHttpImages:
    def test_bytes_and_digest(self, stub_server):
        client = HttpImageClient(
            endpoint_for(stub_server, kind="image"), backoff_base=0.0
        )
        image, digest = client.generate(None, "a welder", 7)
        assert image == b"img:a welder:7"
        assert digest == hashlib.sha256(image).hexdigest()
        body = stub_server.requests[0]["body"]
        assert body["prompt"] == "a welder"
        assert body["seed"] == 7
        assert body["response_format"] == "b64_json"
        assert "system_prompt" not in body

    def test_system_prompt_forwarded_when_present(self, stub_server):
        client = HttpImageClient(
            endpoint_for(stub_server, kind="image"), backoff_base=0.0
        )
        client.generate("fair framing", "a welder", 1)
        assert stub_server.requests[0]["body"]["system_prompt"] == "fair framing"


class TestRequestDigest:
    def test_sensitivity(self):
        base = request_digest("b", "default", None, "a welder", 0)
        assert base == request_digest("b", "default", None, "a welder", 0)
        assert base != request_digest("b", "default", None, "a welder", 1)
        assert base != request_digest("b", "none", None, "a welder", 0)
        assert base != request_digest("other", "default", None, "a welder", 0)
        assert base != request_digest("b", "default", "", "a welder", 0)
        assert base != request_digest("b", "default", "sys", "a welder", 0)


class CountingImageBackend:
    identity = "counting-backend"

    def __init__(self):
        self.calls = 0

    def generate(self, system_prompt, user_prompt, seed):
        self.calls += 1
        payload = f"{system_prompt}|{user_prompt}|{seed}".encode()
        return payload, hashlib.sha256(payload).hexdigest()


class TestGenerationCache:
    def test_disk_round_trip_with_image(self, tmp_path):
        cache = GenerationCache(tmp_path / "cache")
        record = {"prompt_id": "p", "seed": 0}
        ref = cache.put("ab" + "0" * 62, record, image_bytes=b"png!")
        assert ref and ref.endswith(".png")
        assert cache.get("ab" + "0" * 62) == record
        assert cache.image_bytes("ab" + "0" * 62) == b"png!"
        assert cache.get("cd" + "0" * 62) is None

    def test_memory_round_trip(self):
        cache = GenerationCache()
        ref = cache.put("k", {"x": 1}, image_bytes=b"img")
        assert ref == "memory:k"
        assert cache.get("k") == {"x": 1}
        assert cache.image_bytes("k") == b"img"


class TestGenerateImage:
    def test_cache_first_for_http_backend(self, tmp_path):
        backend = CountingImageBackend()
        cache = GenerationCache(tmp_path / "cache")
        kwargs = dict(
            prompt_id="occupation-welder",
            mode="default",
            system_prompt="sys",
            user_prompt="a welder",
            seed=0,
            cache=cache,
        )
        first = generate_image(backend, **kwargs)
        second = generate_image(backend, **kwargs)
        assert backend.calls == 1
        assert first == second
        assert first.image_ref and first.image_ref.endswith(".png")
        with open(first.image_ref, "rb") as f:
            assert f.read() == b"sys|a welder|0"
        generate_image(backend, **{**kwargs, "seed": 1})
        assert backend.calls == 2

    def test_embed_image_hook(self, tmp_path):
        backend = CountingImageBackend()
        record = generate_image(
            backend,
            prompt_id="p",
            mode="default",
            system_prompt=None,
            user_prompt="a welder",
            seed=0,
            cache=GenerationCache(tmp_path / "cache"),
            embed_image=lambda data: np.array([1.0, 0.0]),
        )
        assert np.array_equal(record.image_embedding, np.array([1.0, 0.0]))
        assert record.system_prompt_digest is None

    def test_simulator_backend_records_metadata(self):
        spec = SimulatedModelSpec.from_dict(
            {"priors": {"welder": {"gender": {"male": 1.0, "female": 0.0}}}}
        )
        model = SimulatedModel(spec)
        record = generate_image(
            model,
            prompt_id="occupation-welder",
            mode="default",
            system_prompt=None,
            user_prompt="a welder",
            seed=0,
        )
        assert record.image_ref is None
        assert record.metadata["occupation"] == "welder"
        assert set(record.metadata["classes"]) == {
            "gender",
            "age",
            "ethnicity",
            "appearance",
        }
        assert np.linalg.norm(record.image_embedding) == pytest.approx(
            1.0, abs=1e-6
        )

    def test_record_round_trip(self):
        record = GenerationRecord(
            prompt_id="p",
            seed=1,
            mode="none",
            raw_digest="d",
            system_prompt_digest=None,
            image_ref=None,
            image_embedding=np.array([0.6, 0.8]),
            metadata={"classes": {"gender": "male"}},
        )
        again = GenerationRecord.from_dict(record.to_dict())
        assert again.prompt_id == record.prompt_id
        assert np.allclose(again.image_embedding, record.image_embedding)
        assert again.metadata == record.metadata
