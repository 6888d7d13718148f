"""Gateway contract: retries, streaming, prefix continuation, parallelism."""
from __future__ import annotations

import threading

import httpx
import pytest

from ctrlgen.gateway import (
    ChatGateway,
    ChatRequest,
    GatewayConfig,
    RateLimited,
    RetryPolicy,
    StreamInterrupted,
    Timeout,
)
from ctrlgen.mockchat import MockChatTransport, ScriptedChatModel, ScriptedFailure

FAST_RETRY = RetryPolicy(max_attempts=3, backoff_base=0.001)


def make_gateway(transport, **cfg_overrides) -> ChatGateway:
    cfg = GatewayConfig(
        endpoint_url="http://mock.invalid",
        model_id="scripted",
        retry=FAST_RETRY,
        request_timeout=5.0,
        **cfg_overrides,
    )
    return ChatGateway(cfg, transport=transport)


def echo_model() -> ScriptedChatModel:
    return ScriptedChatModel(responder=lambda payload: "OK")


class TestComplete:
    def test_echo(self):
        gw = make_gateway(MockChatTransport(echo_model()))
        assert gw.complete(ChatRequest(user="hi")) == "OK"

    def test_rate_limited_twice_then_success(self):
        transport = MockChatTransport(
            echo_model(),
            failures=[
                ScriptedFailure("status", status=429),
                ScriptedFailure("status", status=429),
            ],
        )
        gw = make_gateway(transport)
        assert gw.complete(ChatRequest(user="hi")) == "OK"
        assert gw.stats.requests == 3
        assert len(gw.stats.backoffs) == 2

    def test_retry_after_header_respected(self):
        transport = MockChatTransport(
            echo_model(),
            failures=[ScriptedFailure("status", status=429, retry_after=0.01)],
        )
        gw = make_gateway(transport)
        gw.complete(ChatRequest(user="hi"))
        assert gw.stats.backoffs == [0.01]

    def test_timeouts_exhaust_attempts(self):
        transport = MockChatTransport(
            echo_model(), failures=[ScriptedFailure("timeout")] * 5
        )
        gw = make_gateway(transport)
        with pytest.raises(Timeout):
            gw.complete(ChatRequest(user="hi"))
        assert gw.stats.requests == 3

    def test_client_error_not_retried(self):
        transport = MockChatTransport(
            echo_model(), failures=[ScriptedFailure("status", status=400)]
        )
        gw = make_gateway(transport)
        with pytest.raises(Exception) as err:
            gw.complete(ChatRequest(user="hi"))
        assert "400" in str(err.value)
        assert gw.stats.requests == 1

    def test_rate_limit_exhaustion_surfaces_last_error(self):
        transport = MockChatTransport(
            echo_model(), failures=[ScriptedFailure("status", status=429)] * 3
        )
        gw = make_gateway(transport)
        with pytest.raises(RateLimited):
            gw.complete(ChatRequest(user="hi"))


class TestStream:
    def test_chunks_in_order_and_equivalence(self):
        model = ScriptedChatModel(responder=lambda p: "ABCDEFGHIJ")
        transport = MockChatTransport(model, chunk_size=3)
        gw = make_gateway(transport)
        seen: list[str] = []
        summary = gw.stream(ChatRequest(user="hi"), seen.append)
        assert seen == ["ABC", "DEF", "GHI", "J"]
        assert summary.text == "ABCDEFGHIJ"
        assert not summary.cancelled
        blocking = gw.complete(ChatRequest(user="hi"))
        assert blocking == summary.text

    def test_scripted_three_chunks(self):
        model = ScriptedChatModel(responder=lambda p: "ABC")
        gw = make_gateway(MockChatTransport(model, chunk_size=1))
        seen: list[str] = []
        summary = gw.stream(ChatRequest(user="hi"), seen.append)
        assert seen == ["A", "B", "C"]
        assert summary.text == "ABC"

    def test_consumer_cancel_after_first_chunk(self):
        model = ScriptedChatModel(responder=lambda p: "ABC")
        gw = make_gateway(MockChatTransport(model, chunk_size=1))
        seen: list[str] = []

        def sink(chunk: str):
            seen.append(chunk)
            return False

        summary = gw.stream(ChatRequest(user="hi"), sink)
        assert summary.cancelled
        assert summary.text == "A"
        assert seen == ["A"]

    def test_mid_stream_disconnect(self):
        model = ScriptedChatModel(responder=lambda p: "ABCDEF")
        transport = MockChatTransport(
            model, chunk_size=1, failures=[ScriptedFailure("disconnect", after_chunks=2)]
        )
        gw = make_gateway(transport)
        seen: list[str] = []
        with pytest.raises(StreamInterrupted) as err:
            gw.stream(ChatRequest(user="hi"), seen.append)
        assert err.value.partial_text == "AB"
        assert seen == ["A", "B"]


class TestPrefixContinuation:
    def test_prefill_mode_sends_trailing_assistant_message(self):
        model = ScriptedChatModel(responder=lambda p: "continuation")
        gw = make_gateway(MockChatTransport(model))
        gw.complete(ChatRequest(user="hi", assistant_prefix="<topic>Start"))
        payload = model.requests[-1]
        assert payload["messages"][-1] == {
            "role": "assistant",
            "content": "<topic>Start",
        }
        assert payload["continue_final_message"] is True
        assert payload["add_generation_prompt"] is False

    def test_instruction_mode_embeds_prefix_and_strips_repeat(self):
        model = ScriptedChatModel(responder=lambda p: "<topic>Start rest</topic>")
        gw = make_gateway(MockChatTransport(model), prefix_mode="instruction")
        out = gw.complete(ChatRequest(user="hi", assistant_prefix="<topic>Start"))
        payload = model.requests[-1]
        assert payload["messages"][-1]["role"] == "user"
        assert "Continue the answer exactly" in payload["messages"][-1]["content"]
        assert out == " rest</topic>"

    def test_greedy_decoding_parameters(self):
        model = echo_model()
        gw = make_gateway(MockChatTransport(model))
        gw.complete(ChatRequest(user="hi"))
        payload = model.requests[-1]
        assert payload["temperature"] == 0.0
        assert "top_p" not in payload and "n" not in payload


class TestBoundedParallelism:
    def test_burst_never_exceeds_max_in_flight(self):
        model = echo_model()
        transport = MockChatTransport(model, latency=0.002)
        gw = make_gateway(transport, max_in_flight=4)
        errors: list[Exception] = []

        def worker():
            try:
                gw.complete(ChatRequest(user="hi"))
            except Exception as exc:  # pragma: no cover - assertion surface
                errors.append(exc)

        threads = [threading.Thread(target=worker) for _ in range(100)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert not errors
        assert model.call_count() == 100
        assert transport.max_in_flight_seen <= 4


@pytest.mark.parametrize(
    "endpoint",
    [
        "http://host:8000",
        "http://host:8000/",
        "http://host:8000/v1",
        "http://host:8000/v1/chat/completions",
    ],
)
def test_endpoint_url_normalization(endpoint):
    gw = ChatGateway(
        GatewayConfig(endpoint_url=endpoint, model_id="m"),
        transport=MockChatTransport(echo_model()),
    )
    assert gw._url() == "http://host:8000/v1/chat/completions"


def test_config_validation():
    with pytest.raises(ValueError):
        GatewayConfig(endpoint_url="x", model_id="m", temperature=-1)
    with pytest.raises(ValueError):
        GatewayConfig(endpoint_url="x", model_id="m", max_in_flight=0)
    with pytest.raises(ValueError):
        RetryPolicy(max_attempts=0)


def test_env_overrides(monkeypatch):
    monkeypatch.setenv("CTRLGEN_ENDPOINT", "http://env.invalid")
    monkeypatch.setenv("CTRLGEN_API_KEY", "sekrit")
    cfg = GatewayConfig.from_env(model_id="m")
    assert cfg.endpoint_url == "http://env.invalid"
    assert cfg.api_key == "sekrit"
