"""Session state machine: pausing, editing, prefix construction, finalize."""
from __future__ import annotations

import pytest

from ctrlgen.gateway import ChatGateway, GatewayConfig, RetryPolicy
from ctrlgen.genstream import (
    GenerationSession,
    InvalidState,
    VerifiedElement,
    assistant_prefix,
    start_session,
)
from ctrlgen.mockchat import MockChatTransport, ScriptedChatModel, serialize_elements
from ctrlgen.promptgen import PromptConfig
from ctrlgen.segmentation import parse_xml

from conftest import make_case

TWO_SEGMENTS = (
    ("topic", "Course Overview"),
    ("question", "What happened during the stay?"),
    ("span", "The patient improved under treatment."),
    ("topic", "Discharge Plan"),
    ("question", "What is the plan after discharge?"),
    ("span", "Home with follow-up in two weeks."),
)


def make_session(mode="interactive", elements=TWO_SEGMENTS, chunk_size=7, **kwargs):
    model = ScriptedChatModel(elements=list(elements))
    transport = MockChatTransport(model, chunk_size=chunk_size)
    gateway = ChatGateway(
        GatewayConfig(
            endpoint_url="http://mock.invalid",
            model_id="scripted",
            retry=RetryPolicy(max_attempts=2, backoff_base=0.001),
        ),
        transport=transport,
    )
    session = start_session(
        make_case(), PromptConfig(c="topics", g="none", task="bhc"), gateway, mode, **kwargs
    )
    return session, model, transport


def drive_to_completion(session, actions=None):
    """Apply scripted actions per pause; default accepts everything."""
    actions = dict(actions or {})
    pauses = []
    for _ in range(60):
        status = session.wait(timeout=20)
        if status in ("completed", "failed"):
            return pauses
        assert status == "paused", f"unexpected status {status}"
        pending = session.pending
        pauses.append((pending.kind, pending.text))
        action, text = actions.pop(len(pauses) - 1, ("accept", None))
        session.apply_user_action(action, text)
    raise AssertionError("session never finished")


class TestAssistantPrefix:
    def test_mid_segment_after_topic_question(self):
        verified = [
            VerifiedElement("topic", "T"),
            VerifiedElement("question", "Q?"),
        ]
        prefix = assistant_prefix(verified, "span")
        assert prefix == "<topic>T</topic>\n<question>Q?</question>\n<span>"
        assert prefix.endswith("<span>")

    def test_after_full_segment(self):
        verified = [
            VerifiedElement("topic", "T"),
            VerifiedElement("question", "Q?"),
            VerifiedElement("span", "S"),
        ]
        prefix = assistant_prefix(verified, "topic")
        assert prefix.endswith("</span>\n\n<topic>")

    def test_initial_prefix_is_bare_open_tag(self):
        assert assistant_prefix([], "topic") == "<topic>"

    def test_prefix_faithfulness(self):
        full = serialize_elements(TWO_SEGMENTS)
        verified = [VerifiedElement(k, t) for k, t in TWO_SEGMENTS[:4]]
        prefix = assistant_prefix(verified, "question")
        assert full.startswith(prefix)
        reparsed = parse_xml(prefix + full[len(prefix):], mode="strict", target_id="x")
        assert reparsed == parse_xml(full, mode="strict", target_id="x")


class TestInteractiveSession:
    def test_pauses_at_first_topic_done(self):
        session, model, transport = make_session()
        status = session.wait()
        assert status == "paused"
        assert session.pending == VerifiedElement("topic", "Course Overview")
        assert session.verified == []
        assert transport.in_flight == 0

    def test_pauses_at_every_element_and_completes(self):
        session, model, transport = make_session()
        pauses = drive_to_completion(session)
        assert [k for k, _ in pauses] == ["topic", "question", "span"] * 2
        assert session.status == "completed"
        assert len(session.verified) == 6

    def test_no_request_in_flight_while_paused(self):
        session, model, transport = make_session()
        for _ in range(6):
            assert session.wait() == "paused"
            assert transport.in_flight == 0
            session.apply_user_action("accept")
        session.wait()
        assert session.status == "completed"

    def test_edited_heading_appears_in_resume_prefix(self):
        session, model, transport = make_session()
        session.wait()
        session.apply_user_action("edit", "Admission Overview")
        session.wait()
        prefix = model.last_prefix()
        assert "<topic>Admission Overview</topic>" in prefix
        assert session.verified[0] == VerifiedElement("topic", "Admission Overview")

    def test_regenerate_span_prefix_ends_with_span_open(self):
        session, model, transport = make_session()
        # accept topic and question, then regenerate at the span pause
        session.wait(); session.apply_user_action("accept")
        session.wait(); session.apply_user_action("accept")
        session.wait()
        assert session.pending.kind == "span"
        before = model.call_count()
        session.apply_user_action("regenerate")
        session.wait()
        assert model.call_count() == before + 1
        assert model.last_prefix().endswith("<span>")
        assert session.pending.kind == "span"  # re-offered after regeneration

    def test_finalize_document_equals_joined_spans(self):
        session, model, transport = make_session()
        drive_to_completion(session)
        document, seg = session.finalize()
        spans = [t for k, t in TWO_SEGMENTS if k == "span"]
        assert document == " ".join(spans)
        assert len(seg.segments) == 2
        assert seg.status == "raw"

    def test_edits_survive_into_final_document(self):
        session, model, transport = make_session()
        drive_to_completion(session, actions={2: ("edit", "A fully edited span.")})
        document, seg = session.finalize()
        assert document.startswith("A fully edited span.")
        assert seg.segments[0].span == "A fully edited span."

    def test_action_while_generating_is_invalid(self):
        model = ScriptedChatModel(elements=list(TWO_SEGMENTS))
        transport = MockChatTransport(model, latency=0.3)
        gateway = ChatGateway(
            GatewayConfig(endpoint_url="http://mock.invalid", model_id="m"),
            transport=transport,
        )
        session = start_session(
            make_case(), PromptConfig(c="topics"), gateway, "interactive"
        )
        assert session.status == "generating"
        with pytest.raises(InvalidState):
            session.apply_user_action("accept")
        session.wait()

    def test_finalize_requires_completion(self):
        session, model, transport = make_session()
        session.wait()
        with pytest.raises(InvalidState):
            session.finalize()

    def test_resume_on_completed_session_is_invalid(self):
        session, model, transport = make_session()
        drive_to_completion(session)
        with pytest.raises(InvalidState):
            session.resume()
        with pytest.raises(InvalidState):
            session.apply_user_action("accept")


class TestAutonomousSession:
    def test_runs_to_completion(self):
        session, model, transport = make_session(mode="autonomous")
        status = session.wait()
        assert status == "completed"
        assert len(session.verified) == 6
        assert model.call_count() == 1
        document, seg = session.finalize()
        assert len(seg.segments) == 2

    def test_event_order_matches_parser_events(self):
        events: list[dict] = []
        model = ScriptedChatModel(elements=list(TWO_SEGMENTS))
        gateway = ChatGateway(
            GatewayConfig(endpoint_url="http://mock.invalid", model_id="m"),
            transport=MockChatTransport(model, chunk_size=5),
        )
        session = GenerationSession(
            make_case(), PromptConfig(c="topics"), gateway, "autonomous"
        )
        session.add_listener(events.append)
        session.start()
        session.wait()
        kinds = [e["kind"] for e in events if e["type"] == "element"]
        assert kinds[0] == "TopicStarted"
        assert kinds[-1] == "DocumentDone"
        dones = [k for k in kinds if k.endswith("Done")]
        assert dones == [
            "TopicDone", "QuestionDone", "SpanDone",
            "TopicDone", "QuestionDone", "SpanDone",
            "DocumentDone",
        ]
        seqs = [e["seq"] for e in events]
        assert seqs == sorted(seqs)


def test_sessions_run_concurrently():
    import threading

    sessions = [make_session(mode="autonomous")[0] for _ in range(3)]
    threads = [threading.Thread(target=s.wait) for s in sessions]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(s.status == "completed" for s in sessions)
    documents = {s.finalize()[0] for s in sessions}
    assert len(documents) == 1  # same script, same document


class TestModeValidation:
    def test_plain_output_config_rejected(self):
        model = ScriptedChatModel(elements=list(TWO_SEGMENTS))
        gateway = ChatGateway(
            GatewayConfig(endpoint_url="http://mock.invalid", model_id="m"),
            transport=MockChatTransport(model),
        )
        with pytest.raises(InvalidState):
            GenerationSession(make_case(), PromptConfig(c="none"), gateway, "interactive")

    def test_unknown_mode_rejected(self):
        model = ScriptedChatModel(elements=list(TWO_SEGMENTS))
        gateway = ChatGateway(
            GatewayConfig(endpoint_url="http://mock.invalid", model_id="m"),
            transport=MockChatTransport(model),
        )
        with pytest.raises(ValueError):
            GenerationSession(make_case(), PromptConfig(c="topics"), gateway, "turbo")


def test_stream_interruption_recovers_via_regenerate():
    from ctrlgen.mockchat import ScriptedFailure

    model = ScriptedChatModel(elements=list(TWO_SEGMENTS))
    transport = MockChatTransport(
        model, chunk_size=4, failures=[ScriptedFailure("disconnect", after_chunks=2)]
    )
    gateway = ChatGateway(
        GatewayConfig(
            endpoint_url="http://mock.invalid",
            model_id="m",
            retry=RetryPolicy(max_attempts=2, backoff_base=0.001),
        ),
        transport=transport,
    )
    session = start_session(make_case(), PromptConfig(c="topics"), gateway, "interactive")
    assert session.wait() == "awaiting_user"
    assert "interrupted" in (session.failure_cause or "")
    session.apply_user_action("regenerate")
    assert session.wait() == "paused"
    assert session.pending.kind == "topic"
    drive_to_completion(session)
    assert session.status == "completed"


def test_gateway_failure_fails_session():
    from ctrlgen.mockchat import ScriptedFailure

    model = ScriptedChatModel(elements=list(TWO_SEGMENTS))
    transport = MockChatTransport(model, failures=[ScriptedFailure("timeout")] * 4)
    gateway = ChatGateway(
        GatewayConfig(
            endpoint_url="http://mock.invalid",
            model_id="m",
            retry=RetryPolicy(max_attempts=2, backoff_base=0.001),
        ),
        transport=transport,
    )
    session = start_session(make_case(), PromptConfig(c="topics"), gateway, "interactive")
    assert session.wait() == "failed"
    assert session.failure_cause
