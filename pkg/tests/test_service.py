"""HTTP facade: session workflow over the wire, SSE ordering, recovery."""
from __future__ import annotations

import json
import time

import pytest
from fastapi.testclient import TestClient

from ctrlgen.corpus import write_cases
from ctrlgen.gateway import GatewayConfig, RetryPolicy
from ctrlgen.mockchat import MockChatTransport, ScriptedChatModel
from ctrlgen.service import ServiceConfig, http_api

from conftest import make_case

SCRIPT = (
    ("topic", "Admission"),
    ("question", "Why was the patient admitted?"),
    ("span", "Admitted for chest pain evaluation."),
    ("topic", "Disposition"),
    ("question", "Where does the patient go next?"),
    ("span", "Discharged home in stable condition."),
)


@pytest.fixture
def service_env(tmp_path):
    cases_path = tmp_path / "cases.jsonl"
    write_cases(cases_path, [make_case("c1"), make_case("c2")])
    config = ServiceConfig(
        cases_path=str(cases_path),
        sessions_dir=str(tmp_path / "sessions"),
        gateway=GatewayConfig(
            endpoint_url="http://mock.invalid",
            model_id="scripted",
            retry=RetryPolicy(max_attempts=2, backoff_base=0.001),
        ),
    )
    model = ScriptedChatModel(elements=list(SCRIPT))
    transport = MockChatTransport(model, chunk_size=9)
    return config, model, transport, tmp_path


def wait_status(client, session_id, want, timeout=10.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        body = client.get(f"/sessions/{session_id}").json()
        if body["status"] in (want, "failed"):
            return body
        time.sleep(0.01)
    raise AssertionError(f"session never reached {want}")


class TestCases:
    def test_list_and_get(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            cases = client.get("/cases").json()
            assert {c["case_id"] for c in cases} == {"c1", "c2"}
            case = client.get("/cases/c1").json()
            assert case["target_bhc"].startswith("Patient c1")
            assert client.get("/cases/zzz").status_code == 404


class TestSessionWorkflow:
    def test_create_pause_act_complete(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            created = client.post(
                "/sessions",
                json={"case_id": "c1", "c": "topics", "g": "none", "task": "bhc",
                      "mode": "interactive"},
            )
            assert created.status_code == 201
            sid = created.json()["session_id"]

            body = wait_status(client, sid, "paused")
            assert body["pending"]["kind"] == "topic"
            assert transport.in_flight == 0

            # edit the heading, then accept everything else
            resp = client.post(
                f"/sessions/{sid}/action", json={"type": "edit", "text": "Arrival"}
            )
            assert resp.status_code == 200
            for _ in range(5):
                wait_status(client, sid, "paused")
                client.post(f"/sessions/{sid}/action", json={"type": "accept"})
            body = wait_status(client, sid, "completed")
            assert body["verified_count"] == 6

            document = client.get(f"/sessions/{sid}/document")
            assert document.status_code == 200
            payload = document.json()
            spans = [t for k, t in SCRIPT if k == "span"]
            assert payload["document"] == " ".join(spans)
            assert payload["segmentation"]["segments"][0]["heading"] == "Arrival"
            assert "<topic>Arrival</topic>" in (model.last_prefix() or "")

    def test_event_stream_matches_session_order(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            sid = client.post(
                "/sessions", json={"case_id": "c1", "mode": "autonomous"}
            ).json()["session_id"]
            wait_status(client, sid, "completed")
            frames = []
            with client.stream("GET", f"/sessions/{sid}/events") as response:
                assert response.status_code == 200
                for line in response.iter_lines():
                    if line.startswith("data: "):
                        frames.append(json.loads(line[len("data: "):]))
            kinds = [f["kind"] for f in frames if f.get("type") == "element"]
            assert kinds[0] == "TopicStarted"
            assert kinds[-1] == "DocumentDone"
            dones = [k for k in kinds if k.endswith("Done")]
            assert dones == ["TopicDone", "QuestionDone", "SpanDone"] * 2 + ["DocumentDone"]
            seqs = [f["seq"] for f in frames]
            assert seqs == sorted(seqs)

    def test_since_parameter_resumes_stream(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            sid = client.post(
                "/sessions", json={"case_id": "c1", "mode": "autonomous"}
            ).json()["session_id"]
            wait_status(client, sid, "completed")
            all_frames = []
            with client.stream("GET", f"/sessions/{sid}/events") as response:
                for line in response.iter_lines():
                    if line.startswith("data: "):
                        all_frames.append(json.loads(line[len("data: "):]))
            cut = all_frames[len(all_frames) // 2]["seq"]
            with client.stream("GET", f"/sessions/{sid}/events?since={cut}") as response:
                resumed = [
                    json.loads(line[len("data: "):])
                    for line in response.iter_lines()
                    if line.startswith("data: ")
                ]
            assert [f["seq"] for f in resumed] == [
                f["seq"] for f in all_frames if f["seq"] > cut
            ]

    def test_action_errors(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            missing = client.post("/sessions/nope/action", json={"type": "accept"})
            assert missing.status_code == 404
            sid = client.post(
                "/sessions", json={"case_id": "c1", "mode": "autonomous"}
            ).json()["session_id"]
            wait_status(client, sid, "completed")
            conflict = client.post(f"/sessions/{sid}/action", json={"type": "accept"})
            assert conflict.status_code == 409
            bad = client.post(f"/sessions/{sid}/action", json={"type": "explode"})
            assert bad.status_code == 400

    def test_plain_config_rejected(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            resp = client.post("/sessions", json={"case_id": "c1", "c": "none"})
            assert resp.status_code == 400

    def test_document_before_completion_conflicts(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            sid = client.post("/sessions", json={"case_id": "c1"}).json()["session_id"]
            wait_status(client, sid, "paused")
            assert client.get(f"/sessions/{sid}/document").status_code == 409


class TestRecovery:
    def test_paused_session_survives_restart(self, service_env):
        config, model, transport, tmp_path = service_env
        with TestClient(http_api(config, transport)) as client:
            sid = client.post("/sessions", json={"case_id": "c1"}).json()["session_id"]
            wait_status(client, sid, "paused")
            client.post(f"/sessions/{sid}/action", json={"type": "accept"})
            wait_status(client, sid, "paused")
        # process "restarts": fresh app over the same stores
        model2 = ScriptedChatModel(elements=list(SCRIPT))
        transport2 = MockChatTransport(model2, chunk_size=9)
        with TestClient(http_api(config, transport2)) as client:
            listed = client.get("/sessions").json()
            assert any(s["session_id"] == sid for s in listed)
            body = client.get(f"/sessions/{sid}").json()
            assert body["status"] == "paused"
            assert body["verified_count"] == 1
            assert body["pending"]["kind"] == "question"
            # resumable: keep accepting to completion
            client.post(f"/sessions/{sid}/action", json={"type": "accept"})
            for _ in range(4):
                wait_status(client, sid, "paused")
                client.post(f"/sessions/{sid}/action", json={"type": "accept"})
            body = wait_status(client, sid, "completed")
            assert body["verified_count"] == 6
            document = client.get(f"/sessions/{sid}/document").json()["document"]
            assert document == " ".join(t for k, t in SCRIPT if k == "span")


class TestEvaluate:
    def test_identity_pairs(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            resp = client.post(
                "/evaluate",
                json={"bhc": [{"hyp": "a b c d", "ref": "a b c d"}], "di": []},
            )
            assert resp.status_code == 200
            body = resp.json()
            assert body["bhc"]["rouge1"] == 1.0
            assert body["bhc"]["overall"] == body["combined"]["overall"]

    def test_empty_request_rejected(self, service_env):
        config, model, transport, _ = service_env
        with TestClient(http_api(config, transport)) as client:
            assert client.post("/evaluate", json={}).status_code == 400
