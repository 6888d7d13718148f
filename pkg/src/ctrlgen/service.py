"""HTTP facade: session workflow, corpus browsing, and evaluation.

Sessions stream their events to clients over server-sent events; client
actions are plain POSTs. Every session appends its event records to one
JSONL log file, which doubles as crash recovery: on restart, logs are
replayed to rebuild verified elements, and paused sessions remain listable
and resumable.
"""
from __future__ import annotations

import json
import logging
import queue
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import httpx
from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from pydantic import BaseModel

from .corpus import ClinicalCase, read_cases
from .gateway import ChatGateway, GatewayConfig
from .genstream import GenerationSession, InvalidState, VerifiedElement
from .metrics import TokenizationSpec, evaluate_corpus
from .promptgen import GuidelineStore, PromptConfig, SegmentationStore

logger = logging.getLogger(__name__)

EVENTS_KEEPALIVE_SECONDS = 15.0
TERMINAL_STATUSES = ("completed", "failed")


@dataclass
class ServiceConfig:
    cases_path: str
    sessions_dir: str
    gateway: GatewayConfig
    guidelines_path: str | None = None
    segmentations_path: str | None = None
    plugins: dict[str, str] = field(default_factory=dict)


class _SessionEntry:
    """One session plus its event log and live subscribers."""

    def __init__(self, session_id: str, log_path: Path):
        self.session_id = session_id
        self.log_path = log_path
        self.lock = threading.Lock()
        self.log: list[dict] = []
        self.subscribers: list[queue.Queue] = []
        self.session: GenerationSession | None = None
        self.meta: dict = {}

    def append(self, record: dict) -> None:
        with self.lock:
            self.log.append(record)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            for q in self.subscribers:
                q.put(record)

    def subscribe(self, since: int) -> tuple[list[dict], queue.Queue]:
        with self.lock:
            backlog = [r for r in self.log if r.get("seq", 0) > since]
            q: queue.Queue = queue.Queue()
            self.subscribers.append(q)
            return backlog, q

    def unsubscribe(self, q: queue.Queue) -> None:
        with self.lock:
            if q in self.subscribers:
                self.subscribers.remove(q)


def _replay_log(records: list[dict]) -> tuple[list[VerifiedElement], VerifiedElement | None, str]:
    """Rebuild (verified, pending, status) from an event log."""
    verified: list[VerifiedElement] = []
    pending: VerifiedElement | None = None
    status = "paused"
    for rec in records:
        rtype = rec.get("type")
        if rtype == "element" and rec.get("kind", "").endswith("Done"):
            kind = rec["kind"][: -len("Done")].lower()
            if kind in ("topic", "question", "span"):
                pending = VerifiedElement(kind, rec.get("payload", ""))
        elif rtype == "action":
            action = rec.get("action")
            if action == "accept" and pending is not None:
                verified.append(pending)
            elif action == "edit" and pending is not None:
                verified.append(VerifiedElement(pending.kind, rec.get("text", "")))
            pending = None
        elif rtype == "status":
            status = rec.get("status", status)
    if status == "generating":
        # The process died mid-stream; drop the half-element and pause.
        status = "paused"
        pending = None
    return verified, pending, status


class SessionService:
    def __init__(self, config: ServiceConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        self.sessions_dir = Path(config.sessions_dir)
        self.sessions_dir.mkdir(parents=True, exist_ok=True)
        self.cases: dict[str, ClinicalCase] = {
            case.case_id: case for case in read_cases(config.cases_path)
        }
        self.guidelines = (
            GuidelineStore.from_jsonl(config.guidelines_path)
            if config.guidelines_path
            else GuidelineStore()
        )
        self.segmentations = (
            SegmentationStore.from_jsonl(config.segmentations_path)
            if config.segmentations_path
            else SegmentationStore()
        )
        self.gateway = ChatGateway(config.gateway, transport=transport)
        self.entries: dict[str, _SessionEntry] = {}
        self._lock = threading.Lock()
        self._recover_sessions()

    # -- persistence / recovery ------------------------------------------------

    def _recover_sessions(self) -> None:
        for log_path in sorted(self.sessions_dir.glob("*.jsonl")):
            session_id = log_path.stem
            entry = _SessionEntry(session_id, log_path)
            with open(log_path, encoding="utf-8") as fh:
                entry.log = [json.loads(line) for line in fh if line.strip()]
            if not entry.log or entry.log[0].get("type") != "created":
                logger.warning("ignoring malformed session log %s", log_path)
                continue
            entry.meta = entry.log[0]
            case = self.cases.get(entry.meta.get("case_id", ""))
            if case is None:
                logger.warning("session %s references unknown case", session_id)
                continue
            verified, pending, status = _replay_log(entry.log[1:])
            session = self._build_session(case, entry.meta, session_id, start=False)
            session.verified = verified
            session.pending = pending
            session.status = status
            session.event_seq = max((r.get("seq", 0) for r in entry.log), default=0)
            session.add_listener(entry.append)
            entry.session = session
            self.entries[session_id] = entry
            logger.info("recovered session %s (%s)", session_id, status)

    def _build_session(
        self, case: ClinicalCase, meta: dict, session_id: str | None, start: bool
    ) -> GenerationSession:
        cfg = PromptConfig(c=meta["c"], g=meta["g"], task=meta["task"])
        guideline = None
        if cfg.guideline_kind is not None:
            guideline = self.guidelines.get(case.case_id, cfg.task, cfg.guideline_kind)
            if guideline is None:
                raise HTTPException(
                    status_code=409,
                    detail=f"no {cfg.guideline_kind} guideline stored for case "
                    f"{case.case_id}/{cfg.task}",
                )
        session = GenerationSession(
            case,
            cfg,
            self.gateway,
            meta["mode"],
            guideline=guideline,
            bhc_output=meta.get("bhc_text"),
            session_id=session_id,
        )
        if start:
            session.start()
        return session

    # -- operations ---------------------------------------------------------------

    def create_session(self, body: "CreateSessionRequest") -> dict:
        case = self.cases.get(body.case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {body.case_id}")
        meta = {
            "type": "created",
            "case_id": body.case_id,
            "c": body.c,
            "g": body.g,
            "task": body.task,
            "mode": body.mode,
            "created_at": datetime.now(timezone.utc).isoformat(),
        }
        if body.bhc_text:
            meta["bhc_text"] = body.bhc_text
        try:
            session = self._build_session(case, meta, session_id=None, start=False)
        except (InvalidState, ValueError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        entry = _SessionEntry(
            session.session_id, self.sessions_dir / f"{session.session_id}.jsonl"
        )
        meta["session_id"] = session.session_id
        entry.meta = meta
        entry.session = session
        with self._lock:
            self.entries[session.session_id] = entry
        entry.append(meta)
        session.add_listener(entry.append)
        session.start()
        return self.describe(session.session_id)

    def _entry(self, session_id: str) -> _SessionEntry:
        entry = self.entries.get(session_id)
        if entry is None or entry.session is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return entry

    def describe(self, session_id: str) -> dict:
        entry = self._entry(session_id)
        snap = entry.session.snapshot()
        return {
            **snap,
            "case_id": entry.meta.get("case_id"),
            "created_at": entry.meta.get("created_at"),
            "links": {
                "events": f"/sessions/{session_id}/events",
                "document": f"/sessions/{session_id}/document",
            },
        }

    def apply_action(self, session_id: str, body: "ActionRequest") -> dict:
        entry = self._entry(session_id)
        try:
            entry.session.apply_user_action(body.type, body.text)
        except InvalidState as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return self.describe(session_id)

    def document(self, session_id: str) -> dict:
        entry = self._entry(session_id)
        try:
            document, seg = entry.session.finalize()
        except InvalidState as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"document": document, "segmentation": seg.to_record()}

    def event_stream(self, session_id: str, since: int):
        entry = self._entry(session_id)
        backlog, q = entry.subscribe(since)

        def frames():
            try:
                last_status = None
                for record in backlog:
                    yield _sse_frame(record)
                    if record.get("type") == "status":
                        last_status = record.get("status")
                if last_status in TERMINAL_STATUSES:
                    return
                while True:
                    try:
                        record = q.get(timeout=EVENTS_KEEPALIVE_SECONDS)
                    except queue.Empty:
                        yield ": keepalive\n\n"
                        continue
                    yield _sse_frame(record)
                    if (
                        record.get("type") == "status"
                        and record.get("status") in TERMINAL_STATUSES
                    ):
                        return
            finally:
                entry.unsubscribe(q)

        return StreamingResponse(frames(), media_type="text/event-stream")

    def shutdown(self) -> None:
        for entry in list(self.entries.values()):
            if entry.session is not None:
                entry.session.pause_for_shutdown()
        self.gateway.close()


def _sse_frame(record: dict) -> str:
    etype = record.get("type", "message")
    return f"id: {record.get('seq', 0)}\nevent: {etype}\ndata: {json.dumps(record, ensure_ascii=False)}\n\n"


# -- request/response bodies -------------------------------------------------------

class CreateSessionRequest(BaseModel):
    case_id: str
    c: str = "topics"
    g: str = "none"
    task: str = "bhc"
    mode: str = "interactive"
    bhc_text: str | None = None


class ActionRequest(BaseModel):
    type: str
    text: str | None = None


class EvaluatePair(BaseModel):
    hyp: str
    ref: str


class EvaluateRequest(BaseModel):
    bhc: list[EvaluatePair] = []
    di: list[EvaluatePair] = []


def http_api(
    config: ServiceConfig, transport: httpx.BaseTransport | None = None
) -> FastAPI:
    """Build the FastAPI application over a session service."""
    service = SessionService(config, transport=transport)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        service.shutdown()

    app = FastAPI(title="ctrlgen", lifespan=lifespan)
    app.state.service = service
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/cases")
    def list_cases() -> list[dict]:
        return [
            {
                "case_id": case.case_id,
                "n_reports": len(case.radiology_reports),
                "chief_complaint": case.chief_complaint,
            }
            for case in service.cases.values()
        ]

    @app.get("/cases/{case_id}")
    def get_case(case_id: str) -> dict:
        case = service.cases.get(case_id)
        if case is None:
            raise HTTPException(status_code=404, detail=f"unknown case {case_id}")
        return case.to_record()

    @app.get("/sessions")
    def list_sessions() -> list[dict]:
        return [service.describe(sid) for sid in list(service.entries)]

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionRequest) -> dict:
        return service.create_session(body)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return service.describe(session_id)

    @app.post("/sessions/{session_id}/action")
    def post_action(session_id: str, body: ActionRequest) -> dict:
        return service.apply_action(session_id, body)

    @app.get("/sessions/{session_id}/document")
    def get_document(session_id: str) -> dict:
        return service.document(session_id)

    @app.get("/sessions/{session_id}/events")
    def get_events(session_id: str, since: int = 0):
        return service.event_stream(session_id, since)

    @app.post("/evaluate")
    def evaluate(body: EvaluateRequest) -> dict:
        pairs_bhc = [(p.hyp, p.ref) for p in body.bhc]
        pairs_di = [(p.hyp, p.ref) for p in body.di]
        if not pairs_bhc and not pairs_di:
            raise HTTPException(status_code=400, detail="no pairs to evaluate")
        reports = evaluate_corpus(
            pairs_bhc, pairs_di, TokenizationSpec(), plugins=service.config.plugins
        )
        return {task: report.to_record() for task, report in reports.items()}

    return app
