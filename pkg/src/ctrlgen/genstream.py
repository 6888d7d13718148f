"""Pausable, resumable block-wise generation sessions.

A session prompts the model once to begin structured generation and then
consumes the stream through the control-sequence parser. In interactive mode
the stream is cancelled the moment an element (topic, question, or span)
closes, the element is held as pending, and the session pauses until the user
accepts, edits, or regenerates it. Resuming constructs an assistant prefix
from every verified element plus the opening tag of the next expected
element, so the model continues exactly where the user left it. A resumed
stream that delivers no further content marks the document complete.

Each session is a single-writer state machine: stream chunks and user
actions both mutate it under one lock, and a paused session never has a
request in flight (the pause is observed only after the transport closes).
"""
from __future__ import annotations

import logging
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable

from .corpus import ClinicalCase
from .gateway import ChatGateway, ChatRequest, GatewayError, StreamInterrupted
from .guidelines import AuthoringGuideline
from .promptgen import PromptConfig, build_user_message
from .segmentation import Segment, Segmentation, join_spans
from .streamparse import ELEMENT_KINDS, ElementEvent, EventKind, ParseError, StreamParser

logger = logging.getLogger(__name__)

ACTIONS = ("accept", "edit", "regenerate")
ACTIONABLE_STATUSES = ("paused", "awaiting_user")


class InvalidState(RuntimeError):
    pass


@dataclass(frozen=True)
class VerifiedElement:
    kind: str  # "topic" | "question" | "span"
    text: str


def assistant_prefix(verified: list[VerifiedElement], next_kind: str) -> str:
    """Serialized verified elements plus the opening tag of the next element.

    Elements within a segment are newline-separated; segments are separated
    by a blank line, matching the serialization of a full segmentation.
    """
    parts: list[str] = []
    for el in verified:
        if parts:
            parts.append("\n\n" if el.kind == "topic" else "\n")
        parts.append(f"<{el.kind}>{el.text}</{el.kind}>")
    if parts:
        parts.append("\n\n" if next_kind == "topic" else "\n")
    parts.append(f"<{next_kind}>")
    return "".join(parts)


# Session listeners receive dict records: {"seq", "type": "element"|"status",
# ...payload}. They are invoked under the session lock and must be fast.
SessionListener = Callable[[dict], None]


class GenerationSession:
    """Live state of one interactive or autonomous generation run."""

    def __init__(
        self,
        case: ClinicalCase,
        cfg: PromptConfig,
        gateway: ChatGateway,
        mode: str,
        *,
        guideline: AuthoringGuideline | None = None,
        bhc_output: str | None = None,
        session_id: str | None = None,
        parser_mode: str = "strict",
        system: str | None = None,
    ):
        if mode not in ("interactive", "autonomous"):
            raise ValueError(f"unknown session mode: {mode!r}")
        if cfg.c != "topics":
            raise InvalidState(
                "block-wise sessions need structured output (config c=topics)"
            )
        self.session_id = session_id or uuid.uuid4().hex
        self.case = case
        self.cfg = cfg
        self.mode = mode
        self.parser_mode = parser_mode
        self.gateway = gateway
        self.user_message = build_user_message(
            case,
            cfg,
            guideline=guideline,
            bhc_output=bhc_output or (case.target_bhc if cfg.task == "di" else None),
        )
        self.system = system

        self.verified: list[VerifiedElement] = []
        self.pending: VerifiedElement | None = None
        self.status = "generating"
        self.failure_cause: str | None = None
        self.event_seq = 0

        self._lock = threading.RLock()
        self._listeners: list[SessionListener] = []
        self._parser: StreamParser | None = None
        self._pause_after_done = False
        self._discard_leg = False
        self._lazy_started: EventKind | None = None
        self._worker: threading.Thread | None = None

    # -- observation ----------------------------------------------------------

    def add_listener(self, listener: SessionListener) -> None:
        with self._lock:
            self._listeners.append(listener)

    def snapshot(self) -> dict:
        with self._lock:
            return {
                "session_id": self.session_id,
                "status": self.status,
                "mode": self.mode,
                "task": self.cfg.task,
                "verified_count": len(self.verified),
                "pending": (
                    {"kind": self.pending.kind, "text": self.pending.text}
                    if self.pending
                    else None
                ),
                "failure_cause": self.failure_cause,
            }

    def _emit(self, record: dict) -> None:
        self.event_seq += 1
        record = {"seq": self.event_seq, **record}
        for listener in list(self._listeners):
            try:
                listener(record)
            except Exception:  # listener bugs must not poison the session
                logger.exception("session listener failed")

    def _emit_element(self, event: ElementEvent) -> None:
        self._emit({"type": "element", "kind": event.kind.value, "payload": event.payload})

    def _set_status(self, status: str, cause: str | None = None) -> None:
        self.status = status
        self.failure_cause = cause
        self._emit({"type": "status", "status": status, **({"cause": cause} if cause else {})})

    # -- stream leg -------------------------------------------------------------

    def start(self) -> "GenerationSession":
        with self._lock:
            self._launch(prefix=None, emit_started=False)
        return self

    def _next_kind(self) -> str:
        return ELEMENT_KINDS[len(self.verified) % 3]

    def _launch(self, prefix: str | None, emit_started: bool) -> None:
        next_kind = self._next_kind()
        self._parser = StreamParser(
            mode=self.parser_mode,
            resume_in=next_kind if prefix is not None else None,
            resume_done=len(self.verified) if prefix is not None else 0,
        )
        self._pause_after_done = False
        self._discard_leg = False
        self._set_status("generating")
        # A resumed element's opening tag lives in our prefix, so the parser
        # will not announce it. Emit the Started event lazily, on first
        # content, so a completion probe (empty continuation) stays silent.
        self._lazy_started = (
            EventKind(next_kind.capitalize() + "Started") if emit_started else None
        )
        request = ChatRequest(
            user=self.user_message, system=self.system, assistant_prefix=prefix
        )
        self._worker = threading.Thread(
            target=self._run_leg, args=(request,), daemon=True
        )
        self._worker.start()

    def _on_chunk(self, chunk: str) -> bool:
        with self._lock:
            if self._discard_leg:
                return False
            try:
                events = self._parser.feed(chunk)
            except ParseError as exc:
                self._discard_leg = True
                self.failure_cause = str(exc)
                return False
            if events and self._lazy_started is not None:
                self._emit_element(ElementEvent(self._lazy_started))
                self._lazy_started = None
            for event in events:
                self._emit_element(event)
                if event.kind.value.endswith("Done"):
                    element = VerifiedElement(event.element_kind, event.payload)
                    if self.mode == "interactive":
                        self.pending = element
                        self._pause_after_done = True
                        # Anything past this element in the same chunk is
                        # regenerated after verification; drop it.
                        return False
                    self.verified.append(element)
            return True

    def _run_leg(self, request: ChatRequest) -> None:
        try:
            summary = self.gateway.stream(request, self._on_chunk)
        except StreamInterrupted as exc:
            with self._lock:
                if self.mode == "interactive":
                    self._set_status("awaiting_user", f"stream interrupted: {exc}")
                else:
                    self._set_status("failed", f"stream interrupted: {exc}")
            return
        except GatewayError as exc:
            with self._lock:
                self._set_status("failed", str(exc))
            return
        with self._lock:
            if self._discard_leg:
                if self.failure_cause:  # parse error inside the chunk sink
                    self._set_status("failed", self.failure_cause)
                else:  # drained for shutdown
                    self.pending = None
                    self._set_status("paused")
                return
            if summary.cancelled and self._pause_after_done:
                self._set_status("paused")
                return
            self._finish_leg_at_eos()

    def _finish_leg_at_eos(self) -> None:
        parser = self._parser
        if self._pause_after_done:
            self._set_status("paused")
            return
        if self.mode == "autonomous":
            if parser.at_segment_boundary and self.verified:
                self._complete()
            else:
                self._set_status("failed", "stream ended mid-segment")
            return
        # Interactive: the model signals completion by ending a resumed
        # stream without producing content for the forced element.
        if (
            parser.in_element is not None
            and not parser.element_buffer.strip()
            and self.verified
            and len(self.verified) % 3 == 0
        ):
            self._complete()
            return
        if parser.in_element is not None and parser.element_buffer:
            self.pending = VerifiedElement(parser.in_element, parser.element_buffer)
            self._set_status("awaiting_user", "stream ended mid-element")
            return
        self._set_status("failed", "stream ended unexpectedly")

    def _complete(self) -> None:
        self.pending = None
        self._emit_element(ElementEvent(EventKind.DOCUMENT_DONE))
        self._set_status("completed")

    # -- user actions ---------------------------------------------------------------

    def apply_user_action(self, action: str, text: str | None = None) -> dict:
        """accept/edit/regenerate the pending element; resumes automatically."""
        if action not in ACTIONS:
            raise ValueError(f"unknown action: {action!r}")
        with self._lock:
            if self.status not in ACTIONABLE_STATUSES:
                raise InvalidState(f"cannot {action} while {self.status}")
            if self.pending is None and action != "regenerate":
                raise InvalidState(f"no pending element to {action}")
            self._emit({"type": "action", "action": action, **({"text": text} if text is not None else {})})
            if action == "accept":
                self.verified.append(self.pending)
            elif action == "edit":
                if text is None:
                    raise ValueError("edit needs replacement text")
                self.verified.append(VerifiedElement(self.pending.kind, text))
            self.pending = None
            self.resume()
            return self.snapshot()

    def resume(self) -> None:
        """Issue a continuation stream from the verified prefix."""
        with self._lock:
            if self.status in ("completed", "failed", "generating"):
                raise InvalidState(f"cannot resume while {self.status}")
            prefix = assistant_prefix(self.verified, self._next_kind())
            self._launch(prefix=prefix, emit_started=True)

    def pause_for_shutdown(self) -> None:
        """Drain a generating session to a paused state (pending dropped)."""
        with self._lock:
            if self.status != "generating":
                return
            self._discard_leg = True
        worker = self._worker
        if worker is not None:
            worker.join(timeout=10)
        with self._lock:
            if self.status == "generating":
                self.pending = None
                self._set_status("paused")

    def wait(self, timeout: float = 30.0) -> str:
        """Block until the current stream leg settles; returns the status."""
        worker = self._worker
        if worker is not None:
            worker.join(timeout)
        return self.status

    # -- finalization ------------------------------------------------------------------

    def finalize(self) -> tuple[str, Segmentation]:
        """Assemble the verified elements into a document and raw segmentation."""
        with self._lock:
            if self.status != "completed":
                raise InvalidState(f"cannot finalize a {self.status} session")
            if not self.verified or len(self.verified) % 3 != 0:
                raise InvalidState("verified elements do not form whole segments")
            segments = tuple(
                Segment(
                    heading=self.verified[i].text,
                    question=self.verified[i + 1].text,
                    span=self.verified[i + 2].text,
                )
                for i in range(0, len(self.verified), 3)
            )
            seg = Segmentation(
                target_id=self.session_id,
                task=self.cfg.task,
                segments=segments,
                status="raw",
            )
            return join_spans(seg), seg


def start_session(
    case: ClinicalCase,
    cfg: PromptConfig,
    gateway: ChatGateway,
    mode: str,
    **kwargs,
) -> GenerationSession:
    """Create and start a session; interactive runs pause at the first element."""
    session = GenerationSession(case, cfg, gateway, mode, **kwargs)
    return session.start()
