"""Incremental parser for the topic/question/span control-sequence format.

Generation output is a cycle of three XML-style elements::

    <topic>...</topic>
    <question>...</question>
    <span>...</span>

repeated per segment. The tags double as control sequences: a consumer can
stop a stream the moment an element closes, let a user intervene, and resume
from a constructed prefix. This module implements the character-level state
machine that turns an arbitrarily chunked stream into a deterministic event
sequence. The event sequence is invariant under re-chunking: text events are
emitted per character, so any partition of the same stream yields the exact
same events.

``strict`` mode demands the precise element cycle and tolerates only
whitespace between elements. ``lenient`` mode recovers from ragged LLM
output: it auto-closes an element when the next element's opening tag
appears, and discards (but counts) text outside elements.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

ELEMENT_KINDS = ("topic", "question", "span")

_OPEN = {kind: f"<{kind}>" for kind in ELEMENT_KINDS}
_CLOSE = {kind: f"</{kind}>" for kind in ELEMENT_KINDS}
_ALL_TAGS = tuple(_OPEN.values()) + tuple(_CLOSE.values())


class EventKind(str, Enum):
    TOPIC_STARTED = "TopicStarted"
    TOPIC_TEXT = "TopicText"
    TOPIC_DONE = "TopicDone"
    QUESTION_STARTED = "QuestionStarted"
    QUESTION_TEXT = "QuestionText"
    QUESTION_DONE = "QuestionDone"
    SPAN_STARTED = "SpanStarted"
    SPAN_TEXT = "SpanText"
    SPAN_DONE = "SpanDone"
    DOCUMENT_DONE = "DocumentDone"


def _event_kind(element_kind: str, phase: str) -> EventKind:
    return EventKind(element_kind.capitalize() + phase)


@dataclass(frozen=True)
class ElementEvent:
    kind: EventKind
    payload: str = ""

    @property
    def element_kind(self) -> str | None:
        """The element ("topic"/"question"/"span") this event belongs to."""
        if self.kind is EventKind.DOCUMENT_DONE:
            return None
        name = self.kind.value
        for suffix in ("Started", "Text", "Done"):
            if name.endswith(suffix):
                return name[: -len(suffix)].lower()
        return None


class ParseError(ValueError):
    """Malformed control-sequence stream; ``offset`` is a character position."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.reason = message
        self.offset = offset


@dataclass
class StreamParser:
    """Single-use state machine over one control-sequence stream.

    ``resume_in`` starts the parser inside an already-opened element of that
    kind, after ``resume_done`` elements have been completed upstream: the
    configuration a session resume reaches after replaying a verified prefix
    ending in an opening tag.
    """

    mode: str = "strict"
    resume_in: str | None = None
    resume_done: int = 0

    carry_buffer: str = ""
    element_buffer: str = ""
    completed: list[tuple[str, str]] = field(default_factory=list)
    noise_chars: int = 0
    failed: bool = False
    closed: bool = False

    def __post_init__(self) -> None:
        if self.mode not in ("strict", "lenient"):
            raise ValueError(f"unknown parser mode: {self.mode!r}")
        self._done_count = self.resume_done
        if self.resume_in is not None:
            if self.resume_in != ELEMENT_KINDS[self.resume_done % 3]:
                raise ValueError(
                    f"resume_in={self.resume_in!r} breaks the element cycle "
                    f"after {self.resume_done} completed elements"
                )
            self._in_element: str | None = self.resume_in
        else:
            self._in_element = None
        self._offset = 0  # absolute stream position of the next unseen char

    # -- public surface ------------------------------------------------------

    @property
    def state(self) -> str:
        if self.failed:
            return "Failed"
        if self.closed:
            return "Done"
        if self._in_element is not None:
            return "In" + self._in_element.capitalize()
        return "Await" + self.expected_kind.capitalize() + "Open"

    @property
    def expected_kind(self) -> str:
        """Element kind the cycle expects to open next."""
        return ELEMENT_KINDS[self._done_count % 3]

    @property
    def in_element(self) -> str | None:
        """Kind of the currently open element, if any."""
        return self._in_element

    @property
    def at_segment_boundary(self) -> bool:
        """True between elements with a whole number of segments completed."""
        return self._in_element is None and self._done_count % 3 == 0

    def feed(self, chunk: str) -> list[ElementEvent]:
        """Consume a chunk, emitting events for everything it resolves."""
        self._check_usable()
        buf = self.carry_buffer + chunk
        self.carry_buffer = ""
        base = self._offset - len(buf) + len(chunk)
        events: list[ElementEvent] = []
        self._offset += len(chunk)
        i = 0
        try:
            while i < len(buf):
                if self._in_element is not None:
                    i = self._consume_content(buf, i, base, events)
                else:
                    i = self._consume_between(buf, i, base, events)
        except ParseError:
            self.failed = True
            raise
        return events

    def close(self) -> list[ElementEvent]:
        """Signal end of stream; returns trailing events ending in DocumentDone."""
        self._check_usable()
        events: list[ElementEvent] = []
        leftover = self.carry_buffer
        self.carry_buffer = ""
        if leftover:
            # A partial tag at end of stream is just literal text.
            if self._in_element is not None:
                self._emit_text(leftover, events)
            elif self.mode == "strict" and leftover.strip():
                self.failed = True
                raise ParseError(
                    "unexpected text between elements", self._offset - len(leftover)
                )
            else:
                self.noise_chars += len(leftover)
        if self._in_element is not None:
            if self.mode == "strict":
                self.failed = True
                raise ParseError(
                    f"unclosed <{self._in_element}> at end of stream", self._offset
                )
            self._finish_element(events)
        partial = self._done_count % 3
        if partial:
            if self.mode == "strict":
                self.failed = True
                raise ParseError(
                    f"stream ended awaiting <{self.expected_kind}>", self._offset
                )
            # Lenient: drop the trailing incomplete segment.
            del self.completed[len(self.completed) - min(partial, len(self.completed)):]
            self._done_count -= partial
        if not self.completed:
            self.failed = True
            raise ParseError("no recoverable segments", self._offset)
        self.closed = True
        events.append(ElementEvent(EventKind.DOCUMENT_DONE))
        return events

    # -- internals -----------------------------------------------------------

    def _check_usable(self) -> None:
        if self.failed:
            raise ParseError("parser previously failed", self._offset)
        if self.closed:
            raise ParseError("parser already finished", self._offset)

    def _emit_text(self, text: str, events: list[ElementEvent]) -> None:
        kind = _event_kind(self._in_element, "Text")
        self.element_buffer += text
        events.extend(ElementEvent(kind, ch) for ch in text)

    def _finish_element(self, events: list[ElementEvent]) -> None:
        kind = self._in_element
        text = self.element_buffer
        self.completed.append((kind, text))
        self._done_count += 1
        self._in_element = None
        self.element_buffer = ""
        events.append(ElementEvent(_event_kind(kind, "Done"), text))

    def _start_element(self, kind: str, events: list[ElementEvent]) -> None:
        self._in_element = kind
        self.element_buffer = ""
        events.append(ElementEvent(_event_kind(kind, "Started")))

    def _carry_if_partial_tag(self, buf: str, i: int) -> bool:
        remaining = buf[i:]
        if any(tag.startswith(remaining) and len(remaining) < len(tag) for tag in _ALL_TAGS):
            self.carry_buffer = remaining
            return True
        return False

    def _consume_content(self, buf: str, i: int, base: int, events: list[ElementEvent]) -> int:
        lt = buf.find("<", i)
        if lt == -1:
            self._emit_text(buf[i:], events)
            return len(buf)
        if lt > i:
            self._emit_text(buf[i:lt], events)
            return lt
        close_tag = _CLOSE[self._in_element]
        if buf.startswith(close_tag, lt):
            self._finish_element(events)
            return lt + len(close_tag)
        if self.mode == "lenient":
            next_kind = ELEMENT_KINDS[(ELEMENT_KINDS.index(self._in_element) + 1) % 3]
            next_open = _OPEN[next_kind]
            if buf.startswith(next_open, lt):
                self._finish_element(events)
                self._start_element(next_kind, events)
                return lt + len(next_open)
        if self._carry_if_partial_tag(buf, lt):
            return len(buf)
        self._emit_text("<", events)
        return lt + 1

    def _consume_between(self, buf: str, i: int, base: int, events: list[ElementEvent]) -> int:
        expected_open = _OPEN[self.expected_kind]
        lt = buf.find("<", i)
        gap = buf[i:] if lt == -1 else buf[i:lt]
        if gap:
            if self.mode == "strict" and gap.strip():
                first_bad = i + len(gap) - len(gap.lstrip())
                raise ParseError("unexpected text between elements", base + first_bad)
            self.noise_chars += sum(1 for ch in gap if not ch.isspace())
        if lt == -1:
            return len(buf)
        if buf.startswith(expected_open, lt):
            self._start_element(self.expected_kind, events)
            return lt + len(expected_open)
        if self.mode == "strict":
            for tag in _ALL_TAGS:
                if buf.startswith(tag, lt):
                    raise ParseError(
                        f"expected <{self.expected_kind}> but found {tag}", base + lt
                    )
        if self._carry_if_partial_tag(buf, lt):
            return len(buf)
        if self.mode == "strict":
            raise ParseError("unexpected text between elements", base + lt)
        self.noise_chars += 1
        return lt + 1

    def parse_all(self, text: str) -> list[ElementEvent]:
        """Feed the whole text and close, returning every event."""
        events = self.feed(text)
        events.extend(self.close())
        return events
