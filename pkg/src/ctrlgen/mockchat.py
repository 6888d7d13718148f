"""Scripted chat-completions endpoint for tests and offline demos.

The model side is transport-agnostic: ``ScriptedChatModel`` answers a
chat-completions request payload with a continuation string, either from a
custom responder function or from an element script with prefix-aware
continuation (it parses the assistant prefix, lines itself up mid-document,
and serves the remainder — which is exactly what resumable sessions need).

``MockChatTransport`` adapts the model to httpx so a gateway can run against
it in-process, including SSE streaming, scripted failures, and concurrency
accounting for in-flight assertions.
"""
from __future__ import annotations

import json
import re
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import httpx

_ELEMENT_RE = re.compile(r"<(topic|question|span)>(.*?)</\1>", re.DOTALL)
_TRAILING_OPEN_RE = re.compile(r"<(topic|question|span)>([^<]*)$", re.DOTALL)


def serialize_elements(elements: Sequence[tuple[str, str]]) -> str:
    """Flat element list -> control-sequence document text."""
    parts: list[str] = []
    for kind, text in elements:
        if parts:
            parts.append("\n\n" if kind == "topic" else "\n")
        parts.append(f"<{kind}>{text}</{kind}>")
    return "".join(parts)


@dataclass
class ScriptedChatModel:
    """Deterministic stand-in for a chat model.

    Exactly one of ``elements`` (prefix-aware document continuation) or
    ``responder`` (arbitrary payload -> text) should be provided.
    """

    elements: Sequence[tuple[str, str]] | None = None
    responder: Callable[[dict], str] | None = None
    requests: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def reply(self, payload: dict) -> str:
        with self.lock:
            self.requests.append(payload)
        if self.responder is not None:
            return self.responder(payload)
        if self.elements is None:
            raise ValueError("scripted model has neither elements nor responder")
        prefix = self._assistant_prefix(payload)
        if prefix is None:
            return serialize_elements(self.elements)
        return self._continue_from(prefix)

    @staticmethod
    def _assistant_prefix(payload: dict) -> str | None:
        messages = payload.get("messages", [])
        if messages and messages[-1].get("role") == "assistant":
            return messages[-1].get("content", "")
        return None

    def _continue_from(self, prefix: str) -> str:
        done = len(_ELEMENT_RE.findall(prefix))
        trailing = _TRAILING_OPEN_RE.search(prefix)
        if done >= len(self.elements):
            return ""  # document exhausted: empty continuation signals completion
        parts: list[str] = []
        start = done
        if trailing is not None:
            kind, text = self.elements[done]
            started = trailing.group(2)
            remainder = text[len(started):] if text.startswith(started) else text
            parts.append(f"{remainder}</{kind}>")
            start = done + 1
        for kind, text in self.elements[start:]:
            parts.append("\n\n" if kind == "topic" else "\n")
            parts.append(f"<{kind}>{text}</{kind}>")
        return "".join(parts)

    # -- request log helpers ----------------------------------------------------

    def last_prefix(self) -> str | None:
        with self.lock:
            for payload in reversed(self.requests):
                prefix = self._assistant_prefix(payload)
                if prefix is not None:
                    return prefix
        return None

    def call_count(self) -> int:
        with self.lock:
            return len(self.requests)


@dataclass
class ScriptedFailure:
    """One scripted transport mishap, consumed per request in order."""

    kind: str  # "status" | "timeout" | "disconnect"
    status: int = 500
    retry_after: float | None = None
    after_chunks: int = 0  # for "disconnect": deliver this many chunks first


class _CountingStream(httpx.SyncByteStream):
    def __init__(self, chunks: Iterable[bytes], on_close, explode_after: int | None = None):
        self._chunks = list(chunks)
        self._on_close = on_close
        self._explode_after = explode_after
        self._closed = False

    def __iter__(self):
        for i, chunk in enumerate(self._chunks):
            if self._explode_after is not None and i == self._explode_after:
                raise httpx.ReadError("scripted mid-stream disconnect")
            yield chunk

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._on_close()


class MockChatTransport(httpx.BaseTransport):
    """httpx transport emulating POST /v1/chat/completions against a script."""

    def __init__(
        self,
        model: ScriptedChatModel,
        chunk_size: int = 7,
        failures: Sequence[ScriptedFailure] = (),
        latency: float = 0.0,
    ):
        self.model = model
        self.chunk_size = chunk_size
        self.failures = list(failures)
        self.latency = latency
        self.in_flight = 0
        self.max_in_flight_seen = 0
        self._lock = threading.Lock()

    def _enter(self) -> None:
        with self._lock:
            self.in_flight += 1
            self.max_in_flight_seen = max(self.max_in_flight_seen, self.in_flight)

    def _exit(self) -> None:
        with self._lock:
            self.in_flight -= 1

    def _next_failure(self) -> ScriptedFailure | None:
        with self._lock:
            return self.failures.pop(0) if self.failures else None

    def handle_request(self, request: httpx.Request) -> httpx.Response:
        if not request.url.path.endswith("/chat/completions"):
            return httpx.Response(404, text="not found")
        payload = json.loads(request.read().decode("utf-8"))
        self._enter()
        handed_to_stream = False
        try:
            failure = self._next_failure()
            if failure is not None and failure.kind == "timeout":
                raise httpx.ConnectTimeout("scripted timeout")
            if failure is not None and failure.kind == "status":
                headers = {}
                if failure.status == 429 and failure.retry_after is not None:
                    headers["retry-after"] = str(failure.retry_after)
                return httpx.Response(
                    failure.status, headers=headers, text="scripted failure"
                )
            if self.latency:
                time.sleep(self.latency)
            text = self.model.reply(payload)
            if not payload.get("stream"):
                return httpx.Response(
                    200,
                    json={"choices": [{"message": {"role": "assistant", "content": text}}]},
                )
            chunks = [
                text[i : i + self.chunk_size]
                for i in range(0, len(text), self.chunk_size)
            ]
            frames = [
                b"data: "
                + json.dumps({"choices": [{"delta": {"content": chunk}}]}).encode()
                + b"\n\n"
                for chunk in chunks
            ]
            frames.append(b"data: [DONE]\n\n")
            explode_after = (
                failure.after_chunks
                if failure is not None and failure.kind == "disconnect"
                else None
            )
            # A stream stays in flight until the response is closed.
            handed_to_stream = True
            return httpx.Response(
                200,
                headers={"content-type": "text/event-stream"},
                stream=_CountingStream(frames, self._exit, explode_after),
            )
        finally:
            if not handed_to_stream:
                self._exit()


def transport_for_elements(
    elements: Sequence[tuple[str, str]], **kwargs
) -> tuple[ScriptedChatModel, MockChatTransport]:
    model = ScriptedChatModel(elements=elements)
    return model, MockChatTransport(model, **kwargs)
