"""Chat-completions HTTP gateway: blocking and streaming, with retries.

Speaks the de-facto standard endpoint (POST /v1/chat/completions, messages
array, SSE deltas with a [DONE] sentinel). Decoding defaults to greedy
(temperature 0, no sampling parameters). Continuation from an assistant
prefix supports the pause/edit/resume loop; two mechanisms are available:

* ``prefill``: send a trailing assistant-role message holding the prefix and
  let the endpoint continue it (vLLM-style ``continue_final_message``).
* ``instruction``: append the prefix to the user message under an explicit
  continue-exactly-from directive, for endpoints without prefill support.
  A response that repeats the prefix is stripped back to the continuation.
"""
from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

logger = logging.getLogger(__name__)

ENV_API_KEY = "CTRLGEN_API_KEY"
ENV_ENDPOINT = "CTRLGEN_ENDPOINT"

CONTINUE_INSTRUCTION = (
    "Continue the answer exactly from the end of the following prefix. "
    "Do not repeat the prefix.\n\n"
)


class GatewayError(Exception):
    pass


class Timeout(GatewayError):
    pass


class RateLimited(GatewayError):
    def __init__(self, retry_after: float | None):
        super().__init__(f"rate limited (retry-after: {retry_after})")
        self.retry_after = retry_after


class HttpStatus(GatewayError):
    def __init__(self, code: int, body: str):
        super().__init__(f"HTTP {code}: {body[:300]}")
        self.code = code
        self.body = body


class MalformedResponse(GatewayError):
    pass


class StreamInterrupted(GatewayError):
    def __init__(self, partial_text: str, cause: str = ""):
        super().__init__(f"stream interrupted after {len(partial_text)} chars {cause}")
        self.partial_text = partial_text


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5  # seconds; doubles per retry

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")


@dataclass(frozen=True)
class GatewayConfig:
    endpoint_url: str
    model_id: str
    api_key: str | None = None
    temperature: float = 0.0
    max_output_tokens: int = 4096
    request_timeout: float = 120.0
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    max_in_flight: int = 4
    prefix_mode: str = "prefill"  # "prefill" | "instruction"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.prefix_mode not in ("prefill", "instruction"):
            raise ValueError(f"unknown prefix mode: {self.prefix_mode!r}")

    @classmethod
    def from_env(cls, **overrides) -> "GatewayConfig":
        endpoint = overrides.pop("endpoint_url", None) or os.environ.get(ENV_ENDPOINT)
        if not endpoint:
            raise ValueError(f"no endpoint configured (flag, config, or {ENV_ENDPOINT})")
        api_key = overrides.pop("api_key", None) or os.environ.get(ENV_API_KEY)
        return cls(endpoint_url=endpoint, api_key=api_key, **overrides)


@dataclass(frozen=True)
class ChatRequest:
    user: str
    system: str | None = None
    assistant_prefix: str | None = None

    def __post_init__(self) -> None:
        if not self.user:
            raise ValueError("user message is empty")


@dataclass(frozen=True)
class CompletionSummary:
    text: str
    cancelled: bool = False
    chunk_count: int = 0


@dataclass
class GatewayStats:
    requests: int = 0
    backoffs: list[float] = field(default_factory=list)


ChunkSink = Callable[[str], object]  # return False to cancel the stream


class ChatGateway:
    """Thread-safe client enforcing bounded request parallelism."""

    def __init__(self, cfg: GatewayConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        self.stats = GatewayStats()
        self._stats_lock = threading.Lock()
        self._slots = threading.BoundedSemaphore(cfg.max_in_flight)
        self._client = httpx.Client(
            transport=transport, timeout=cfg.request_timeout
        )

    def close(self) -> None:
        self._client.close()

    def __enter__(self) -> "ChatGateway":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- request building ------------------------------------------------------

    def _messages(self, req: ChatRequest) -> list[dict]:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        user = req.user
        if req.assistant_prefix and self.cfg.prefix_mode == "instruction":
            user = f"{user}\n\n{CONTINUE_INSTRUCTION}{req.assistant_prefix}"
        messages.append({"role": "user", "content": user})
        if req.assistant_prefix and self.cfg.prefix_mode == "prefill":
            messages.append({"role": "assistant", "content": req.assistant_prefix})
        return messages

    def _payload(self, req: ChatRequest, stream: bool) -> dict:
        payload = {
            "model": self.cfg.model_id,
            "messages": self._messages(req),
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }
        if req.assistant_prefix and self.cfg.prefix_mode == "prefill":
            payload["continue_final_message"] = True
            payload["add_generation_prompt"] = False
        if stream:
            payload["stream"] = True
        return payload

    def _url(self) -> str:
        base = self.cfg.endpoint_url.rstrip("/")
        if base.endswith("/chat/completions"):
            return base
        if base.endswith("/v1"):
            return base + "/chat/completions"
        return base + "/v1/chat/completions"

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.cfg.api_key:
            headers["Authorization"] = f"Bearer {self.cfg.api_key}"
        return headers

    def _strip_prefix(self, req: ChatRequest, text: str) -> str:
        if (
            req.assistant_prefix
            and self.cfg.prefix_mode == "instruction"
            and text.startswith(req.assistant_prefix)
        ):
            return text[len(req.assistant_prefix):]
        return text

    # -- retry loop --------------------------------------------------------------

    def _record_backoff(self, delay: float) -> None:
        with self._stats_lock:
            self.stats.backoffs.append(delay)

    def _record_request(self) -> None:
        with self._stats_lock:
            self.stats.requests += 1

    def _with_retries(self, attempt_fn: Callable[[], object]) -> object:
        policy = self.cfg.retry
        last_error: GatewayError | None = None
        for attempt in range(policy.max_attempts):
            if attempt:
                delay = policy.backoff_base * (2 ** (attempt - 1))
                if isinstance(last_error, RateLimited) and last_error.retry_after:
                    delay = max(delay, last_error.retry_after)
                self._record_backoff(delay)
                time.sleep(delay)
            try:
                return attempt_fn()
            except (Timeout, RateLimited, MalformedResponse) as exc:
                last_error = exc
            except HttpStatus as exc:
                if exc.code < 500:
                    raise
                last_error = exc
            logger.warning("gateway attempt %d failed: %s", attempt + 1, last_error)
        raise last_error

    @staticmethod
    def _raise_for_status(response: httpx.Response, body: str) -> None:
        if response.status_code == 429:
            retry_after = response.headers.get("retry-after")
            raise RateLimited(float(retry_after) if retry_after else None)
        if response.status_code != 200:
            raise HttpStatus(response.status_code, body)

    # -- public operations ---------------------------------------------------------

    def complete(self, req: ChatRequest) -> str:
        """Blocking completion; returns the continuation after any prefix."""

        def attempt() -> str:
            self._record_request()
            with self._slots:
                try:
                    response = self._client.post(
                        self._url(), json=self._payload(req, stream=False),
                        headers=self._headers(),
                    )
                except httpx.TimeoutException as exc:
                    raise Timeout(str(exc)) from exc
                except httpx.TransportError as exc:
                    raise Timeout(str(exc)) from exc
                self._raise_for_status(response, response.text)
                try:
                    content = response.json()["choices"][0]["message"]["content"]
                except (json.JSONDecodeError, KeyError, IndexError, TypeError) as exc:
                    raise MalformedResponse(response.text[:300]) from exc
                if not isinstance(content, str):
                    raise MalformedResponse(f"non-string content: {content!r}")
                return self._strip_prefix(req, content)

        return self._with_retries(attempt)

    def stream(self, req: ChatRequest, sink: ChunkSink) -> CompletionSummary:
        """Streaming completion delivering chunks to `sink` in order.

        The sink may return False to cancel; the request is then aborted and
        the summary marked cancelled. A connection lost mid-stream raises
        StreamInterrupted carrying the text received so far. Retries apply
        only to failures before the first delivered chunk.
        """

        def attempt() -> CompletionSummary:
            self._record_request()
            received: list[str] = []
            with self._slots:
                try:
                    with self._client.stream(
                        "POST", self._url(), json=self._payload(req, stream=True),
                        headers=self._headers(),
                    ) as response:
                        if response.status_code != 200:
                            body = response.read().decode("utf-8", "replace")
                            self._raise_for_status(response, body)
                        for data in _iter_sse_data(response.iter_lines()):
                            if data == "[DONE]":
                                break
                            chunk = _delta_content(data)
                            if chunk is None:
                                continue
                            received.append(chunk)
                            if sink(chunk) is False:
                                return CompletionSummary(
                                    text=self._strip_prefix(req, "".join(received)),
                                    cancelled=True,
                                    chunk_count=len(received),
                                )
                except (httpx.TimeoutException, httpx.TransportError) as exc:
                    if received:
                        raise StreamInterrupted("".join(received), str(exc)) from exc
                    raise Timeout(str(exc)) from exc
                except MalformedResponse as exc:
                    # Chunks already reached the sink; replaying would duplicate them.
                    if received:
                        raise StreamInterrupted("".join(received), str(exc)) from exc
                    raise
            return CompletionSummary(
                text=self._strip_prefix(req, "".join(received)),
                cancelled=False,
                chunk_count=len(received),
            )

        return self._with_retries(attempt)


def _iter_sse_data(lines) -> "object":
    for line in lines:
        if isinstance(line, bytes):
            line = line.decode("utf-8", "replace")
        line = line.strip()
        if line.startswith("data:"):
            yield line[len("data:"):].strip()


def _delta_content(data: str) -> str | None:
    try:
        event = json.loads(data)
    except json.JSONDecodeError as exc:
        raise MalformedResponse(f"bad SSE payload: {data[:200]}") from exc
    try:
        choices = event["choices"]
        if not choices:
            return None
        delta = choices[0].get("delta") or {}
        content = delta.get("content")
    except (KeyError, TypeError, AttributeError) as exc:
        raise MalformedResponse(f"bad SSE event shape: {data[:200]}") from exc
    if content is None:
        return None
    if not isinstance(content, str):
        raise MalformedResponse(f"non-string delta content: {content!r}")
    return content
