#!/usr/bin/env python3
"""Run the real session service against the scripted in-process endpoint.

Used by the frontend tests (and handy for UI development): the HTTP surface
is the production one; only the LLM transport is scripted.
"""
from __future__ import annotations

import argparse
import tempfile
from pathlib import Path

import uvicorn

from ctrlgen.corpus import write_cases
from ctrlgen.demo import DEMO_ELEMENTS, demo_case
from ctrlgen.gateway import GatewayConfig, RetryPolicy
from ctrlgen.mockchat import MockChatTransport, ScriptedChatModel
from ctrlgen.service import ServiceConfig, http_api


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--port", type=int, default=8420)
    parser.add_argument("--segments", type=int, default=2,
                        help="How many scripted segments the mock model produces.")
    parser.add_argument("--chunk-size", type=int, default=9)
    parser.add_argument("--state-dir", default=None,
                        help="Directory for case/session files (default: temp).")
    args = parser.parse_args()

    state_dir = Path(args.state_dir or tempfile.mkdtemp(prefix="ctrlgen-mock-"))
    state_dir.mkdir(parents=True, exist_ok=True)
    cases_path = state_dir / "cases.jsonl"
    write_cases(cases_path, [demo_case()])

    elements = list(DEMO_ELEMENTS[: args.segments * 3])
    model = ScriptedChatModel(elements=elements)
    transport = MockChatTransport(model, chunk_size=args.chunk_size)
    config = ServiceConfig(
        cases_path=str(cases_path),
        sessions_dir=str(state_dir / "sessions"),
        gateway=GatewayConfig(
            endpoint_url="http://mock.invalid",
            model_id="scripted-demo",
            retry=RetryPolicy(max_attempts=2, backoff_base=0.01),
        ),
    )
    app = http_api(config, transport=transport)
    uvicorn.run(app, host="127.0.0.1", port=args.port, log_level="warning")


if __name__ == "__main__":
    main()
