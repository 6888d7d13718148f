"""Batch augmentation jobs: segmentation and guideline generation.

Jobs iterate (case, task) targets, call the gateway with bounded parallelism,
and append one record per outcome. A checkpoint file of completed keys makes
jobs resumable at per-target granularity: rerunning a finished job touches
nothing and issues zero gateway calls. Transport failures are counted per
target and the job continues.
"""
from __future__ import annotations

import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import ClinicalCase
from .gateway import ChatGateway, ChatRequest, GatewayError
from .guidelines import (
    AuthoringGuideline,
    build_instructions_prompt,
    build_segmentation_prompt,
    build_style_prompt,
    extract_split_text,
    leakage_screen,
)
from .segmentation import ParseError, parse_xml, restore_spans

logger = logging.getLogger(__name__)

TASKS = ("bhc", "di")


@dataclass
class JobStats:
    total: int = 0
    succeeded: int = 0
    rejected_consecutive: int = 0
    rejected_parse: int = 0
    failed_transport: int = 0
    skipped_checkpointed: int = 0
    leakage_warnings: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.succeeded / self.total if self.total else 0.0

    def to_record(self) -> dict:
        return {
            "total": self.total,
            "succeeded": self.succeeded,
            "rejected_consecutive": self.rejected_consecutive,
            "rejected_parse": self.rejected_parse,
            "failed_transport": self.failed_transport,
            "skipped_checkpointed": self.skipped_checkpointed,
            "leakage_warnings": self.leakage_warnings,
            "acceptance_rate": self.acceptance_rate,
        }


class Checkpoint:
    """Record-per-line file of completed (target_id, task) keys and outcomes.

    Transport failures are never checkpointed, so they are retried by the
    next run; parse/restoration outcomes are final and replay into the stats
    of a resumed run under their original counter.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._done: dict[tuple[str, str], str] = {}
        self._lock = threading.Lock()
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._done[(rec["target_id"], rec["task"])] = rec.get(
                            "outcome", "succeeded"
                        )

    def outcome(self, target_id: str, task: str) -> str | None:
        return self._done.get((target_id, task))

    def mark(self, target_id: str, task: str, outcome: str) -> None:
        with self._lock:
            self._done[(target_id, task)] = outcome
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"target_id": target_id, "task": task, "outcome": outcome}
                    )
                    + "\n"
                )
                fh.flush()


class _RecordWriter:
    """Serialized append-only JSONL writer, opened lazily on first record."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._fh = None
        # Fail fast on unwritable paths before any gateway call is spent.
        probe = open(self.path, "a", encoding="utf-8")
        probe.close()

    def write(self, record: dict) -> None:
        with self._lock:
            if self._fh is None:
                self._fh = open(self.path, "a", encoding="utf-8")
            self._fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            self._fh.flush()

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def _targets(
    cases: Iterable[ClinicalCase], tasks: Sequence[str]
) -> list[tuple[ClinicalCase, str]]:
    return [(case, task) for case in cases for task in tasks]


def run_segmentation_job(
    cases: Iterable[ClinicalCase],
    gateway: ChatGateway,
    out_path: str | Path,
    checkpoint_path: str | Path,
    tasks: Sequence[str] = TASKS,
) -> JobStats:
    """Segment every (case, task) target and restore spans against the original.

    Each output record holds the raw parse plus the restored (or rejected)
    segmentation, so acceptance statistics can be audited per rejection
    reason.
    """
    stats = JobStats()
    stats_lock = threading.Lock()
    checkpoint = Checkpoint(checkpoint_path)
    writer = _RecordWriter(out_path)

    def process(case: ClinicalCase, task: str) -> None:
        target = case.target(task)
        try:
            completion = gateway.complete(
                ChatRequest(user=build_segmentation_prompt(target))
            )
        except GatewayError as exc:
            logger.warning("segmentation %s/%s transport failure: %s", case.case_id, task, exc)
            with stats_lock:
                stats.failed_transport += 1
            return
        try:
            raw = parse_xml(
                extract_split_text(completion),
                mode="lenient",
                target_id=case.case_id,
                task=task,
            )
        except (ParseError, ValueError) as exc:
            writer.write(
                {
                    "target_id": case.case_id,
                    "task": task,
                    "status": "rejected",
                    "rejection_reason": f"parse: {exc}",
                    "segments": [],
                }
            )
            checkpoint.mark(case.case_id, task, "rejected_parse")
            with stats_lock:
                stats.rejected_parse += 1
            return
        restored = restore_spans(target, raw)
        record = restored.to_record()
        record["raw_segments"] = raw.to_record()["segments"]
        writer.write(record)
        outcome = "succeeded" if restored.status == "restored" else "rejected_consecutive"
        checkpoint.mark(case.case_id, task, outcome)
        with stats_lock:
            if restored.status == "restored":
                stats.succeeded += 1
            else:
                stats.rejected_consecutive += 1

    _run(_targets(cases, tasks), checkpoint, stats, stats_lock, process, gateway)
    writer.close()
    return stats


def run_guideline_job(
    cases: Iterable[ClinicalCase],
    kind: str,
    gateway: ChatGateway,
    out_path: str | Path,
    checkpoint_path: str | Path,
    tasks: Sequence[str] = TASKS,
    leakage_threshold: int = 5,
) -> JobStats:
    """Generate style guidelines or writing instructions per target.

    Outputs that violate the format contract (writing instructions must open
    with the literal header line) are rejected; every accepted guideline is
    leakage-screened against its target and warnings are tallied.
    """
    if kind not in ("style", "instructions"):
        raise ValueError(f"unknown guideline kind: {kind!r}")
    build_prompt = build_style_prompt if kind == "style" else build_instructions_prompt
    stats = JobStats()
    stats_lock = threading.Lock()
    checkpoint = Checkpoint(checkpoint_path)
    writer = _RecordWriter(out_path)

    def process(case: ClinicalCase, task: str) -> None:
        target = case.target(task)
        try:
            completion = gateway.complete(ChatRequest(user=build_prompt(target)))
        except GatewayError as exc:
            logger.warning("guideline %s/%s transport failure: %s", case.case_id, task, exc)
            with stats_lock:
                stats.failed_transport += 1
            return
        try:
            guideline = AuthoringGuideline(
                target_id=case.case_id,
                task=task,
                kind=kind,
                text=completion.strip(),
                model_id=gateway.cfg.model_id,
                created_at=datetime.now(timezone.utc).isoformat(),
            )
        except ValueError as exc:
            writer.write(
                {
                    "target_id": case.case_id,
                    "task": task,
                    "kind": kind,
                    "status": "rejected",
                    "rejection_reason": str(exc),
                }
            )
            checkpoint.mark(case.case_id, task, "rejected_parse")
            with stats_lock:
                stats.rejected_parse += 1
            return
        report = leakage_screen(guideline.text, target, threshold=leakage_threshold)
        record = guideline.to_record()
        record["leakage"] = {
            "max_ngram_overlap": report.max_ngram_overlap,
            "verdict": report.verdict,
            "flagged_phrases": list(report.flagged_phrases),
        }
        writer.write(record)
        checkpoint.mark(case.case_id, task, "succeeded")
        with stats_lock:
            stats.succeeded += 1
            if report.verdict == "warn":
                stats.leakage_warnings += 1
                logger.warning(
                    "guideline %s/%s leaks a %d-word run from the target",
                    case.case_id, task, report.max_ngram_overlap,
                )

    _run(_targets(cases, tasks), checkpoint, stats, stats_lock, process, gateway)
    writer.close()
    return stats


def _run(targets, checkpoint, stats, stats_lock, process, gateway) -> None:
    pending = []
    for case, task in targets:
        stats.total += 1
        done = checkpoint.outcome(case.case_id, task)
        if done is not None:
            stats.skipped_checkpointed += 1
            setattr(stats, done, getattr(stats, done) + 1)
            continue
        pending.append((case, task))
    if not pending:
        return
    workers = max(1, gateway.cfg.max_in_flight)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(process, case, task) for case, task in pending]
        for future in futures:
            future.result()
