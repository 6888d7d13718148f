"""Training/evaluation prompt construction and training-set export.

A prompt pair is parameterized by (c, g, task): ``c`` selects plain vs
XML-structured output, ``g`` selects no/style/instruction guidelines, and
``task`` picks the target section. User messages assemble the clinical
context in a fixed block order; assistant messages hold the plain target or
its serialized segmentation. The literal instruction sentences below are
artifact-pinned and versioned: exports embed the template version so
downstream runs stay comparable.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from .corpus import ClinicalCase
from .guidelines import AuthoringGuideline
from .segmentation import (
    Segmentation,
    extract_headings_bullets,
    serialize_xml,
)

logger = logging.getLogger(__name__)

TEMPLATE_VERSION = "1"

DS_HEADER = "# Discharge Summary"
RR_HEADER = "# Radiology Report {index}"
BHC_HEADER = "# Brief Hospital Course"
GUIDELINE_HEADER = "# Authoring Guidelines"

COMPLY_LINE = "Comply with the authoring guidelines above."

TASK_INSTRUCTIONS = {
    "bhc": (
        "Write the Brief Hospital Course section of the discharge summary "
        "for this admission, based on the clinical context above."
    ),
    "di": (
        "Write the Discharge Instructions section of the discharge summary "
        "for this admission, based on the clinical context above."
    ),
}

XML_OUTPUT_INSTRUCTION = (
    "Generate the output as an XML-structured sequence of topic segments. "
    "For each segment emit a short topic heading, the question the segment "
    "answers, and the segment text, in this format: "
    "'<topic>...</topic>\\n<question>...</question>\\n<span>...</span>', "
    "with a blank line between segments."
)

COVER_TOPICS_INSTRUCTION = "Cover the following topics, in this order:"


class PromptConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PromptConfig:
    c: str = "none"  # "none" | "topics"
    g: str = "none"  # "none" | "style" | "instr"
    task: str = "bhc"  # "bhc" | "di"

    def __post_init__(self) -> None:
        if self.c not in ("none", "topics"):
            raise PromptConfigError(f"unknown c: {self.c!r}")
        if self.g not in ("none", "style", "instr"):
            raise PromptConfigError(f"unknown g: {self.g!r}")
        if self.task not in ("bhc", "di"):
            raise PromptConfigError(f"unknown task: {self.task!r}")

    @property
    def guideline_kind(self) -> str | None:
        return {"none": None, "style": "style", "instr": "instructions"}[self.g]


@dataclass(frozen=True)
class PromptPair:
    user: str
    assistant: str

    @property
    def completion_mask(self) -> tuple[int, int]:
        """Character interval of the assistant text trained on (all of it)."""
        return (0, len(self.assistant))


def _context_blocks(
    case: ClinicalCase,
    cfg: PromptConfig,
    guideline: AuthoringGuideline | None,
    bhc_output: str | None,
) -> list[str]:
    if cfg.task == "di" and bhc_output is None:
        raise PromptConfigError("di prompts need the brief hospital course text")
    kind = cfg.guideline_kind
    if kind is not None:
        if guideline is None:
            raise PromptConfigError(f"config g={cfg.g} needs an authoring guideline")
        if guideline.kind != kind:
            raise PromptConfigError(
                f"guideline kind mismatch: config wants {kind}, got {guideline.kind}"
            )
    elif guideline is not None:
        raise PromptConfigError("guideline provided but config g=none")

    blocks = [f"{DS_HEADER}\n{case.discharge_summary}"]
    for index, report in enumerate(case.radiology_reports, 1):
        blocks.append(f"{RR_HEADER.format(index=index)}\n{report}")
    if cfg.task == "di":
        blocks.append(f"{BHC_HEADER}\n{bhc_output}")
    if kind is not None:
        blocks.append(f"{GUIDELINE_HEADER}\n{guideline.text}\n\n{COMPLY_LINE}")
    blocks.append(TASK_INSTRUCTIONS[cfg.task])
    if cfg.c == "topics":
        blocks.append(XML_OUTPUT_INSTRUCTION)
    return blocks


def build_user_message(
    case: ClinicalCase,
    cfg: PromptConfig,
    guideline: AuthoringGuideline | None = None,
    bhc_output: str | None = None,
) -> str:
    """Training-time user message: context blocks in fixed order."""
    return "\n\n".join(_context_blocks(case, cfg, guideline, bhc_output))


def build_assistant_message(
    case: ClinicalCase,
    cfg: PromptConfig,
    seg: Segmentation | None = None,
) -> str:
    """Training-time assistant message: plain target or serialized segments."""
    if cfg.c == "none":
        return case.target(cfg.task)
    if seg is None:
        raise PromptConfigError("config c=topics needs a segmentation")
    if seg.status != "restored":
        raise PromptConfigError(
            f"config c=topics needs a restored segmentation, got {seg.status!r}"
        )
    return serialize_xml(seg)


def build_eval_user_message(
    case: ClinicalCase,
    cfg: PromptConfig,
    guideline: AuthoringGuideline | None = None,
    bhc_output: str | None = None,
    seg_for_topics: Segmentation | None = None,
) -> str:
    """Evaluation-time user message: adds the covered-topics bullet list."""
    blocks = _context_blocks(case, cfg, guideline, bhc_output)
    if cfg.c == "topics":
        if seg_for_topics is None:
            raise PromptConfigError("config c=topics needs a segmentation for topics")
        blocks.append(
            f"{COVER_TOPICS_INSTRUCTION}\n{extract_headings_bullets(seg_for_topics)}"
        )
    return "\n\n".join(blocks)


def build_prompt_pair(
    case: ClinicalCase,
    cfg: PromptConfig,
    guideline: AuthoringGuideline | None = None,
    seg: Segmentation | None = None,
) -> PromptPair:
    """Training pair; di user messages embed the gold brief hospital course."""
    bhc_output = case.target_bhc if cfg.task == "di" else None
    return PromptPair(
        user=build_user_message(case, cfg, guideline, bhc_output),
        assistant=build_assistant_message(case, cfg, seg),
    )


# --- stores ---------------------------------------------------------------

class SegmentationStore:
    """Restored segmentations keyed by (target_id, task)."""

    def __init__(self, segs: Iterable[Segmentation] = ()):
        self._by_key: dict[tuple[str, str], Segmentation] = {}
        for seg in segs:
            self._by_key[(seg.target_id, seg.task)] = seg

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "SegmentationStore":
        from .segmentation import read_segmentations

        return cls(read_segmentations(path))

    def get(self, target_id: str, task: str) -> Segmentation | None:
        return self._by_key.get((target_id, task))


class GuidelineStore:
    """Authoring guidelines keyed by (target_id, task, kind)."""

    def __init__(self, guidelines: Iterable[AuthoringGuideline] = ()):
        self._by_key: dict[tuple[str, str, str], AuthoringGuideline] = {}
        for g in guidelines:
            self._by_key[(g.target_id, g.task, g.kind)] = g

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "GuidelineStore":
        guidelines = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                if rec.get("status") == "rejected":
                    continue
                guidelines.append(AuthoringGuideline.from_record(rec))
        return cls(guidelines)

    def get(self, target_id: str, task: str, kind: str) -> AuthoringGuideline | None:
        return self._by_key.get((target_id, task, kind))


@dataclass(frozen=True)
class ExportSkip:
    case_id: str
    reason: str


@dataclass
class ExportResult:
    exported: int
    skipped: list[ExportSkip]


def export_training_set(
    cases: Iterable[ClinicalCase],
    cfg: PromptConfig,
    seg_store: SegmentationStore | None,
    guideline_store: GuidelineStore | None,
    out_path: str | Path,
    max_chars: int | None = None,
) -> ExportResult:
    """Write one chat-format record per fully augmented case.

    Cases missing a required augmentation (or with a rejected segmentation)
    are skipped with a reason rather than aborting the export.
    """
    result = ExportResult(exported=0, skipped=[])
    with open(out_path, "w", encoding="utf-8") as fh:
        for case in cases:
            seg = None
            guideline = None
            if cfg.c == "topics":
                if seg_store is None:
                    raise PromptConfigError("config c=topics needs a segmentation store")
                seg = seg_store.get(case.case_id, cfg.task)
                if seg is None or seg.status != "restored":
                    reason = "no segmentation" if seg is None else f"segmentation {seg.status}"
                    result.skipped.append(ExportSkip(case.case_id, reason))
                    continue
            kind = cfg.guideline_kind
            if kind is not None:
                if guideline_store is None:
                    raise PromptConfigError(f"config g={cfg.g} needs a guideline store")
                guideline = guideline_store.get(case.case_id, cfg.task, kind)
                if guideline is None:
                    result.skipped.append(ExportSkip(case.case_id, f"no {kind} guideline"))
                    continue
            pair = build_prompt_pair(case, cfg, guideline, seg)
            if max_chars is not None and len(pair.user) > max_chars:
                result.skipped.append(
                    ExportSkip(case.case_id, f"user message over {max_chars} chars")
                )
                continue
            record = {
                "messages": [
                    {"role": "user", "content": pair.user},
                    {"role": "assistant", "content": pair.assistant},
                ],
                "meta": {
                    "case_id": case.case_id,
                    "task": cfg.task,
                    "c": cfg.c,
                    "g": cfg.g,
                    "template_version": TEMPLATE_VERSION,
                },
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
            result.exported += 1
    for skip in result.skipped:
        logger.info("export skipped case %s: %s", skip.case_id, skip.reason)
    return result
