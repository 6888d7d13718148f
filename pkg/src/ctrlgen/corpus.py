"""Discharge corpus ingestion: section extraction and report linking.

Input is two CSV files (UTF-8, quoted fields): summaries with columns
(hadm_id, text) and radiology reports with columns (hadm_id, report_id,
text). Each summary is split into the two generation targets (brief hospital
course and discharge instructions) plus the residual summary with both
sections excised. Section boundaries are pattern-configured since header
conventions vary across hospitals.
"""
from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

logger = logging.getLogger(__name__)

DEFAULT_END_MARKERS = (
    "Medications on Admission",
    "Discharge Medications",
    "Discharge Disposition",
    "Discharge Diagnosis",
    "Discharge Condition",
    "Followup Instructions",
)


class CorpusError(Exception):
    pass


class SectionError(CorpusError):
    def __init__(self, section: str, pattern: str, message: str):
        super().__init__(f"{message} for section {section!r} (patterns: {pattern})")
        self.section = section


class NoSection(SectionError):
    def __init__(self, section: str, pattern: str):
        super().__init__(section, pattern, "no header match")


class AmbiguousSection(SectionError):
    def __init__(self, section: str, pattern: str):
        super().__init__(section, pattern, "multiple header matches")


@dataclass(frozen=True)
class SectionSpec:
    """Case-insensitive, line-anchored header patterns for the two targets."""

    bhc_header_patterns: tuple[str, ...] = ("Brief Hospital Course",)
    di_header_patterns: tuple[str, ...] = ("Discharge Instructions",)
    end_markers: tuple[str, ...] = DEFAULT_END_MARKERS

    def __post_init__(self) -> None:
        if not self.bhc_header_patterns or not self.di_header_patterns:
            raise ValueError("each section needs at least one header pattern")

    def _compile(self, patterns: Iterable[str]) -> re.Pattern:
        alternatives = "|".join(f"(?:{p})" for p in patterns)
        # A header occupies its own line, optionally ending with a colon.
        return re.compile(rf"(?im)^[ \t]*(?:{alternatives})[ \t]*:?[ \t]*$")

    def bhc_re(self) -> re.Pattern:
        return self._compile(self.bhc_header_patterns)

    def di_re(self) -> re.Pattern:
        return self._compile(self.di_header_patterns)

    def boundary_re(self) -> re.Pattern:
        markers = (
            tuple(self.bhc_header_patterns)
            + tuple(self.di_header_patterns)
            + tuple(self.end_markers)
        )
        return self._compile(markers)


@dataclass(frozen=True)
class ClinicalCase:
    """One admission: residual summary, linked reports, and the two targets."""

    case_id: str
    discharge_summary: str
    radiology_reports: tuple[str, ...]
    target_bhc: str
    target_di: str
    chief_complaint: str | None = None

    def __post_init__(self) -> None:
        if not self.target_bhc.strip() or not self.target_di.strip():
            raise ValueError(f"case {self.case_id}: empty target section")
        for name, target in (("bhc", self.target_bhc), ("di", self.target_di)):
            if target in self.discharge_summary:
                raise ValueError(
                    f"case {self.case_id}: target {name} still present in summary"
                )

    def target(self, task: str) -> str:
        if task == "bhc":
            return self.target_bhc
        if task == "di":
            return self.target_di
        raise ValueError(f"unknown task: {task!r}")

    def to_record(self) -> dict:
        return {
            "case_id": self.case_id,
            "discharge_summary": self.discharge_summary,
            "radiology_reports": list(self.radiology_reports),
            "target_bhc": self.target_bhc,
            "target_di": self.target_di,
            "chief_complaint": self.chief_complaint,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ClinicalCase":
        return cls(
            case_id=rec["case_id"],
            discharge_summary=rec["discharge_summary"],
            radiology_reports=tuple(rec["radiology_reports"]),
            target_bhc=rec["target_bhc"],
            target_di=rec["target_di"],
            chief_complaint=rec.get("chief_complaint"),
        )


@dataclass(frozen=True)
class SkipRecord:
    case_id: str
    reason: str


@dataclass
class CorpusLoadResult:
    cases: list[ClinicalCase] = field(default_factory=list)
    skipped: list[SkipRecord] = field(default_factory=list)


def _section_bounds(
    raw: str, header_re: re.Pattern, boundary_re: re.Pattern, section: str, pattern: str
) -> tuple[int, int, int]:
    """(header_start, body_start, body_end) of the single matching section."""
    matches = list(header_re.finditer(raw))
    if not matches:
        raise NoSection(section, pattern)
    if len(matches) > 1:
        raise AmbiguousSection(section, pattern)
    header = matches[0]
    body_start = raw.find("\n", header.end())
    body_start = header.end() if body_start == -1 else body_start + 1
    body_end = len(raw)
    for boundary in boundary_re.finditer(raw, body_start):
        body_end = boundary.start()
        break
    return header.start(), body_start, body_end


def extract_targets(raw_summary: str, spec: SectionSpec) -> tuple[str, str, str]:
    """Split a raw summary into (residual, bhc, di).

    The residual is the summary with both section bodies and their headers
    excised; each target is the stripped body text between its header line
    and the next section boundary.
    """
    if not raw_summary:
        raise ValueError("raw_summary is empty")
    boundary = spec.boundary_re()
    bhc_pat = "|".join(spec.bhc_header_patterns)
    di_pat = "|".join(spec.di_header_patterns)
    bhc_cut = _section_bounds(raw_summary, spec.bhc_re(), boundary, "bhc", bhc_pat)
    di_cut = _section_bounds(raw_summary, spec.di_re(), boundary, "di", di_pat)

    bhc = raw_summary[bhc_cut[1] : bhc_cut[2]].strip()
    di = raw_summary[di_cut[1] : di_cut[2]].strip()

    pieces = []
    pos = 0
    for start, _, end in sorted((bhc_cut, di_cut)):
        pieces.append(raw_summary[pos:start])
        pos = max(pos, end)
    pieces.append(raw_summary[pos:])
    residual = "".join(pieces)
    return residual, bhc, di


def _read_csv(path: str | Path, required: tuple[str, ...]) -> list[dict]:
    try:
        fh = open(path, encoding="utf-8", newline="")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing and header:
            raise CorpusError(f"{path}: missing required columns {missing}")
        if missing:  # empty file, no header at all
            return []
        return list(reader)


def load_corpus(
    summaries_path: str | Path,
    reports_path: str | Path,
    spec: SectionSpec | None = None,
) -> CorpusLoadResult:
    """Load summaries and reports, joining reports to admissions by id.

    Summaries that fail target extraction are skipped with a structured skip
    record instead of failing the load. Duplicate admission ids are an error.
    """
    spec = spec or SectionSpec()
    summaries = _read_csv(summaries_path, ("hadm_id", "text"))
    reports = _read_csv(reports_path, ("hadm_id", "report_id", "text"))

    seen: dict[str, int] = {}
    for row in summaries:
        seen[row["hadm_id"]] = seen.get(row["hadm_id"], 0) + 1
    duplicates = sorted(k for k, v in seen.items() if v > 1)
    if duplicates:
        raise CorpusError(f"duplicate admission ids in summaries: {duplicates}")

    # File order, tie-broken by report id, keeps prompts deterministic.
    by_admission: dict[str, list[tuple[int, str, str]]] = {}
    for order, row in enumerate(reports):
        by_admission.setdefault(row["hadm_id"], []).append(
            (order, row["report_id"], row["text"])
        )

    result = CorpusLoadResult()
    for row in summaries:
        case_id = row["hadm_id"]
        try:
            residual, bhc, di = extract_targets(row["text"], spec)
            linked = sorted(by_admission.get(case_id, []), key=lambda r: (r[0], r[1]))
            case = ClinicalCase(
                case_id=case_id,
                discharge_summary=residual,
                radiology_reports=tuple(text for _, _, text in linked),
                target_bhc=bhc,
                target_di=di,
            )
        except (SectionError, ValueError) as exc:
            logger.warning("skipping case %s: %s", case_id, exc)
            result.skipped.append(SkipRecord(case_id=case_id, reason=str(exc)))
            continue
        result.cases.append(case)
    return result


def write_cases(path: str | Path, cases: Iterable[ClinicalCase]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for case in cases:
            fh.write(json.dumps(case.to_record(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_cases(path: str | Path) -> Iterator[ClinicalCase]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield ClinicalCase.from_record(json.loads(line))
