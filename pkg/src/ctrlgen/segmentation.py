"""Topic segmentations: XML control format, word-level diff, span restoration.

A segmentation carries ordered (heading, question, span) triples for one
target text. LLM-produced spans rarely copy the source byte-exactly, so raw
segmentations go through a restoration pass: a word-level diff aligns the
concatenated spans against the original text, segmentations with multi-word
divergence are rejected, and surviving spans are re-anchored to exact
character ranges of the original so that the spans partition it.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

from . import _kernels
from .streamparse import ParseError, StreamParser

_WORD_RE = re.compile(r"\S+")


# --- domain types -----------------------------------------------------------

@dataclass(frozen=True)
class Segment:
    heading: str
    question: str
    span: str
    char_range: tuple[int, int] | None = None

    def validate(self) -> None:
        for name in ("heading", "question", "span"):
            if not getattr(self, name).strip():
                raise ValueError(f"segment {name} is empty")


@dataclass(frozen=True)
class Segmentation:
    target_id: str
    task: str  # "bhc" | "di"
    segments: tuple[Segment, ...]
    status: str = "raw"  # "raw" | "restored" | "rejected"
    rejection_reason: str | None = None

    def __post_init__(self) -> None:
        if self.task not in ("bhc", "di"):
            raise ValueError(f"unknown task: {self.task!r}")
        if self.status not in ("raw", "restored", "rejected"):
            raise ValueError(f"unknown status: {self.status!r}")
        if self.status == "rejected" and not self.rejection_reason:
            raise ValueError("rejected segmentation needs a rejection_reason")
        if self.status != "rejected" and not self.segments:
            raise ValueError("segmentation has no segments")

    def to_record(self) -> dict:
        rec: dict = {
            "target_id": self.target_id,
            "task": self.task,
            "status": self.status,
            "segments": [
                {
                    "heading": s.heading,
                    "question": s.question,
                    "span": s.span,
                    **(
                        {"char_start": s.char_range[0], "char_end": s.char_range[1]}
                        if s.char_range is not None
                        else {}
                    ),
                }
                for s in self.segments
            ],
        }
        if self.rejection_reason is not None:
            rec["rejection_reason"] = self.rejection_reason
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Segmentation":
        segments = tuple(
            Segment(
                heading=s["heading"],
                question=s["question"],
                span=s["span"],
                char_range=(
                    (s["char_start"], s["char_end"]) if "char_start" in s else None
                ),
            )
            for s in rec["segments"]
        )
        return cls(
            target_id=rec["target_id"],
            task=rec["task"],
            segments=segments,
            status=rec["status"],
            rejection_reason=rec.get("rejection_reason"),
        )


class UnencodableElement(ValueError):
    """Element text contains a literal closing tag and cannot be serialized."""


# --- word-level edit scripts -------------------------------------------------

@dataclass(frozen=True)
class Equal:
    count: int


@dataclass(frozen=True)
class Insert:
    words: tuple[str, ...]


@dataclass(frozen=True)
class Delete:
    words: tuple[str, ...]


@dataclass(frozen=True)
class Replace:
    old_words: tuple[str, ...]
    new_words: tuple[str, ...]


EditOp = Equal | Insert | Delete | Replace


@dataclass(frozen=True)
class WordEditScript:
    """Edit script over whitespace-delimited tokens, original -> generated."""

    ops: tuple[EditOp, ...]

    def apply(self, original_words: list[str]) -> list[str]:
        out: list[str] = []
        i = 0
        for op in self.ops:
            if isinstance(op, Equal):
                out.extend(original_words[i : i + op.count])
                i += op.count
            elif isinstance(op, Delete):
                i += len(op.words)
            elif isinstance(op, Insert):
                out.extend(op.words)
            else:
                out.extend(op.new_words)
                i += len(op.old_words)
        return out


def words(text: str) -> list[str]:
    """Whitespace-delimited tokens, punctuation left attached."""
    return _WORD_RE.findall(text)


def word_spans(text: str) -> list[tuple[int, int]]:
    """Character intervals of each whitespace-delimited token."""
    return [m.span() for m in _WORD_RE.finditer(text)]


def word_diff(original: str, generated: str) -> WordEditScript:
    """Minimal LCS edit script between the two texts' word sequences.

    Ties are broken toward the earliest possible match. Adjacent runs of
    deleted and inserted words collapse into a single Replace op.
    """
    a = words(original)
    b = words(generated)
    ids_a, ids_b = _kernels.encode_tokens(a, b)
    table = _kernels.suffix_lcs_table(ids_a, ids_b)

    ops: list[EditOp] = []
    pending_del: list[str] = []
    pending_ins: list[str] = []
    equal_run = 0

    def flush_equal() -> None:
        nonlocal equal_run
        if equal_run:
            ops.append(Equal(equal_run))
            equal_run = 0

    def flush_diff() -> None:
        nonlocal pending_del, pending_ins
        if pending_del and pending_ins:
            ops.append(Replace(tuple(pending_del), tuple(pending_ins)))
        elif pending_del:
            ops.append(Delete(tuple(pending_del)))
        elif pending_ins:
            ops.append(Insert(tuple(pending_ins)))
        pending_del = []
        pending_ins = []

    i = j = 0
    n, m = len(a), len(b)
    while i < n and j < m:
        if a[i] == b[j] and table[i + 1, j + 1] + 1 == table[i, j]:
            flush_diff()
            equal_run += 1
            i += 1
            j += 1
        elif table[i + 1, j] >= table[i, j + 1]:
            flush_equal()
            pending_del.append(a[i])
            i += 1
        else:
            flush_equal()
            pending_ins.append(b[j])
            j += 1
    if i < n or j < m:
        flush_equal()
        pending_del.extend(a[i:])
        pending_ins.extend(b[j:])
    flush_diff()
    flush_equal()
    return WordEditScript(tuple(ops))


def has_consecutive_differences(script: WordEditScript) -> bool:
    """True when any difference touches two or more adjacent words.

    Covers both readings of "consecutive": a single run spanning >= 2 tokens
    on either side, and two difference ops with no Equal between them.
    """
    prev_was_diff = False
    for op in script.ops:
        if isinstance(op, Equal):
            prev_was_diff = False
            continue
        if prev_was_diff:
            return True
        if isinstance(op, Insert) and len(op.words) >= 2:
            return True
        if isinstance(op, Delete) and len(op.words) >= 2:
            return True
        if isinstance(op, Replace) and (len(op.old_words) >= 2 or len(op.new_words) >= 2):
            return True
        prev_was_diff = True
    return False


# --- XML control format -------------------------------------------------------

def serialize_xml(seg: Segmentation) -> str:
    """Emit the three-element control sequence per segment, verbatim text.

    Element text is not entity-escaped: restoration depends on byte-exact
    spans. Text containing a literal closing tag is unrepresentable.
    """
    if not seg.segments:
        raise ValueError("segmentation has no segments")
    parts = []
    for s in seg.segments:
        for tag, text in (("topic", s.heading), ("question", s.question), ("span", s.span)):
            if f"</{tag}>" in text:
                raise UnencodableElement(
                    f"<{tag}> text contains the literal closing tag '</{tag}>'"
                )
        parts.append(
            f"<topic>{s.heading}</topic>\n"
            f"<question>{s.question}</question>\n"
            f"<span>{s.span}</span>"
        )
    return "\n\n".join(parts)


def parse_xml(
    text: str,
    mode: str = "strict",
    *,
    target_id: str = "",
    task: str = "bhc",
) -> Segmentation:
    """Parse a control-sequence document into a raw Segmentation.

    Strict mode is the inverse of serialize_xml and demands the exact
    topic -> question -> span cycle; lenient mode auto-closes elements at the
    next opening tag and skips text outside elements, failing only when no
    complete segment can be recovered.
    """
    parser = StreamParser(mode=mode)
    parser.feed(text)
    parser.close()
    elements = parser.completed
    segments = tuple(
        Segment(heading=elements[k][1], question=elements[k + 1][1], span=elements[k + 2][1])
        for k in range(0, len(elements), 3)
    )
    return Segmentation(target_id=target_id, task=task, segments=segments, status="raw")


def join_spans(seg: Segmentation) -> str:
    """Plain text of the segmentation: spans joined with single spaces."""
    if not seg.segments:
        raise ValueError("segmentation has no segments")
    return " ".join(s.span for s in seg.segments)


def extract_headings_bullets(seg: Segmentation) -> str:
    """Headings as an unnumbered bullet list, one line per segment."""
    if not seg.segments:
        raise ValueError("segmentation has no segments")
    return "\n".join(f"- {s.heading}" for s in seg.segments)


# --- restoration --------------------------------------------------------------

def restore_spans(original: str, raw: Segmentation) -> Segmentation:
    """Re-anchor raw spans to exact character ranges of the original text.

    The concatenated raw spans are diffed word-by-word against the original;
    any multi-word divergence rejects the segmentation outright. Otherwise
    each span is mapped to the original words it aligns with, and character
    ranges are cut so that they partition the original exactly: each range
    runs from the start of a span's first aligned word up to the next span's
    first aligned word, gaps attaching to the preceding span.
    """
    if raw.status != "raw":
        raise ValueError(f"restore_spans needs a raw segmentation, got {raw.status!r}")
    generated = join_spans(raw)
    script = word_diff(original, generated)
    if has_consecutive_differences(script):
        return replace(
            raw, status="rejected", rejection_reason="consecutive-differences"
        )

    # Map generated word index -> original word index (None for inserts).
    gen_to_orig: list[int | None] = []
    orig_idx = 0
    for op in script.ops:
        if isinstance(op, Equal):
            gen_to_orig.extend(range(orig_idx, orig_idx + op.count))
            orig_idx += op.count
        elif isinstance(op, Delete):
            orig_idx += len(op.words)
        elif isinstance(op, Insert):
            gen_to_orig.extend([None] * len(op.words))
        else:  # Replace; the consecutive filter guarantees 1 <-> 1 here
            gen_to_orig.extend([orig_idx])
            orig_idx += len(op.old_words)

    spans = word_spans(original)
    starts: list[int] = []
    gen_pos = 0
    for s in raw.segments:
        count = len(words(s.span))
        aligned = [o for o in gen_to_orig[gen_pos : gen_pos + count] if o is not None]
        gen_pos += count
        if not aligned:
            return replace(raw, status="rejected", rejection_reason="empty-alignment")
        starts.append(aligned[0])
    if any(b <= a for a, b in zip(starts, starts[1:])):
        # Cannot happen with a monotone alignment and non-empty spans; guard anyway.
        return replace(raw, status="rejected", rejection_reason="empty-alignment")

    restored = []
    for k, s in enumerate(raw.segments):
        lo = 0 if k == 0 else spans[starts[k]][0]
        hi = len(original) if k + 1 == len(raw.segments) else spans[starts[k + 1]][0]
        restored.append(
            Segment(
                heading=s.heading,
                question=s.question,
                span=original[lo:hi],
                char_range=(lo, hi),
            )
        )
    return replace(raw, segments=tuple(restored), status="restored")


# --- persistence ---------------------------------------------------------------

def write_segmentations(path: str | Path, segs: Iterable[Segmentation]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for seg in segs:
            fh.write(json.dumps(seg.to_record(), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_segmentations(path: str | Path) -> Iterator[Segmentation]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield Segmentation.from_record(json.loads(line))


__all__ = [
    "Segment",
    "Segmentation",
    "WordEditScript",
    "Equal",
    "Insert",
    "Delete",
    "Replace",
    "UnencodableElement",
    "ParseError",
    "words",
    "word_spans",
    "word_diff",
    "has_consecutive_differences",
    "serialize_xml",
    "parse_xml",
    "join_spans",
    "extract_headings_bullets",
    "restore_spans",
    "write_segmentations",
    "read_segmentations",
]
