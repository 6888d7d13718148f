"""Augmentation prompts and leakage screening for authoring guidelines.

Three prompt builders produce the segmentation, style-guideline, and
writing-instructions prompts. The templates are pinned verbatim, typos
included: downstream augmentations are only comparable if the prompt bytes
never drift. Each has a single payload slot for the target text.

The leakage screen is advisory observability: guideline prompts instruct the
model not to reuse source phrasing, and the screen measures how well that
held by finding the longest common word run between guideline and target.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import _kernels

TEMPLATE_VERSION = "1"

SPLIT_TEXT_OPEN = "<split-text>"
SPLIT_TEXT_CLOSE = "</split-text>"
INSTRUCTIONS_HEADER = "## Writing Instructions"

SEGMENTATION_TEMPLATE = """\
{target}

You are tasked with fine-grained topic segmentation. Given this formatted text, segment the paragraphs into as many short blocks as sensible, each with a distinct topic. Give each block a meaningful, short topic heading, summarizing the most important information from the beginning of the block for the intended audience, and a subtitle, which reformulates the topic as a question that is answered by the block.
Guidelines:
- Segment everything from the very first to the very last word/character/symbol.
- Terminate spans and insert new headings, whenever the upcoming text does not match the current running topic anymore, e.g. whenever the medical, clinical or healthcare focus changes.
- When formulating questions, do not use pronouns as the subjects, and do not use possessive pronouns.
- Do not alter the text. Copy typos, errors, mistakes and formatting from the original text.
- Include headings, symbols, separators, vertical/horizontal spacing, empty lines and other formattings with their associated blocks.
Answer format: '<split-text>\\n<topic>...</topic>\\n<question>...</question>\\n<span>...</span>\\n\\n<topic>...</topic>\\n<question>...</question>\\n<span>...</span>\\n\\n...</split-text>'"""

STYLE_TEMPLATE = """\
<text>{target}</text>

Describe the text's tone, writing style, document format, layout, composition, textual structure, use of language, use of abbreviations, use of medical jargon, the intendened audience and anything else noteworthy. Write full sentences and paragraphs.

Guidelines:
- Do not use the terms from the text.
- Do not quote the text.
- Do not give examples from the text.
- Do not reveal details about the patient."""

INSTRUCTIONS_TEMPLATE = """\
<text>{target}</text>

Please provide detailed and comprehensive writing instructions for a non-specialist to exactly reproduce the text above. The instructions should include details on:
- the purpose and intent of the text, including how it is achieved
- the intended audience, including how the audience's needs are met
- the tone of text, including how to achieve it
- the text structure and outline
- the text disposition
- the text formatting (not typographical), such as (but not only) the use of paragraphs, subheadings, introductions, closings, bullet points, list, including any apparent rules and patterns
- the use of language, including the use of abbreviations and medical jargon (if it is used), with respect to the audience
- and any other noteworty features.

Guidelines:
- Use an instructive tone for writing.
- Consider that the non-specialist will not see the original text.
- Do not use the terms from the text.
- Do not quote the text.
- Do not give examples from the text.
- Do not reveal details about the patient.

Answer format: '## Writing Instructions\\n\\n...'"""


def build_segmentation_prompt(target: str) -> str:
    if not target:
        raise ValueError("target is empty")
    return SEGMENTATION_TEMPLATE.format(target=target)


def build_style_prompt(target: str) -> str:
    if not target:
        raise ValueError("target is empty")
    return STYLE_TEMPLATE.format(target=target)


def build_instructions_prompt(target: str) -> str:
    if not target:
        raise ValueError("target is empty")
    return INSTRUCTIONS_TEMPLATE.format(target=target)


def extract_split_text(completion: str) -> str:
    """Payload between the <split-text> markers, or the whole completion.

    Model output often wraps the markers in prose; text outside them never
    carries segments, so it is dropped here and the lenient parser handles
    the rest.
    """
    start = completion.find(SPLIT_TEXT_OPEN)
    if start == -1:
        return completion
    start += len(SPLIT_TEXT_OPEN)
    end = completion.find(SPLIT_TEXT_CLOSE, start)
    return completion[start:] if end == -1 else completion[start:end]


@dataclass(frozen=True)
class AuthoringGuideline:
    """Style guideline or writing instructions generated for one target."""

    target_id: str
    task: str  # "bhc" | "di"
    kind: str  # "style" | "instructions"
    text: str
    model_id: str
    created_at: str

    def __post_init__(self) -> None:
        if self.task not in ("bhc", "di"):
            raise ValueError(f"unknown task: {self.task!r}")
        if self.kind not in ("style", "instructions"):
            raise ValueError(f"unknown guideline kind: {self.kind!r}")
        if not self.text.strip():
            raise ValueError("guideline text is empty")
        if self.kind == "instructions":
            first_line = self.text.splitlines()[0]
            if first_line != INSTRUCTIONS_HEADER:
                raise ValueError(
                    f"writing instructions must start with {INSTRUCTIONS_HEADER!r}"
                )

    def to_record(self) -> dict:
        return {
            "target_id": self.target_id,
            "task": self.task,
            "kind": self.kind,
            "text": self.text,
            "model_id": self.model_id,
            "created_at": self.created_at,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AuthoringGuideline":
        return cls(
            target_id=rec["target_id"],
            task=rec["task"],
            kind=rec["kind"],
            text=rec["text"],
            model_id=rec["model_id"],
            created_at=rec["created_at"],
        )


@dataclass(frozen=True)
class LeakageReport:
    max_ngram_overlap: int
    flagged_phrases: tuple[str, ...]
    verdict: str  # "pass" | "warn"


_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def _screen_tokens(text: str, stop_phrases: tuple[str, ...]) -> list[str]:
    for phrase in stop_phrases:
        text = re.sub(re.escape(phrase), " ", text, flags=re.IGNORECASE)
    return [t.lower() for t in _TOKEN_RE.findall(text)]


def leakage_screen(
    guideline_text: str,
    target: str,
    n: int = 2,
    threshold: int = 5,
    stop_phrases: tuple[str, ...] = (),
) -> LeakageReport:
    """Longest common word run between guideline and target.

    Tokens are case-folded with punctuation stripped; stop phrases are
    removed before comparison. Runs shorter than ``n`` words are ignored.
    The verdict is "warn" exactly when the longest run reaches ``threshold``.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    g_tokens = _screen_tokens(guideline_text, stop_phrases)
    t_tokens = _screen_tokens(target, stop_phrases)
    if not g_tokens or not t_tokens:
        return LeakageReport(0, (), "pass")

    g_ids, t_ids = _kernels.encode_tokens(g_tokens, t_tokens)
    ends = _kernels.common_run_ends(g_ids, t_ids)
    longest = int(ends.max()) if len(ends) else 0
    if longest < n:
        return LeakageReport(0, (), "pass")

    flagged: list[str] = []
    if longest >= threshold:
        seen = set()
        for i, length in enumerate(ends):
            if length == longest:
                phrase = " ".join(g_tokens[i - longest + 1 : i + 1])
                if phrase not in seen:
                    seen.add(phrase)
                    flagged.append(phrase)
    verdict = "warn" if longest >= threshold else "pass"
    return LeakageReport(longest, tuple(flagged), verdict)
