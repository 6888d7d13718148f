"""Evaluation metric ensemble: BLEU-4, ROUGE-1/2/L, METEOR, plus plugins.

The lexical metrics run in-process. Model-based metrics (semantic similarity,
factual consistency, clinical concept overlap) need neural runtimes, so they
sit behind a subprocess plugin protocol: the host writes one JSON line per
(hypothesis, reference) pair to the plugin's stdin and reads one
``{"score": x}`` line per pair from its stdout, order-preserving.

The overall score is the arithmetic mean of whichever metrics are present.
"""
from __future__ import annotations

import json
import logging
import math
import re
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass
from statistics import fmean

from . import _kernels, porter

logger = logging.getLogger(__name__)

BLEU_EPSILON = 1e-9
METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5

CORE_METRICS = ("bleu4", "rouge1", "rouge2", "rougeL", "meteor")

_SPLIT_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@dataclass(frozen=True)
class TokenizationSpec:
    case_fold: bool = True
    punctuation: str = "split"  # "split" | "keep"

    def __post_init__(self) -> None:
        if self.punctuation not in ("split", "keep"):
            raise ValueError(f"unknown punctuation mode: {self.punctuation!r}")

    def tokenize(self, text: str) -> list[str]:
        if self.case_fold:
            text = text.lower()
        if self.punctuation == "split":
            return _SPLIT_TOKEN_RE.findall(text)
        return text.split()


DEFAULT_TOKENIZATION = TokenizationSpec()


# --- lexical metrics ---------------------------------------------------------

def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(hypothesis: str, reference: str, spec: TokenizationSpec = DEFAULT_TOKENIZATION) -> float:
    """Sentence-level BLEU-4 with add-epsilon smoothing and brevity penalty."""
    hyp = spec.tokenize(hypothesis)
    ref = spec.tokenize(reference)
    if not hyp:
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        hyp_grams = _ngrams(hyp, n)
        total = sum(hyp_grams.values())
        if total == 0:
            # Hypothesis shorter than n tokens; smoothing floor applies.
            log_sum += math.log(BLEU_EPSILON)
            continue
        ref_grams = _ngrams(ref, n)
        clipped = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
        log_sum += math.log(max(clipped, BLEU_EPSILON) / total)
    brevity = 1.0 if len(hyp) >= len(ref) else math.exp(1.0 - len(ref) / len(hyp))
    return brevity * math.exp(log_sum / 4.0)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def rouge_n(
    hypothesis: str,
    reference: str,
    n: int,
    spec: TokenizationSpec = DEFAULT_TOKENIZATION,
) -> RougeScore:
    """Clipped n-gram overlap precision/recall/F1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    hyp_grams = _ngrams(spec.tokenize(hypothesis), n)
    ref_grams = _ngrams(spec.tokenize(reference), n)
    hyp_total = sum(hyp_grams.values())
    ref_total = sum(ref_grams.values())
    if hyp_total == 0 or ref_total == 0:
        return RougeScore(0.0, 0.0, 0.0)
    overlap = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
    precision = overlap / hyp_total
    recall = overlap / ref_total
    return RougeScore(precision, recall, _f1(precision, recall))


def rouge_l(
    hypothesis: str,
    reference: str,
    spec: TokenizationSpec = DEFAULT_TOKENIZATION,
) -> RougeScore:
    """Longest-common-subsequence precision/recall/F1."""
    hyp = spec.tokenize(hypothesis)
    ref = spec.tokenize(reference)
    if not hyp or not ref:
        return RougeScore(0.0, 0.0, 0.0)
    ids_h, ids_r = _kernels.encode_tokens(hyp, ref)
    lcs = _kernels.lcs_length(ids_h, ids_r)
    precision = lcs / len(hyp)
    recall = lcs / len(ref)
    return RougeScore(precision, recall, _f1(precision, recall))


def _greedy_align(
    hyp: list[str], ref: list[str], key=lambda t: t
) -> list[tuple[int, int]]:
    """In-order greedy unigram matching on key(token), earliest reference first."""
    available: dict[str, list[int]] = {}
    for j in reversed(range(len(ref))):
        available.setdefault(key(ref[j]), []).append(j)
    pairs = []
    for i, tok in enumerate(hyp):
        slots = available.get(key(tok))
        if slots:
            pairs.append((i, slots.pop()))
    return pairs


def meteor(
    hypothesis: str,
    reference: str,
    spec: TokenizationSpec = DEFAULT_TOKENIZATION,
) -> float:
    """Unigram matching in two stages (exact, then stemmed) with a
    fragmentation penalty; no synonym stage."""
    hyp = spec.tokenize(hypothesis)
    ref = spec.tokenize(reference)
    if not hyp or not ref:
        return 0.0

    pairs = _greedy_align(hyp, ref)
    matched_h = {i for i, _ in pairs}
    matched_r = {j for _, j in pairs}
    rest_h = [(i, t) for i, t in enumerate(hyp) if i not in matched_h]
    rest_r = [(j, t) for j, t in enumerate(ref) if j not in matched_r]
    stem_pairs = _greedy_align(
        [t for _, t in rest_h], [t for _, t in rest_r], key=porter.stem
    )
    pairs.extend((rest_h[a][0], rest_r[b][0]) for a, b in stem_pairs)
    pairs.sort()

    m = len(pairs)
    if m == 0:
        return 0.0
    precision = m / len(hyp)
    recall = m / len(ref)
    fmean_score = (
        precision * recall / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall)
    )
    chunks = 1
    for (h0, r0), (h1, r1) in zip(pairs, pairs[1:]):
        if h1 != h0 + 1 or r1 != r0 + 1:
            chunks += 1
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return fmean_score * (1.0 - penalty)


# --- aggregation -------------------------------------------------------------

def overall_score(metric_values: dict[str, float]) -> float:
    """Arithmetic mean of the present metric scores."""
    if not metric_values:
        raise ValueError("no metric values to aggregate")
    return fmean(metric_values.values())


@dataclass(frozen=True)
class MetricReport:
    scores: dict[str, float]
    n_pairs: int

    def __post_init__(self) -> None:
        for name, value in self.scores.items():
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"metric {name} out of range: {value}")

    @property
    def overall(self) -> float:
        return overall_score(self.scores)

    def to_record(self) -> dict:
        return {
            "overall": self.overall,
            **self.scores,
            "n_pairs": self.n_pairs,
        }


class MetricPluginError(Exception):
    def __init__(self, plugin: str, message: str):
        super().__init__(f"metric plugin {plugin!r}: {message}")
        self.plugin = plugin


def run_external_metric(
    plugin_cmd: str | list[str], pairs: list[tuple[str, str]]
) -> list[float]:
    """Score pairs with an external metric subprocess (see module docstring).

    Scores outside [0, 1] are clamped with a warning. Crashes, malformed
    lines, and count mismatches raise MetricPluginError.
    """
    cmd = shlex.split(plugin_cmd) if isinstance(plugin_cmd, str) else list(plugin_cmd)
    name = cmd[0] if cmd else "<empty>"
    payload = "".join(
        json.dumps({"hyp": h, "ref": r}, ensure_ascii=False) + "\n" for h, r in pairs
    )
    try:
        proc = subprocess.run(
            cmd, input=payload, capture_output=True, text=True, timeout=600
        )
    except OSError as exc:
        raise MetricPluginError(name, f"failed to launch: {exc}") from exc
    except subprocess.TimeoutExpired as exc:
        raise MetricPluginError(name, "timed out") from exc
    if proc.returncode != 0:
        raise MetricPluginError(
            name, f"exit code {proc.returncode}: {proc.stderr.strip()[:500]}"
        )
    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(lines) != len(pairs):
        raise MetricPluginError(
            name, f"returned {len(lines)} scores for {len(pairs)} pairs"
        )
    scores = []
    for lineno, line in enumerate(lines, 1):
        try:
            value = float(json.loads(line)["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MetricPluginError(name, f"malformed line {lineno}: {line[:200]}") from exc
        if not 0.0 <= value <= 1.0:
            clamped = min(max(value, 0.0), 1.0)
            logger.warning(
                "plugin %s returned out-of-range score %s; clamped to %s",
                name, value, clamped,
            )
            value = clamped
        scores.append(value)
    return scores


def score_pairs(
    pairs: list[tuple[str, str]], spec: TokenizationSpec = DEFAULT_TOKENIZATION
) -> dict[str, list[float]]:
    """Per-pair in-process metric scores, keyed by metric name."""
    out: dict[str, list[float]] = {name: [] for name in CORE_METRICS}
    for hyp, ref in pairs:
        out["bleu4"].append(bleu4(hyp, ref, spec))
        out["rouge1"].append(rouge_n(hyp, ref, 1, spec).f1)
        out["rouge2"].append(rouge_n(hyp, ref, 2, spec).f1)
        out["rougeL"].append(rouge_l(hyp, ref, spec).f1)
        out["meteor"].append(meteor(hyp, ref, spec))
    return out


def evaluate_corpus(
    pairs_bhc: list[tuple[str, str]],
    pairs_di: list[tuple[str, str]],
    spec: TokenizationSpec = DEFAULT_TOKENIZATION,
    plugins: dict[str, str | list[str]] | None = None,
) -> dict[str, MetricReport]:
    """Evaluate both tasks and their union.

    Returns reports keyed "bhc", "di", "combined"; tasks with no pairs are
    omitted. A failing plugin drops its metric from every report (and from
    the overall mean) with a warning rather than failing the run.
    """
    per_task_scores: dict[str, dict[str, list[float]]] = {}
    if pairs_bhc:
        per_task_scores["bhc"] = score_pairs(pairs_bhc, spec)
    if pairs_di:
        per_task_scores["di"] = score_pairs(pairs_di, spec)
    if not per_task_scores:
        raise ValueError("no pairs to evaluate")

    for plugin_name, cmd in (plugins or {}).items():
        try:
            for task, pairs in (("bhc", pairs_bhc), ("di", pairs_di)):
                if pairs:
                    per_task_scores[task][plugin_name] = run_external_metric(cmd, pairs)
        except MetricPluginError as exc:
            logger.warning("omitting metric %s: %s", plugin_name, exc)
            for task_scores in per_task_scores.values():
                task_scores.pop(plugin_name, None)

    reports: dict[str, MetricReport] = {}
    for task, task_scores in per_task_scores.items():
        reports[task] = MetricReport(
            scores={name: fmean(vals) for name, vals in task_scores.items()},
            n_pairs=len(next(iter(task_scores.values()))),
        )
    all_names = set.intersection(*(set(s) for s in per_task_scores.values()))
    combined_scores = {
        name: fmean(
            [v for s in per_task_scores.values() for v in s[name]]
        )
        for name in sorted(all_names)
    }
    n_combined = sum(len(next(iter(s.values()))) for s in per_task_scores.values())
    reports["combined"] = MetricReport(scores=combined_scores, n_pairs=n_combined)
    return reports
