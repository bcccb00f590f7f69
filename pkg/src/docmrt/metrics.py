"""Sentence- and document-level metrics (BLEU, TER, GLEU) and cost selectors.

All comparisons are on token ids. Costs are "lower is better": 1 - score for
BLEU/GLEU selectors, raw TER for TER selectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Sequence

from .textcore import Sentence, ngrams

DEFAULT_MAX_N = 4

# Longest hypothesis block considered by the TER shift search.
MAX_SHIFT_BLOCK = 10


@dataclass
class MetricScore:
    value: float
    kind: str  # "BLEU" | "TER" | "GLEU"


class CostKind(Enum):
    ONE_MINUS_SBLEU = "one_minus_sbleu"
    ONE_MINUS_DOCBLEU = "one_minus_docbleu"
    SENT_TER = "sent_ter"
    DOC_TER = "doc_ter"
    ONE_MINUS_SENT_GLEU = "one_minus_sent_gleu"
    ONE_MINUS_DOC_GLEU = "one_minus_doc_gleu"

    @property
    def is_sentence_level(self) -> bool:
        return self in (
            CostKind.ONE_MINUS_SBLEU,
            CostKind.SENT_TER,
            CostKind.ONE_MINUS_SENT_GLEU,
        )

    @property
    def is_document_level(self) -> bool:
        return not self.is_sentence_level

    @property
    def needs_source(self) -> bool:
        return self in (CostKind.ONE_MINUS_SENT_GLEU, CostKind.ONE_MINUS_DOC_GLEU)

    def as_sentence_kind(self) -> "CostKind":
        return {
            CostKind.ONE_MINUS_DOCBLEU: CostKind.ONE_MINUS_SBLEU,
            CostKind.DOC_TER: CostKind.SENT_TER,
            CostKind.ONE_MINUS_DOC_GLEU: CostKind.ONE_MINUS_SENT_GLEU,
        }.get(self, self)

    def as_document_kind(self) -> "CostKind":
        return {
            CostKind.ONE_MINUS_SBLEU: CostKind.ONE_MINUS_DOCBLEU,
            CostKind.SENT_TER: CostKind.DOC_TER,
            CostKind.ONE_MINUS_SENT_GLEU: CostKind.ONE_MINUS_DOC_GLEU,
        }.get(self, self)


def _clipped_matches(hyp: Sentence, ref: Sentence, n: int) -> tuple[int, int]:
    """(clipped match count, total hyp n-grams) for one order."""
    hyp_grams = ngrams(hyp, n)
    total = sum(hyp_grams.values())
    if total == 0:
        return 0, 0
    ref_grams = ngrams(ref, n)
    matches = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
    return matches, total


def _brevity_penalty(hyp_len: int, ref_len: int) -> float:
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def _bleu_from_stats(
    matches: list[int], totals: list[int], hyp_len: int, ref_len: int, smoothed: bool
) -> float:
    if hyp_len == 0:
        return 1.0 if ref_len == 0 else 0.0
    log_sum = 0.0
    orders = 0
    for m, t in zip(matches, totals):
        if smoothed:
            p = (m + 1.0) / (t + 1.0)  # zero-total orders contribute p = 1
        else:
            if t == 0:
                continue  # excluded from the geometric mean
            if m == 0:
                return 0.0
            p = m / t
        log_sum += math.log(p)
        orders += 1
    if orders == 0:
        return 0.0
    return _brevity_penalty(hyp_len, ref_len) * math.exp(log_sum / orders)


def sentence_bleu_smoothed(hyp: Sentence, ref: Sentence, max_n: int = DEFAULT_MAX_N) -> MetricScore:
    """Sentence BLEU with add-one smoothing on every order's counts.

    p_n = (matches_n + 1) / (total_n + 1), geometric mean over n = 1..max_n,
    times the brevity penalty. Always positive for a non-empty hypothesis.
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    stats = [_clipped_matches(hyp, ref, n) for n in range(1, max_n + 1)]
    value = _bleu_from_stats(
        [m for m, _ in stats], [t for _, t in stats], len(hyp), len(ref), smoothed=True
    )
    return MetricScore(value, "BLEU")


def corpus_bleu(
    hyps: Sequence[Sentence],
    refs: Sequence[Sentence],
    max_n: int = DEFAULT_MAX_N,
    smoothed: bool = False,
) -> MetricScore:
    """Corpus BLEU: clipped matches and totals pooled over all pairs before p_n.

    Unsmoothed by default; pooled orders with zero total n-grams are excluded
    from the geometric mean, and any remaining zero-match order gives 0.
    """
    if len(hyps) != len(refs):
        raise ValueError("hypothesis/reference count mismatch")
    if not hyps:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    for hyp, ref in zip(hyps, refs):
        for n in range(1, max_n + 1):
            m, t = _clipped_matches(hyp, ref, n)
            matches[n - 1] += m
            totals[n - 1] += t
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    value = _bleu_from_stats(matches, totals, hyp_len, ref_len, smoothed)
    return MetricScore(value, "BLEU")


def _edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Word-level Levenshtein distance with unit insert/delete/substitute costs."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, tok_b in enumerate(b, start=1):
            sub = prev[j - 1] + (tok_a != tok_b)
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, sub)
        prev = cur
    return prev[-1]


def _best_shift(hyp: list[int], ref: Sequence[int], edits: int):
    """Find the shift yielding the lowest remaining edit distance.

    A shift removes one contiguous hypothesis block (length <= MAX_SHIFT_BLOCK)
    and reinserts it at a position where the reference carries exactly the same
    tokens. Returns (new_edits, shifted_hyp) or None when no shift strictly
    reduces the edit distance. Ties keep the first candidate in scan order
    (block start, block length, destination), making the search deterministic.
    """
    best = None
    ref = list(ref)
    for i in range(len(hyp)):
        for length in range(1, min(MAX_SHIFT_BLOCK, len(hyp) - i) + 1):
            block = hyp[i : i + length]
            rest = hyp[:i] + hyp[i + length :]
            for j in range(len(rest) + 1):
                if j == i:
                    continue  # reinserting in place is a no-op
                if ref[j : j + length] != block:
                    continue
                candidate = rest[:j] + block + rest[j:]
                e = _edit_distance(candidate, ref)
                if e < edits and (best is None or e < best[0]):
                    best = (e, candidate)
    return best


def _ter_counts(hyp: Sentence, ref: Sentence) -> tuple[int, int]:
    """(edits + shifts, reference length) for one pair."""
    if len(ref) == 0:
        raise ValueError("empty reference")
    current = list(hyp)
    edits = _edit_distance(current, ref)
    shifts = 0
    while edits > 0:
        found = _best_shift(current, ref, edits)
        if found is None:
            break
        edits, current = found
        shifts += 1
    return edits + shifts, len(ref)


def ter(hyp: Sentence, ref: Sentence) -> MetricScore:
    """Translation edit rate: (edits + shifts) / |ref|.

    Edits are word-level Levenshtein operations; a shift moves one contiguous
    block to a position where it exactly matches the reference, costs 1, and is
    accepted greedily only while it strictly reduces the remaining edit
    distance.
    """
    numer, denom = _ter_counts(hyp, ref)
    return MetricScore(numer / denom, "TER")


def doc_ter(hyps: Sequence[Sentence], refs: Sequence[Sentence]) -> MetricScore:
    """Pooled document TER: sum of per-sentence (edits + shifts) over summed |ref|."""
    if len(hyps) != len(refs):
        raise ValueError("hypothesis/reference count mismatch")
    if not hyps:
        raise ValueError("empty corpus")
    numer = 0
    denom = 0
    for hyp, ref in zip(hyps, refs):
        e, r = _ter_counts(hyp, ref)
        numer += e
        denom += r
    return MetricScore(numer / denom, "TER")


def _gleu_sentence_stats(
    hyp: Sentence, src: Sentence, ref: Sentence, n: int
) -> tuple[int, int]:
    """(penalized match count, total hyp n-grams) for one order of one triple.

    The penalty counts hypothesis n-grams that match the source but not the
    reference; the numerator is floored at 0.
    """
    hyp_grams = ngrams(hyp, n)
    total = sum(hyp_grams.values())
    if total == 0:
        return 0, 0
    ref_grams = ngrams(ref, n)
    src_only = ngrams(src, n)
    for g in list(src_only):
        if g in ref_grams:
            del src_only[g]
    matches = sum(min(c, ref_grams[g]) for g, c in hyp_grams.items())
    penalty = sum(min(c, src_only[g]) for g, c in hyp_grams.items() if g in src_only)
    return max(matches - penalty, 0), total


def gleu(
    hyps: Sequence[Sentence],
    sources: Sequence[Sentence],
    refs: Sequence[Sentence],
    max_n: int = DEFAULT_MAX_N,
    smoothed: bool = False,
) -> MetricScore:
    """Single-reference GLEU pooled over the corpus.

    Per order, the numerator is matches(hyp, ref) minus hypothesis n-grams that
    appear in the source but not the reference (floored at 0 per sentence), and
    the denominator is the total hypothesis n-gram count; geometric mean over
    orders with the BLEU brevity penalty. Zero-total orders follow the same
    rules as corpus_bleu.
    """
    if not len(hyps) == len(sources) == len(refs):
        raise ValueError("hypothesis/source/reference count mismatch")
    if not hyps:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    for hyp, src, ref in zip(hyps, sources, refs):
        for n in range(1, max_n + 1):
            m, t = _gleu_sentence_stats(hyp, src, ref, n)
            matches[n - 1] += m
            totals[n - 1] += t
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    value = _bleu_from_stats(matches, totals, hyp_len, ref_len, smoothed)
    return MetricScore(value, "GLEU")


def seq_cost(
    kind: CostKind, hyp: Sentence, ref: Sentence, src: Sentence | None = None
) -> float:
    """Sentence-level cost for one hypothesis; lower is better."""
    if not kind.is_sentence_level:
        raise ValueError(f"{kind.value} is a document-level cost")
    if kind is CostKind.ONE_MINUS_SBLEU:
        return 1.0 - sentence_bleu_smoothed(hyp, ref).value
    if kind is CostKind.SENT_TER:
        return ter(hyp, ref).value
    if src is None:
        raise ValueError("GLEU cost requires a source sentence")
    return 1.0 - gleu([hyp], [src], [ref], smoothed=True).value


def doc_cost(
    kind: CostKind,
    hyps: Sequence[Sentence],
    refs: Sequence[Sentence],
    srcs: Sequence[Sentence] | None = None,
) -> float:
    """Document-level cost for an aligned hypothesis document; lower is better."""
    if not kind.is_document_level:
        raise ValueError(f"{kind.value} is a sentence-level cost")
    if kind is CostKind.ONE_MINUS_DOCBLEU:
        return 1.0 - corpus_bleu(hyps, refs).value
    if kind is CostKind.DOC_TER:
        return doc_ter(hyps, refs).value
    if srcs is None:
        raise ValueError("GLEU cost requires source sentences")
    return 1.0 - gleu(hyps, srcs, refs).value


DocCostFn = Callable[
    [Sequence[Sentence], Sequence[Sentence], "Sequence[Sentence] | None"], float
]


def document_cost_fn(kind: "CostKind | DocCostFn") -> DocCostFn:
    """Resolve a cost selector (or custom callable) to a document cost function.

    Sentence-level selectors extend additively: the cost of a document is the
    sum of per-sentence costs, matching the sentence-level risk objective.
    """
    if callable(kind) and not isinstance(kind, CostKind):
        return kind
    if kind.is_document_level:
        return lambda hyps, refs, srcs=None: doc_cost(kind, hyps, refs, srcs)

    def additive(hyps, refs, srcs=None):
        if srcs is None:
            srcs = [None] * len(hyps)
        return sum(
            seq_cost(kind, h, r, s) for h, r, s in zip(hyps, refs, srcs)
        )

    return additive
