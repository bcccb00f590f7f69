"""Sample grids and document assembly for document-level risk training.

A SampleSet holds N sampled hypotheses per sentence of a batch. Documents are
assembled either by cost rank (the n-th document takes each sentence's rank-n
sample, giving diverse document scores) or by random per-sentence assignment.
Both schemes use each grid cell exactly once across the N documents.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import metrics, model
from .metrics import CostKind
from .textcore import DocumentBatch

DOCUMENT_ENUMERATION_GUARD = 10**6


@dataclass
class SampleSet:
    """N scored hypotheses per sentence plus their sentence-level costs."""

    batch: DocumentBatch
    grid: list[list[model.ScoredHypothesis]]  # [sentence][sample]
    costs: np.ndarray  # shape (S, N)
    cost_kind: CostKind
    ranks: list[list[int]] | None = None  # per-sentence sample order, best first

    @property
    def n_sentences(self) -> int:
        return len(self.grid)

    @property
    def n_samples(self) -> int:
        return len(self.grid[0]) if self.grid else 0


@dataclass
class SampledDocument:
    """One hypothesis per sentence: an assignment in {0..N-1}^S."""

    assignment: tuple[int, ...]
    hyps: list[model.ScoredHypothesis]
    log_prob: float  # sum of member log-probs (sentences are independent)
    cost: float
    weight: float | None = None  # set by enumerate_documents


def _document_cost(sample_set: SampleSet, hyps: list[model.ScoredHypothesis]) -> float:
    cost_fn = metrics.document_cost_fn(sample_set.cost_kind)
    return cost_fn(
        [h.sentence for h in hyps],
        sample_set.batch.references,
        sample_set.batch.sources,
    )


def draw_sample_set(
    params: model.ModelParams,
    batch: DocumentBatch,
    n_samples: int,
    tau: float,
    rng: np.random.Generator,
    max_len: int,
    cost_kind: CostKind,
) -> SampleSet:
    """Draw N independent ancestral samples per sentence and score their costs.

    Duplicates are kept and the gold reference is never injected. Costs use the
    sentence-level version of cost_kind, which is also the ranking metric for
    ordered document assembly.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    seq_kind = cost_kind.as_sentence_kind() if isinstance(cost_kind, CostKind) else cost_kind
    grid: list[list[model.ScoredHypothesis]] = []
    costs = np.zeros((len(batch), n_samples))
    for s, (src, ref) in enumerate(zip(batch.sources, batch.references)):
        decoder = model.Decoder(params, src, max_len)
        row = [decoder.sample(tau, rng) for _ in range(n_samples)]
        grid.append(row)
        for n, hyp in enumerate(row):
            costs[s, n] = metrics.seq_cost(seq_kind, hyp.sentence, ref, src)
    return SampleSet(batch=batch, grid=grid, costs=costs, cost_kind=cost_kind)


def order_samples(sample_set: SampleSet) -> SampleSet:
    """Attach per-sentence rank permutations: ascending cost, best first.

    Ties break by descending log_prob, then by original sample index.
    """
    ranks = []
    for s, row in enumerate(sample_set.grid):
        order = sorted(
            range(len(row)),
            key=lambda n: (sample_set.costs[s, n], -row[n].log_prob, n),
        )
        ranks.append(order)
    return SampleSet(
        batch=sample_set.batch,
        grid=sample_set.grid,
        costs=sample_set.costs,
        cost_kind=sample_set.cost_kind,
        ranks=ranks,
    )


def _build(sample_set: SampleSet, assignments: list[tuple[int, ...]]) -> list[SampledDocument]:
    docs = []
    for assignment in assignments:
        hyps = [sample_set.grid[s][n] for s, n in enumerate(assignment)]
        docs.append(
            SampledDocument(
                assignment=assignment,
                hyps=hyps,
                log_prob=sum(h.log_prob for h in hyps),
                cost=_document_cost(sample_set, hyps),
            )
        )
    return docs


def build_documents_ordered(sample_set: SampleSet) -> list[SampledDocument]:
    """Document n concatenates the rank-n sample of every sentence."""
    if sample_set.ranks is None:
        raise ValueError("sample set is not ordered; call order_samples first")
    n_docs = sample_set.n_samples
    assignments = [
        tuple(sample_set.ranks[s][n] for s in range(sample_set.n_sentences))
        for n in range(n_docs)
    ]
    return _build(sample_set, assignments)


def build_documents_random(
    sample_set: SampleSet, rng: np.random.Generator
) -> list[SampledDocument]:
    """Assign samples to documents by an independent uniform permutation per sentence."""
    n_docs = sample_set.n_samples
    perms = [rng.permutation(n_docs) for _ in range(sample_set.n_sentences)]
    assignments = [
        tuple(int(perms[s][n]) for s in range(sample_set.n_sentences))
        for n in range(n_docs)
    ]
    return _build(sample_set, assignments)


def enumerate_documents(sample_set: SampleSet) -> list[SampledDocument]:
    """All N^S assignments, each carrying the uniform weight 1 / N^S."""
    n, s = sample_set.n_samples, sample_set.n_sentences
    total = n**s
    if total > DOCUMENT_ENUMERATION_GUARD:
        raise ValueError("document space exceeds the enumeration guard")
    docs = _build(sample_set, [tuple(a) for a in itertools.product(range(n), repeat=s)])
    weight = 1.0 / total
    for doc in docs:
        doc.weight = weight
    return docs
