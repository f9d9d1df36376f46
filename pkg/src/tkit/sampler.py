"""Construction of sampled vocabularies for memory-lean transducer training.

A sampled vocabulary is the union of a positive set (blank plus every
label in the targets under consideration) and a negative set drawn
without replacement from a distribution over the remaining labels.
Batched mode pools positives across a minibatch and shares one vocabulary;
example-wise mode builds an independent vocabulary per example, which
keeps positive sets small and lets each example use its own sampling
distribution (e.g. its own CTC posterior).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from tkit.ctc import CtcPosterior
from tkit.numerics import SeededRng, sample_without_replacement
from tkit.rnnt import TargetSeq

Targets = Union[TargetSeq, Sequence[TargetSeq]]

BATCHED = "batched"
EXAMPLE_WISE = "example-wise"


@dataclass
class SampledVocab:
    """Ordered sampled vocabulary with its compact-index mapping.

    ``positive`` starts with the blank id; ``negative`` preserves draw
    order.  Compact index 0 is always the blank.
    """

    positive: tuple
    negative: tuple
    strategy: str
    to_compact: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.positive = tuple(int(v) for v in self.positive)
        self.negative = tuple(int(v) for v in self.negative)
        if not self.positive:
            raise ValueError("positive set must at least contain the blank")
        overlap = set(self.positive) & set(self.negative)
        if overlap:
            raise ValueError(f"positive and negative sets overlap: {sorted(overlap)}")
        ids = self.positive + self.negative
        if len(set(ids)) != len(ids):
            raise ValueError("sampled vocabulary contains duplicate ids")
        if self.strategy not in (BATCHED, EXAMPLE_WISE):
            raise ValueError(f"unknown sampling strategy: {self.strategy!r}")
        self.to_compact = {v: c for c, v in enumerate(ids)}

    @property
    def blank_id(self) -> int:
        return self.positive[0]

    @property
    def ids(self) -> np.ndarray:
        """Vocabulary ids in compact order (blank first)."""
        return np.asarray(self.positive + self.negative, dtype=np.intp)

    def __len__(self) -> int:
        return len(self.positive) + len(self.negative)


@dataclass
class SamplingDistribution:
    """Normalized weights over the full vocabulary for drawing negatives."""

    weights: np.ndarray
    source: str

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1:
            raise ValueError("weights must be a 1-D vector over the vocabulary")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")
        if abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must sum to 1")


def build_positive_set(targets: Targets, blank_id: int = 0) -> tuple:
    """Blank plus all target labels, deduplicated: blank first, rest ascending.

    A list of targets pools labels across the whole minibatch (the
    batched strategy); a single target yields its own positive set.
    """
    if isinstance(targets, TargetSeq):
        targets = [targets]
    ids = set()
    for tgt in targets:
        if tgt.blank_id != blank_id:
            raise ValueError("all targets must agree on the blank id")
        ids.update(tgt.labels)
    ids.discard(blank_id)
    return (blank_id,) + tuple(sorted(ids))


def make_uniform_distribution(vocab_size: int, positive: Sequence[int]) -> SamplingDistribution:
    """Equal weight on every label outside the positive set."""
    pos = set(positive)
    if len(pos) >= vocab_size:
        raise ValueError("positive set covers the entire vocabulary")
    weights = np.full(vocab_size, 1.0 / (vocab_size - len(pos)))
    weights[sorted(pos)] = 0.0
    return SamplingDistribution(weights, source="uniform")


def make_ctc_distribution(posterior: CtcPosterior, positive: Sequence[int],
                          source: str = "joint-ctc") -> SamplingDistribution:
    """Frame-averaged CTC posterior, zeroed on the positive set, renormalized.

    If no probability mass survives outside the positive set (degenerate
    early-training posteriors), falls back to the uniform distribution so
    sampling stays well-defined.
    """
    weights = posterior.probs.mean(axis=0)
    weights = weights.copy()
    weights[sorted(set(positive))] = 0.0
    total = weights.sum()
    if total <= 0.0:
        return SamplingDistribution(
            make_uniform_distribution(weights.size, positive).weights, source=source)
    return SamplingDistribution(weights / total, source=source)


def sample_vocab(targets: Targets, dist: SamplingDistribution, total_size: int,
                 rng: SeededRng) -> SampledVocab:
    """Positive set plus ``total_size - |positive|`` sampled negatives.

    A list of targets produces one vocabulary shared by the minibatch
    (batched); a single target produces that example's own vocabulary
    (example-wise).  ``total_size`` is the full sampled-vocabulary size;
    it must cover the positive set, clamping is never done silently.
    """
    strategy = BATCHED if not isinstance(targets, TargetSeq) else EXAMPLE_WISE
    blank_id = (targets if isinstance(targets, TargetSeq) else targets[0]).blank_id
    positive = build_positive_set(targets, blank_id)
    vocab_size = dist.weights.size
    if total_size > vocab_size:
        raise ValueError(
            f"total_size {total_size} exceeds the vocabulary size {vocab_size}")
    if total_size < len(positive):
        raise ValueError(
            f"total_size {total_size} cannot hold the positive set "
            f"of size {len(positive)}; raise total_size")
    k = total_size - len(positive)
    weights = dist.weights.copy()
    weights[list(positive)] = 0.0  # guard: positives are never negatives
    if np.count_nonzero(weights) < k:
        # distribution support too small for the request; degenerate case,
        # same fallback as an all-zero CTC distribution
        weights = make_uniform_distribution(vocab_size, positive).weights
    negative = sample_without_replacement(weights, k, rng)
    return SampledVocab(positive, tuple(int(v) for v in negative), strategy)


def sample_vocab_per_example(targets: Sequence[TargetSeq],
                             dists: Sequence[SamplingDistribution],
                             total_size: int, seed: int,
                             stream_offset: int = 0) -> list:
    """Independent example-wise vocabularies with reproducible per-example streams.

    Example ``i`` draws from stream ``stream_offset + i`` of ``seed``, so
    results do not depend on evaluation order across workers.
    """
    if len(dists) != len(targets):
        raise ValueError("need one sampling distribution per example")
    return [
        sample_vocab(tgt, dist, total_size, SeededRng(seed, stream_offset + i))
        for i, (tgt, dist) in enumerate(zip(targets, dists))
    ]
