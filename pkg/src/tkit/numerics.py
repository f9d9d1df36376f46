"""Log-space arithmetic, stable softmax, and seeded sampling primitives.

Probabilities are plain floats in [0, 1]; log-probabilities are plain
floats <= 0.  "Log zero" (probability exactly 0) is represented by the
sentinel ``LOG_ZERO`` rather than ``-inf`` so that lattice code never
produces NaNs from ``-inf - (-inf)``.  ``LOG_ZERO`` is absorbing under
``log_sum_exp``: ``exp(LOG_ZERO - m)`` underflows to 0.0 for any finite
``m`` of interest.

All functions are pure; random state is passed by value via ``SeededRng``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Large negative sentinel standing in for log(0).  Small enough that
# exp(LOG_ZERO) == 0.0 exactly in float64, large enough that sums of a
# few of these never reach -inf.
LOG_ZERO = -1.0e30


@dataclass(frozen=True)
class SeededRng:
    """Value-type RNG handle: identical (seed, stream) yields identical draws.

    Distinct streams derived from one seed (e.g. one per training example)
    are statistically independent; the pair is fed to a SeedSequence, so
    determinism does not depend on call order or thread schedule.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence((self.seed, self.stream)))


def log_sum_exp(values) -> float:
    """Return log(sum(exp(v))) over ``values`` with max subtraction.

    Accepts any non-empty 1-D sequence of floats.  Entries at or below
    ``LOG_ZERO`` contribute exactly nothing; if every entry is log-zero
    the result is ``LOG_ZERO``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("log_sum_exp requires a non-empty 1-D sequence")
    m = float(np.max(v))
    if m <= LOG_ZERO:
        return LOG_ZERO
    return m + float(np.log(np.sum(np.exp(v - m))))


def softmax(logits) -> np.ndarray:
    """Normalized exponentials of a non-empty vector of finite logits."""
    s = np.asarray(logits, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("softmax requires a non-empty 1-D vector")
    if np.isnan(s).any():
        raise ValueError("softmax input contains NaN")
    z = np.exp(s - np.max(s))
    return z / z.sum()


def log_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """log(softmax(x)) along ``axis``, stable for any finite input."""
    s = np.asarray(logits, dtype=np.float64)
    z = s - np.max(s, axis=axis, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=axis, keepdims=True))


def sample_without_replacement(weights, k: int, rng: SeededRng) -> np.ndarray:
    """Draw ``k`` distinct indices with probability proportional to ``weights``.

    Uses Gumbel-top-k: perturb log-weights with i.i.d. Gumbel noise and
    take the k largest.  Zero-weight indices can never be drawn.  Returns
    indices in draw order (the order sequential sampling would produce).
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("weights must be a 1-D vector")
    if np.any(w < 0) or np.isnan(w).any():
        raise ValueError("weights must be non-negative and finite")
    support = np.flatnonzero(w > 0)
    if k < 0 or k > support.size:
        raise ValueError(
            f"cannot draw {k} distinct indices from a support of size {support.size}"
        )
    if k == 0:
        return np.empty(0, dtype=np.intp)
    gumbel = rng.generator().gumbel(size=w.shape[0])
    perturbed = np.full(w.shape[0], -np.inf)
    perturbed[support] = np.log(w[support]) + gumbel[support]
    order = np.argsort(-perturbed, kind="stable")
    return order[:k]
