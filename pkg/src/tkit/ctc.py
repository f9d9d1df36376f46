"""CTC loss with analytic gradients and per-frame posteriors.

Serves three roles: auxiliary regularization loss on encoder outputs
(final or intermediate layer), source of the per-frame posterior that
drives negative-label sampling, and source of the label ranking used by
constrained decoding.  The forward-backward recursion runs over the
blank-interleaved extended label sequence in log space;
``ctc_loss_bruteforce`` checks it by enumerating every frame string.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from tkit.numerics import LOG_ZERO, log_softmax
from tkit.rnnt import LossResult, TargetSeq, _logaddexp


@dataclass
class CtcLogits:
    """T x V array of per-frame label scores, blank at index 0."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[0] < 1:
            raise ValueError("CTC logits must have shape (T, V) with T >= 1")
        if not np.isfinite(self.data).all():
            raise ValueError("CTC logits must be finite")


@dataclass
class CtcPosterior:
    """Per-frame distributions over the vocabulary; rows sum to 1."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 2:
            raise ValueError("posterior must have shape (T, V)")
        if not np.allclose(self.probs.sum(axis=1), 1.0, atol=1e-10):
            raise ValueError("posterior rows must each sum to 1")


def _extended_sequence(target: TargetSeq) -> np.ndarray:
    ext = np.full(2 * len(target) + 1, target.blank_id, dtype=np.intp)
    ext[1::2] = target.labels
    return ext


def _min_frames(target: TargetSeq) -> int:
    repeats = sum(a == b for a, b in zip(target.labels, target.labels[1:]))
    return len(target) + repeats


def _validate(logits: CtcLogits, target: TargetSeq) -> None:
    T, V = logits.data.shape
    if target.blank_id >= V:
        raise ValueError("blank id outside the vocabulary axis")
    if any(y >= V for y in target.labels):
        raise ValueError("target label outside the vocabulary axis")
    if T < _min_frames(target):
        raise ValueError(
            f"target of length {len(target)} unreachable in {T} frames")


def ctc_loss(logits: CtcLogits, target: TargetSeq) -> LossResult:
    """Negative log-probability of all frame strings collapsing to ``target``.

    Gradient w.r.t. the logits is ``softmax - occupancy``, where the
    occupancy of label v at frame t is the posterior probability that an
    accepted frame string emits v at t.
    """
    _validate(logits, target)
    T, V = logits.data.shape
    ext = _extended_sequence(target)
    S = ext.size
    lp = log_softmax(logits.data, axis=1)
    lpe = lp[:, ext]  # (T, S)

    # skip transition s-2 -> s allowed where ext[s] is a label differing
    # from ext[s-2]
    can_skip = np.zeros(S, dtype=bool)
    if S > 2:
        can_skip[2:] = (ext[2:] != target.blank_id) & (ext[2:] != ext[:-2])

    alpha = np.full((T, S), LOG_ZERO)
    alpha[0, 0] = lpe[0, 0]
    if S > 1:
        alpha[0, 1] = lpe[0, 1]
    for t in range(1, T):
        for s in range(S):
            a = alpha[t - 1, s]
            if s >= 1:
                a = _logaddexp(a, alpha[t - 1, s - 1])
            if can_skip[s]:
                a = _logaddexp(a, alpha[t - 1, s - 2])
            alpha[t, s] = a + lpe[t, s]
    log_like = alpha[T - 1, S - 1]
    if S > 1:
        log_like = _logaddexp(log_like, alpha[T - 1, S - 2])

    beta = np.full((T, S), LOG_ZERO)
    beta[T - 1, S - 1] = lpe[T - 1, S - 1]
    if S > 1:
        beta[T - 1, S - 2] = lpe[T - 1, S - 2]
    for t in range(T - 2, -1, -1):
        for s in range(S - 1, -1, -1):
            b = beta[t + 1, s]
            if s + 1 < S:
                b = _logaddexp(b, beta[t + 1, s + 1])
            if s + 2 < S and can_skip[s + 2]:
                b = _logaddexp(b, beta[t + 1, s + 2])
            beta[t, s] = b + lpe[t, s]

    # alpha and beta both include the emission at frame t; divide it out once
    gamma = np.exp(alpha + beta - lpe - log_like)  # (T, S)
    occupancy = np.zeros((T, V))
    for s in range(S):
        occupancy[:, ext[s]] += gamma[:, s]
    grad = np.exp(lp) * occupancy.sum(axis=1, keepdims=True) - occupancy
    return LossResult(loss=-log_like, grad=grad)


def ctc_loss_bruteforce(logits: CtcLogits, target: TargetSeq) -> float:
    """Loss by explicit enumeration of all V^T frame strings.

    Collapses each string (merge repeats, then drop blanks) and sums the
    probabilities of those matching the target.  Guarded at V^T <= 1e6.
    """
    _validate(logits, target)
    T, V = logits.data.shape
    n = V**T
    if n > 10**6:
        raise ValueError("instance too large for enumeration (V^T > 1e6)")
    probs = np.exp(log_softmax(logits.data, axis=1))
    strings = np.stack(np.unravel_index(np.arange(n), (V,) * T), axis=1)
    string_probs = np.ones(n)
    for t in range(T):
        string_probs *= probs[t, strings[:, t]]

    blank = target.blank_id
    non_blank = strings != blank
    starts = non_blank.copy()
    starts[:, 1:] &= strings[:, 1:] != strings[:, :-1]
    counts = starts.sum(axis=1)
    match = counts == len(target)
    if len(target) > 0:
        y = np.asarray(target.labels)
        emit_pos = np.cumsum(starts, axis=1) - 1  # emission index at each start
        expected = y[np.clip(emit_pos, 0, len(target) - 1)]
        match &= np.all(~starts | (strings == expected), axis=1)
    total = float(string_probs[match].sum())
    return -float(np.log(total)) if total > 0 else -LOG_ZERO


def ctc_grad_check(logits: CtcLogits, target: TargetSeq, epsilon: float = 1e-5) -> float:
    """Max guarded relative error of the analytic gradient vs central differences."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    analytic = ctc_loss(logits, target).grad
    data = logits.data
    worst = 0.0
    for idx in np.ndindex(data.shape):
        orig = data[idx]
        data[idx] = orig + epsilon
        hi = ctc_loss(logits, target).loss
        data[idx] = orig - epsilon
        lo = ctc_loss(logits, target).loss
        data[idx] = orig
        fd = (hi - lo) / (2 * epsilon)
        err = abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]), 1.0)
        worst = max(worst, err)
    return worst


def ctc_posterior(logits: CtcLogits) -> CtcPosterior:
    """Row-wise softmax of the CTC logits."""
    return CtcPosterior(np.exp(log_softmax(logits.data, axis=1)))
