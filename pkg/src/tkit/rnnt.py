"""Transducer loss over a logit lattice, full-vocabulary or sampled.

The lattice holds unnormalized joint-network scores ``s[t, u, v]`` for
``t`` in ``0..T-1`` frames and ``u`` in ``0..U`` emitted-prefix lengths.
A monotonic path through the lattice interleaves U label moves with T
blank moves (the final move is always the blank consuming the last
frame).  The loss is the negative log of the total probability over all
such paths; probabilities come from a softmax over the lattice's label
axis.  When the lattice carries a ``label_map`` the softmax denominator
runs over the mapped subset only (sampled softmax); otherwise the label
axis is the full vocabulary.

``transducer_loss`` is the production forward-backward implementation;
``transducer_loss_bruteforce`` enumerates every path explicitly and is
the ground truth the DP is validated against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from tkit.numerics import LOG_ZERO, log_softmax


@dataclass(frozen=True)
class TargetSeq:
    """Reference label sequence; labels never include the blank id."""

    labels: tuple
    blank_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(y) for y in self.labels))
        for y in self.labels:
            if y == self.blank_id:
                raise ValueError("target labels must not contain the blank id")
            if y < 0:
                raise ValueError("target labels must be non-negative ids")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class LogitLattice:
    """T x (U+1) x L array of joint logits, optionally over a sampled subset.

    ``label_map`` maps compact index -> vocabulary id.  Absent means the
    label axis is the full vocabulary indexed by id.  When present, the
    blank sits at compact index 0 by convention.
    """

    data: np.ndarray
    label_map: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError("lattice must have shape (T, U+1, L)")
        if self.data.shape[0] < 1:
            raise ValueError("lattice needs at least one frame (T >= 1)")
        if self.data.shape[2] < 1:
            raise ValueError("lattice label axis must be non-empty")
        if not np.isfinite(self.data).all():
            raise ValueError("lattice entries must be finite")
        if self.label_map is not None:
            self.label_map = np.asarray(self.label_map, dtype=np.intp)
            if self.label_map.shape != (self.data.shape[2],):
                raise ValueError("label_map length must equal the label axis size")
            if len(set(self.label_map.tolist())) != self.label_map.size:
                raise ValueError("label_map must be injective")

    @property
    def num_frames(self) -> int:
        return self.data.shape[0]

    @property
    def num_prefixes(self) -> int:
        return self.data.shape[1]

    @property
    def num_labels(self) -> int:
        return self.data.shape[2]


@dataclass
class LossResult:
    loss: float
    grad: np.ndarray = field(repr=False)


def _compact_indices(lattice: LogitLattice, target: TargetSeq):
    """Resolve (blank, target labels) to positions on the lattice label axis."""
    if lattice.num_prefixes != len(target) + 1:
        raise ValueError(
            f"lattice U-axis size {lattice.num_prefixes} does not match "
            f"target length {len(target)} + 1"
        )
    if lattice.label_map is None:
        blank_c = target.blank_id
        if blank_c >= lattice.num_labels:
            raise ValueError("blank id outside the full-vocabulary label axis")
        if any(y >= lattice.num_labels for y in target.labels):
            raise ValueError("target label outside the full-vocabulary label axis")
        return blank_c, np.asarray(target.labels, dtype=np.intp)
    inverse = {int(v): c for c, v in enumerate(lattice.label_map)}
    if inverse.get(target.blank_id) != 0:
        raise ValueError("label_map must place the blank id at compact index 0")
    try:
        compact = np.asarray([inverse[y] for y in target.labels], dtype=np.intp)
    except KeyError as exc:
        raise ValueError(f"target label {exc.args[0]} not in the sampled label map")
    return 0, compact


def _logaddexp(a: float, b: float) -> float:
    # Scalar log-space add; LOG_ZERO is absorbing.
    if a < b:
        a, b = b, a
    if b <= LOG_ZERO:
        return a
    return a + math.log1p(math.exp(b - a))


def transducer_loss(lattice: LogitLattice, target: TargetSeq) -> LossResult:
    """Negative log-probability of ``target`` plus its exact logit gradient.

    Forward variable: alpha[t, u] is the log-probability of having emitted
    y[:u] and consumed t frames on arrival at node (t, u):

        alpha[t, u] = logaddexp(alpha[t-1, u] + lp[t-1, u, blank],
                                alpha[t, u-1] + lp[t, u-1, y[u-1]])

    with alpha[0, 0] = 0 and total log-probability
    ``alpha[T-1, U] + lp[T-1, U, blank]``.  Gradients follow from the
    complementary backward variable: the occupancy of each (blank or
    label) transition, pushed through the softmax Jacobian.
    """
    blank_c, compact = _compact_indices(lattice, target)
    T, n_pref, _ = lattice.data.shape
    U = n_pref - 1

    lp = log_softmax(lattice.data, axis=2)
    lpb = lp[:, :, blank_c]  # (T, U+1)
    # lpl[t, u] = log-prob of emitting y[u+1] at node (t, u)
    lpl = lp[:, np.arange(U), compact] if U > 0 else np.empty((T, 0))

    alpha = np.full((T, U + 1), LOG_ZERO)
    alpha[0, 0] = 0.0
    for t in range(T):
        for u in range(U + 1):
            if t == 0 and u == 0:
                continue
            a = alpha[t - 1, u] + lpb[t - 1, u] if t > 0 else LOG_ZERO
            b = alpha[t, u - 1] + lpl[t, u - 1] if u > 0 else LOG_ZERO
            alpha[t, u] = _logaddexp(a, b)
    log_like = alpha[T - 1, U] + lpb[T - 1, U]

    beta = np.full((T, U + 1), LOG_ZERO)
    beta[T - 1, U] = lpb[T - 1, U]
    for t in range(T - 1, -1, -1):
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                continue
            a = lpb[t, u] + beta[t + 1, u] if t + 1 < T else LOG_ZERO
            b = lpl[t, u] + beta[t, u + 1] if u < U else LOG_ZERO
            beta[t, u] = _logaddexp(a, b)

    # Transition occupancies (posterior probability of using each move).
    blank_cont = np.full((T, U + 1), LOG_ZERO)
    blank_cont[: T - 1, :] = beta[1:, :]
    blank_cont[T - 1, U] = 0.0  # terminating blank has no continuation
    occ_blank = np.exp(alpha + lpb + blank_cont - log_like)
    occupancy = np.zeros((T, U + 1, lattice.num_labels))
    occupancy[:, :, blank_c] = occ_blank
    if U > 0:
        occ_label = np.exp(alpha[:, :U] + lpl + beta[:, 1:] - log_like)
        occupancy[:, np.arange(U), compact] += occ_label

    node_occ = occupancy.sum(axis=2, keepdims=True)
    grad = np.exp(lp) * node_occ - occupancy
    return LossResult(loss=-log_like, grad=grad)


def transducer_loss_bruteforce(lattice: LogitLattice, target: TargetSeq) -> float:
    """Loss by explicit enumeration of every monotonic path.

    A path makes U label moves and T-1 interior blank moves in any
    interleaving, then the terminating blank at (T-1, U); there are
    C(T+U-1, U) of them.  Intended for desk-scale verification only.
    """
    blank_c, compact = _compact_indices(lattice, target)
    T, n_pref, _ = lattice.data.shape
    U = n_pref - 1
    if T + U > 16:
        raise ValueError("instance too large for path enumeration (T + U > 16)")

    lp = log_softmax(lattice.data, axis=2)
    path_logps = []

    def walk(t: int, u: int, acc: float) -> None:
        if t == T - 1 and u == U:
            path_logps.append(acc + lp[t, u, blank_c])
            return
        if u < U:
            walk(t, u + 1, acc + lp[t, u, compact[u]])
        if t < T - 1:
            walk(t + 1, u, acc + lp[t, u, blank_c])

    walk(0, 0, 0.0)
    assert len(path_logps) == math.comb(T + U - 1, U)
    m = max(path_logps)
    return -(m + math.log(sum(math.exp(x - m) for x in path_logps)))


def grad_check(lattice: LogitLattice, target: TargetSeq, epsilon: float = 1e-5) -> float:
    """Max guarded relative error between analytic and central-difference grads.

    The error for each logit entry is |fd - analytic| scaled by
    max(|fd|, |analytic|, 1), so near-zero components are compared
    absolutely rather than amplified.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    analytic = transducer_loss(lattice, target).grad
    data = lattice.data
    worst = 0.0
    for idx in np.ndindex(data.shape):
        orig = data[idx]
        data[idx] = orig + epsilon
        hi = transducer_loss(lattice, target).loss
        data[idx] = orig - epsilon
        lo = transducer_loss(lattice, target).loss
        data[idx] = orig
        fd = (hi - lo) / (2 * epsilon)
        err = abs(fd - analytic[idx]) / max(abs(fd), abs(analytic[idx]), 1.0)
        worst = max(worst, err)
    return worst
