"""Transducer decoding: greedy, beam search, and CTC-derived constraints.

Both decoders walk the frame axis, choosing between emitting a label
(advance u, keep the frame) and taking blank (consume the frame).  A
constraint restricts which labels may be chosen; it never touches the
normalizer, so hypothesis scores stay genuine path log-probabilities
under the unrestricted model and constrained runs remain comparable to
unconstrained ones.

An emission cap forces a blank after EMISSION_CAP consecutive labels on
one frame.  Untrained toy models otherwise loop on a favourite label;
the cap bounds every decode at T * (EMISSION_CAP + 1) decisions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from tkit.ctc import CtcLogits, CtcPosterior, ctc_posterior
from tkit.model import ToyModel, encode, final_ctc_logits, joint_step, pred_step
from tkit.numerics import log_softmax

EMISSION_CAP = 10


@dataclass(frozen=True)
class DecodeConstraint:
    """Labels the decoder may emit.  Blank is always allowed."""

    allowed: frozenset
    k: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "allowed", frozenset(int(v) for v in self.allowed))
        if 0 not in self.allowed:
            raise ValueError("blank must always be allowed")
        if any(v < 0 for v in self.allowed):
            raise ValueError("allowed ids must be non-negative")

    def mask(self, vocab_size: int) -> np.ndarray:
        if max(self.allowed) >= vocab_size:
            raise ValueError("constraint references an id outside the vocabulary")
        out = np.zeros(vocab_size, dtype=bool)
        out[sorted(self.allowed)] = True
        return out


@dataclass(frozen=True)
class Hypothesis:
    """A completed emission path: labels, its log-probability, and the
    prediction-net state after the last label."""

    labels: tuple
    score: float
    pred_state: np.ndarray = field(compare=False, repr=False, default=None)


def build_ctc_constraint(posterior: CtcPosterior, k: int) -> DecodeConstraint:
    """Top-k labels of the frame-averaged CTC posterior, plus blank.

    Ties at the k-th rank go to the smaller vocabulary id, so the
    result is deterministic and always holds exactly k labels.
    """
    avg = posterior.probs.mean(axis=0)
    vocab_size = avg.shape[0]
    if not 1 <= k <= vocab_size - 1:
        raise ValueError(f"k must be in [1, {vocab_size - 1}], got {k}")
    ranked = sorted(range(1, vocab_size), key=lambda v: (-avg[v], v))
    return DecodeConstraint(frozenset([0] + ranked[:k]), k=k)


def _choice_mask(model: ToyModel, constraint: Optional[DecodeConstraint]) -> np.ndarray:
    if constraint is None:
        return np.ones(model.vocab_size, dtype=bool)
    return constraint.mask(model.vocab_size)


def greedy_hypothesis(model: ToyModel, features: np.ndarray,
                      constraint: Optional[DecodeConstraint] = None,
                      emission_cap: int = EMISSION_CAP) -> Hypothesis:
    """Greedy decode, keeping the path score and final state."""
    h_enc, _, _ = encode(model, features)
    mask = _choice_mask(model, constraint)
    return _greedy_from_encoding(model, h_enc, mask, emission_cap)


def _greedy_from_encoding(model: ToyModel, h_enc: np.ndarray, mask: np.ndarray,
                          emission_cap: int) -> Hypothesis:
    T = h_enc.shape[0]
    state = model.params["pred_h0"]
    labels = []
    score = 0.0
    t = 0
    consec = 0
    while t < T:
        lp = log_softmax(joint_step(model, h_enc[t], state))
        if consec >= emission_cap:
            choice = 0
        else:
            choice = int(np.argmax(np.where(mask, lp, -np.inf)))
        score += lp[choice]
        if choice == model.blank_id:
            t += 1
            consec = 0
        else:
            labels.append(choice)
            state = pred_step(model, state, choice)
            consec += 1
    return Hypothesis(tuple(labels), score, state)


def greedy_decode(model: ToyModel, features: np.ndarray,
                  constraint: Optional[DecodeConstraint] = None,
                  emission_cap: int = EMISSION_CAP) -> list:
    """Argmax decoding; returns the emitted label ids."""
    return list(greedy_hypothesis(model, features, constraint, emission_cap).labels)


def beam_search(model: ToyModel, features: np.ndarray, beam: int,
                constraint: Optional[DecodeConstraint] = None,
                emission_cap: int = EMISSION_CAP) -> Hypothesis:
    """Best-path beam search over label-emission prefixes.

    The frontier advances one decision (label or blank) at a time;
    hypotheses reaching the same (labels, frame, streak) state keep only
    their best-scoring path.  The greedy path always competes in the
    final ranking, so the winner never scores below it.  Ties break by
    smaller label id, then shorter prefix.
    """
    if beam < 1:
        raise ValueError("beam must be at least 1")
    h_enc, _, _ = encode(model, features)
    mask = _choice_mask(model, constraint)
    label_ids = [int(v) for v in np.nonzero(mask)[0] if v != model.blank_id]
    T = h_enc.shape[0]

    # frontier entries: (labels, t, consec) -> (score, pred_state);
    # t == T marks a finished path, kept in the pool so it competes
    # against unfinished ones in every pruning round
    frontier = {((), 0, 0): (0.0, model.params["pred_h0"])}
    while any(key[1] < T for key in frontier):
        children = {}

        def keep(key, score, state, emitted):
            prev = children.get(key)
            if prev is None or score > prev[0]:
                children[key] = (score, state, emitted)

        for (labels, t, consec), (score, state) in frontier.items():
            if t == T:
                keep((labels, t, consec), score, state, None)
                continue
            lp = log_softmax(joint_step(model, h_enc[t], state))
            keep((labels, t + 1, 0), score + lp[model.blank_id], state, None)
            if consec < emission_cap:
                for v in label_ids:
                    keep((labels + (v,), t, consec + 1), score + lp[v], state, v)
        ordered = sorted(children.items(),
                         key=lambda kv: (-kv[1][0], kv[0][0], kv[0][1], kv[0][2]))
        frontier = {}
        for key, (score, parent_state, emitted) in ordered[:beam]:
            state = parent_state if emitted is None else pred_step(model, parent_state, emitted)
            frontier[key] = (score, state)

    # the greedy path competes too, so the result never scores below it
    greedy = _greedy_from_encoding(model, h_enc, mask, emission_cap)
    best = Hypothesis(*min(
        [(labels, score, state) for (labels, _, _), (score, state) in frontier.items()]
        + [(greedy.labels, greedy.score, greedy.pred_state)],
        key=lambda item: (-item[1], item[0])))
    return best


def decode_utterance(model: ToyModel, features: np.ndarray,
                     mode: str = "greedy", beam: int = 10,
                     ctc_top_k: int = 0) -> list:
    """Decode per a decode config: mode, beam width, CTC constraint size.

    ctc_top_k > 0 builds the constraint from this utterance's own CTC
    posterior (final head); 0 decodes unconstrained.
    """
    constraint = None
    if ctc_top_k:
        h_enc, _, _ = encode(model, features)
        posterior = ctc_posterior(CtcLogits(final_ctc_logits(model, h_enc)))
        constraint = build_ctc_constraint(posterior, ctc_top_k)
    if mode == "greedy":
        return greedy_decode(model, features, constraint)
    if mode == "beam":
        return list(beam_search(model, features, beam, constraint).labels)
    raise ValueError(f"decode.mode: expected greedy or beam, got {mode!r}")
