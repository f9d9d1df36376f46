"""Sequence accuracy metrics: edit distance and token error rate."""

from __future__ import annotations

import numpy as np


def edit_distance(reference, hypothesis) -> int:
    """Levenshtein distance between two label sequences."""
    ref = list(reference)
    hyp = list(hypothesis)
    prev = np.arange(len(hyp) + 1)
    for i, r in enumerate(ref, start=1):
        cur = np.empty_like(prev)
        cur[0] = i
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return int(prev[-1])


def token_error_rate(references, hypotheses) -> float:
    """Corpus-level rate: total edit distance over total reference length.

    Pooling before dividing weights long utterances more, matching how
    word error rates are reported.
    """
    refs = list(references)
    hyps = list(hypotheses)
    if len(refs) != len(hyps):
        raise ValueError("references and hypotheses must pair up")
    errors = sum(edit_distance(r, h) for r, h in zip(refs, hyps))
    total = sum(len(list(r)) for r in refs)
    if total == 0:
        return 0.0 if errors == 0 else float("inf")
    return errors / total
