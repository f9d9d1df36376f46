"""Input checking for the estimator-facing API."""

from __future__ import annotations

import numpy as np


def check_feature_array(x, feat_dim=None) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError("each feature sequence must be a 2-D array (T, F) "
                         "with at least one frame")
    if not np.all(np.isfinite(arr)):
        raise ValueError("features must be finite")
    if feat_dim is not None and arr.shape[1] != feat_dim:
        raise ValueError(f"feature width {arr.shape[1]} does not match "
                         f"expected {feat_dim}")
    return arr


def check_label_sequence(y, vocab_size=None) -> tuple:
    labels = tuple(int(v) for v in y)
    if any(v < 1 for v in labels):
        raise ValueError("labels must be positive ids (blank is id 0 and "
                         "never appears in targets)")
    if vocab_size is not None and any(v >= vocab_size for v in labels):
        raise ValueError(f"label outside vocabulary of size {vocab_size}")
    return labels


def check_sequences(X, y=None, vocab_size=None):
    """Canonicalize a list of feature arrays and optional targets."""
    feats = [check_feature_array(x) for x in X]
    if not feats:
        raise ValueError("X must hold at least one sequence")
    width = feats[0].shape[1]
    for x in feats[1:]:
        if x.shape[1] != width:
            raise ValueError("all feature sequences must share one width")
    if y is None:
        return feats
    targets = [check_label_sequence(seq, vocab_size) for seq in y]
    if len(targets) != len(feats):
        raise ValueError(f"X has {len(feats)} sequences but y has "
                         f"{len(targets)}")
    return feats, targets
