"""Synthetic desk-scale datasets and their JSON-Lines file format.

Each utterance pairs a feature matrix with a target label sequence.
Features are built from one random prototype vector per label, repeated
for a few frames and perturbed with Gaussian noise, so a model that
learns the prototypes can transcribe the data.  Labels follow a bounded
Zipf law: a handful of frequent labels and a long tail of rare ones.

File format (one JSON object per line):
  header  {"format": "tkit-dataset-v1", "vocab_size": V, "feat_dim": F}
  record  {"id": "...", "target": [ids...], "features": [[row]...]}
An empty file is a valid empty dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np

from tkit.rnnt import TargetSeq

FORMAT_NAME = "tkit-dataset-v1"


@dataclass(frozen=True)
class Utterance:
    """One training example: features (T, F) and its target labels."""

    features: np.ndarray
    target: TargetSeq
    id: str

    def __post_init__(self):
        object.__setattr__(self, "features",
                           np.asarray(self.features, dtype=np.float64))
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError("features must have shape (T, F) with T >= 1")


@dataclass(frozen=True)
class SynthSpec:
    """Knobs for the synthetic task generator."""

    vocab_size: int
    feat_dim: int
    zipf_exponent: float = 1.5
    mean_target_len: float = 6.0
    frames_per_label: tuple = (1, 4)
    noise: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be at least 2 (blank plus one label)")
        if self.feat_dim < 1:
            raise ValueError("feat_dim must be positive")
        if self.mean_target_len < 1:
            raise ValueError("mean_target_len must be at least 1")
        lo, hi = self.frames_per_label
        if not 1 <= lo <= hi:
            raise ValueError("frames_per_label must satisfy 1 <= lo <= hi")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be non-negative")


@dataclass
class Dataset:
    """Utterances plus the vocabulary and feature dimensions they assume."""

    utterances: List[Utterance]
    vocab_size: int
    feat_dim: int

    def __iter__(self):
        return iter(self.utterances)

    def __len__(self):
        return len(self.utterances)


def zipf_weights(spec: SynthSpec) -> np.ndarray:
    """Label pmf over ids 1..V-1: p(id) proportional to id^-exponent."""
    ranks = np.arange(1, spec.vocab_size, dtype=np.float64)
    weights = ranks ** -spec.zipf_exponent
    return weights / weights.sum()


def label_prototypes(spec: SynthSpec) -> np.ndarray:
    """One fixed feature vector per vocabulary id (row 0 is unused)."""
    rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 1)))
    return rng.normal(size=(spec.vocab_size, spec.feat_dim))


def generate(spec: SynthSpec, n: int, start: int = 0) -> Dataset:
    """n utterances, deterministic under spec.seed.

    Every utterance draws from its own seeded stream, so generation
    order does not matter and subsets can be regenerated independently.
    ``start`` offsets the utterance index: a disjoint held-out split of
    the same task (same prototypes) is `generate(spec, m, start=n)`.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if start < 0:
        raise ValueError("start must be non-negative")
    protos = label_prototypes(spec)
    weights = zipf_weights(spec)
    ids = np.arange(1, spec.vocab_size)
    lo, hi = spec.frames_per_label
    utterances = []
    for i in range(start, start + n):
        rng = np.random.default_rng(np.random.SeedSequence((spec.seed, 0, i)))
        length = 1 + int(rng.poisson(spec.mean_target_len - 1.0))
        labels = rng.choice(ids, size=length, p=weights)
        rows = []
        prev = None
        for y in labels:
            # a label repeating its predecessor needs one extra frame so
            # CTC alignments (blank between repeats) stay reachable,
            # even when that exceeds the configured upper bound
            low = lo if y != prev else max(lo, 2)
            repeats = int(rng.integers(low, max(hi, low) + 1))
            prev = y
            base = np.tile(protos[y], (repeats, 1))
            rows.append(base + spec.noise * rng.normal(size=base.shape))
        features = np.concatenate(rows, axis=0)
        utterances.append(Utterance(features,
                                    TargetSeq(tuple(int(y) for y in labels)),
                                    f"utt-{i:05d}"))
    return Dataset(utterances, spec.vocab_size, spec.feat_dim)


def write_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        header = {"format": FORMAT_NAME, "vocab_size": dataset.vocab_size,
                  "feat_dim": dataset.feat_dim}
        f.write(json.dumps(header) + "\n")
        for utt in dataset:
            record = {"id": utt.id, "target": list(utt.target.labels),
                      "features": utt.features.tolist()}
            f.write(json.dumps(record) + "\n")


def read_dataset(path) -> Dataset:
    """Inverse of write_dataset; an empty file is an empty dataset."""
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
        if not first.strip():
            return Dataset([], vocab_size=0, feat_dim=0)
        try:
            header = json.loads(first)
        except json.JSONDecodeError as e:
            raise ValueError(f"{path}: header is not valid JSON ({e})") from e
        if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
            raise ValueError(f"{path}: not a {FORMAT_NAME} dataset file")
        try:
            vocab_size = int(header["vocab_size"])
            feat_dim = int(header["feat_dim"])
        except KeyError as e:
            raise ValueError(f"{path}: header is missing field {e}") from e
        utterances = []
        for lineno, line in enumerate(f, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                features = np.asarray(record["features"], dtype=np.float64)
                target = TargetSeq(tuple(int(y) for y in record["target"]))
                utterances.append(Utterance(features, target, str(record["id"])))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise ValueError(f"{path}: bad record on line {lineno} ({e})") from e
            if any(y >= vocab_size for y in target.labels):
                raise ValueError(
                    f"{path}: line {lineno} has a label outside vocab_size {vocab_size}")
    return Dataset(utterances, vocab_size, feat_dim)
