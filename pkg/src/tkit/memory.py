"""Analytic memory accounting for transducer training.

The dominant training-memory term is the joint logit lattice: one float
per (frame, target prefix, output label), per example.  Restricting the
label axis to a sampled vocabulary shrinks exactly that term and nothing
else, so the accounting keeps it as its own component.

Closed forms (per batch, element_bytes each):
  logit_tensor  batch * T * (U+1) * L          L = sampled or full size
  encoder       params + batch * T * (feat_dim + 3*hidden + vocab_size)
  predictor     params + batch * (2*U + 1) * hidden
  joint         params + batch * T * (U+1) * hidden
  gradients     one slot per model parameter

Activation terms count what a training step must retain for backprop:
inputs, both recurrent layers, the conditioning distribution, prediction
states with their embeddings, and the joint's tanh activations.  The
gradient component covers parameter gradients only, so changing L moves
the total by exactly the logit-tensor delta.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from tkit.model import param_specs


@dataclass(frozen=True)
class MemConfig:
    """Shape of one training workload for the accounting formulas."""

    frames: int
    target_len: int
    vocab_size: int
    hidden: int
    feat_dim: int
    batch: int = 1
    element_bytes: int = 4
    sampled_size: Optional[int] = None

    def __post_init__(self):
        positive = {"frames": self.frames, "vocab_size": self.vocab_size,
                    "hidden": self.hidden, "feat_dim": self.feat_dim,
                    "batch": self.batch, "element_bytes": self.element_bytes}
        for name, value in positive.items():
            if value < 1:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.target_len < 0:
            raise ValueError("target_len must be non-negative")
        if self.sampled_size is not None:
            if not 1 <= self.sampled_size <= self.vocab_size:
                raise ValueError("sampled_size must be in [1, vocab_size]")

    @property
    def label_axis(self) -> int:
        return self.vocab_size if self.sampled_size is None else self.sampled_size


@dataclass(frozen=True)
class MemoryReport:
    """Bytes per component; the total is their sum."""

    encoder: int
    predictor: int
    joint: int
    logit_tensor: int
    gradients: int

    def __post_init__(self):
        for name, value in self.components().items():
            if value < 0:
                raise ValueError(f"{name} bytes must be non-negative")

    def components(self) -> dict:
        return {"encoder": self.encoder, "predictor": self.predictor,
                "joint": self.joint, "logit_tensor": self.logit_tensor,
                "gradients": self.gradients}

    @property
    def total(self) -> int:
        return sum(self.components().values())

    def rows(self):
        """(component, bytes) pairs plus the total, for CSV emission."""
        out = sorted(self.components().items())
        out.append(("total", self.total))
        return out


def logit_tensor_bytes(cfg: MemConfig, with_gradients: bool = False) -> int:
    """batch * T * (U+1) * L * element_bytes; doubled with gradients."""
    n = cfg.batch * cfg.frames * (cfg.target_len + 1) * cfg.label_axis
    return n * cfg.element_bytes * (2 if with_gradients else 1)


def _param_counts(cfg: MemConfig) -> dict:
    sizes = {"encoder": 0, "predictor": 0, "joint": 0}
    component = {"enc1": "encoder", "enc2": "encoder", "inter": "encoder",
                 "ctc": "encoder", "sc": "encoder",
                 "emb": "predictor", "pred": "predictor",
                 "joint": "joint", "out": "joint"}
    for name, shape, _ in param_specs(cfg.feat_dim, cfg.hidden, cfg.vocab_size):
        count = 1
        for dim in shape:
            count *= dim
        sizes[component[name.split("_")[0]]] += count
    return sizes


def memory_report(cfg: MemConfig) -> MemoryReport:
    """Component-wise bytes for one training step of this shape."""
    params = _param_counts(cfg)
    T, U, eb = cfg.frames, cfg.target_len, cfg.element_bytes
    enc_act = cfg.batch * T * (cfg.feat_dim + 3 * cfg.hidden + cfg.vocab_size)
    pred_act = cfg.batch * (2 * U + 1) * cfg.hidden
    joint_act = cfg.batch * T * (U + 1) * cfg.hidden
    return MemoryReport(
        encoder=(params["encoder"] + enc_act) * eb,
        predictor=(params["predictor"] + pred_act) * eb,
        joint=(params["joint"] + joint_act) * eb,
        logit_tensor=logit_tensor_bytes(cfg),
        gradients=sum(params.values()) * eb,
    )


class AllocationMeter:
    """Running byte counter with a high-water mark.

    The trainer feeds it every logit-lattice allocation and release, so
    the measured peak can be checked against logit_tensor_bytes.
    """

    def __init__(self):
        self.current_bytes = 0
        self.peak_bytes = 0

    def allocate(self, nbytes: int) -> None:
        if nbytes < 0:
            raise ValueError("allocation size must be non-negative")
        self.current_bytes += nbytes
        self.peak_bytes = max(self.peak_bytes, self.current_bytes)

    def release(self, nbytes: int) -> None:
        if nbytes < 0 or nbytes > self.current_bytes:
            raise ValueError("release does not match outstanding allocations")
        self.current_bytes -= nbytes

    def reset(self) -> None:
        self.current_bytes = 0
        self.peak_bytes = 0
