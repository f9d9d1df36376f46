"""Flat key=value configuration files and the typed configs they fill.

The format is one `section.key=value` pair per line, `#` comments, and
blank lines.  It diffs cleanly, which matters because the reference
experiment configs differ by two or three lines.  Every parse error
names the offending key (and file where known) so CLI diagnostics can
stay one line long.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from tkit.dataio import SynthSpec
from tkit.memory import MemConfig

SAMPLING_STRATEGIES = ("batched", "example-wise")
SAMPLING_DISTRIBUTIONS = ("uniform", "joint-ctc", "inter-ctc", "sc-ctc")
DECODE_MODES = ("greedy", "beam")


def parse_kv_text(text: str, source: str = "config") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{source}: line {lineno} is not a key=value pair")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key:
            raise ValueError(f"{source}: line {lineno} has an empty key")
        if key in out:
            raise ValueError(f"{source}: duplicate key {key}")
        out[key] = value
    return out


def parse_kv_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as f:
        return parse_kv_text(f.read(), source=str(path))


class _KvReader:
    """Typed access to a key=value dict; every error names the key."""

    def __init__(self, kv: dict):
        self.kv = dict(kv)
        self.used = set()

    def _take(self, key, default):
        self.used.add(key)
        return self.kv.get(key, default)

    def string(self, key, default=None, choices=None):
        value = self._take(key, default)
        if value is None:
            raise ValueError(f"missing required config key: {key}")
        if choices is not None and value not in choices:
            raise ValueError(
                f"{key}: expected one of {', '.join(choices)}, got {value!r}")
        return value

    def integer(self, key, default=None):
        value = self._take(key, default)
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected an integer, got {value!r}") from None

    def real(self, key, default=None):
        value = self._take(key, default)
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ValueError(f"{key}: expected a number, got {value!r}") from None

    def boolean(self, key, default=None):
        value = self._take(key, default)
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
        raise ValueError(f"{key}: expected true or false, got {value!r}")

    def int_list(self, key, default=None):
        value = self._take(key, default)
        if not isinstance(value, str):
            return list(value)
        try:
            return [int(part) for part in value.split(",") if part.strip()]
        except ValueError:
            raise ValueError(
                f"{key}: expected comma-separated integers, got {value!r}") from None

    def reject_unknown(self):
        unknown = sorted(set(self.kv) - self.used)
        if unknown:
            raise ValueError(f"unknown config key: {unknown[0]}")


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs besides the data itself."""

    vocab_size: int
    feat_dim: int
    hidden: int = 16
    self_condition: bool = False
    optimizer_kind: str = "adam"
    lr: float = 1.0e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 1
    batch_size: int = 8
    seed: int = 0
    weight_transducer: float = 1.0
    weight_ctc: float = 0.5
    weight_inter: float = 0.3
    sampling_strategy: str = "batched"
    sampling_distribution: str = "uniform"
    sampling_total_size: int = 0
    decode_mode: str = "greedy"
    decode_beam: int = 10
    decode_ctc_top_k: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("model.vocab_size: must be at least 2")
        if self.feat_dim < 1 or self.hidden < 1:
            raise ValueError("model.feat_dim/model.hidden: must be positive")
        if self.optimizer_kind != "adam":
            raise ValueError(f"optimizer.kind: only adam is supported, got "
                             f"{self.optimizer_kind!r}")
        if not self.lr > 0:
            raise ValueError("optimizer.lr: must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("optimizer.beta1/beta2: must lie in (0, 1)")
        if self.epochs < 0:
            raise ValueError("epochs: must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size: must be positive")
        for name, w in [("loss.transducer", self.weight_transducer),
                        ("loss.ctc", self.weight_ctc),
                        ("loss.inter", self.weight_inter)]:
            if w < 0:
                raise ValueError(f"{name}: must be non-negative")
        if self.sampling_strategy not in SAMPLING_STRATEGIES:
            raise ValueError(f"sampling.strategy: expected one of "
                             f"{', '.join(SAMPLING_STRATEGIES)}")
        if self.sampling_distribution not in SAMPLING_DISTRIBUTIONS:
            raise ValueError(f"sampling.distribution: expected one of "
                             f"{', '.join(SAMPLING_DISTRIBUTIONS)}")
        if self.sampling_distribution == "sc-ctc" and not self.self_condition:
            raise ValueError("sampling.distribution: sc-ctc requires "
                             "model.self_condition=true")
        if not 0 <= self.sampling_total_size <= self.vocab_size:
            raise ValueError("sampling.total_size: must lie in [0, vocab_size] "
                             "(0 disables sampling)")
        if self.decode_mode not in DECODE_MODES:
            raise ValueError(f"decode.mode: expected one of {', '.join(DECODE_MODES)}")
        if self.decode_beam < 1:
            raise ValueError("decode.beam: must be at least 1")
        if not 0 <= self.decode_ctc_top_k <= self.vocab_size - 1:
            raise ValueError("decode.ctc_top_k: must lie in [0, vocab_size-1] "
                             "(0 disables the constraint)")

    @property
    def uses_sampling(self) -> bool:
        return self.sampling_total_size > 0


def train_config_from_kv(kv: dict) -> TrainConfig:
    r = _KvReader(kv)
    config = TrainConfig(
        vocab_size=r.integer("model.vocab_size"),
        feat_dim=r.integer("model.feat_dim"),
        hidden=r.integer("model.hidden", 16),
        self_condition=r.boolean("model.self_condition", False),
        optimizer_kind=r.string("optimizer.kind", "adam"),
        lr=r.real("optimizer.lr", 1.0e-3),
        beta1=r.real("optimizer.beta1", 0.9),
        beta2=r.real("optimizer.beta2", 0.999),
        epochs=r.integer("epochs", 1),
        batch_size=r.integer("batch_size", 8),
        seed=r.integer("seed", 0),
        weight_transducer=r.real("loss.transducer", 1.0),
        weight_ctc=r.real("loss.ctc", 0.5),
        weight_inter=r.real("loss.inter", 0.3),
        sampling_strategy=r.string("sampling.strategy", "batched",
                                   choices=SAMPLING_STRATEGIES),
        sampling_distribution=r.string("sampling.distribution", "uniform",
                                       choices=SAMPLING_DISTRIBUTIONS),
        sampling_total_size=r.integer("sampling.total_size", 0),
        decode_mode=r.string("decode.mode", "greedy", choices=DECODE_MODES),
        decode_beam=r.integer("decode.beam", 10),
        decode_ctc_top_k=r.integer("decode.ctc_top_k", 0),
    )
    r.reject_unknown()
    return config


def synth_spec_from_kv(kv: dict) -> tuple:
    """(SynthSpec, n, start) from a generation spec file.

    ``start=N`` offsets the utterance stream so one spec file can carve
    out the held-out split of the task its sibling trains on.
    """
    r = _KvReader(kv)
    spec = SynthSpec(
        vocab_size=r.integer("vocab_size"),
        feat_dim=r.integer("feat_dim"),
        zipf_exponent=r.real("zipf_exponent", 1.5),
        mean_target_len=r.real("mean_target_len", 6.0),
        frames_per_label=(r.integer("frames_min", 1), r.integer("frames_max", 4)),
        noise=r.real("noise", 0.1),
        seed=r.integer("seed", 0),
    )
    n = r.integer("n", 100)
    start = r.integer("start", 0)
    r.reject_unknown()
    if n < 0:
        raise ValueError("n: must be non-negative")
    if start < 0:
        raise ValueError("start: must be non-negative")
    return spec, n, start


def mem_config_from_kv(kv: dict) -> tuple:
    """(MemConfig, sweep of sampled sizes) from a memplot config file."""
    r = _KvReader(kv)
    cfg = MemConfig(
        frames=r.integer("frames"),
        target_len=r.integer("target_len"),
        vocab_size=r.integer("vocab_size"),
        hidden=r.integer("hidden", 16),
        feat_dim=r.integer("feat_dim", 8),
        batch=r.integer("batch", 1),
        element_bytes=r.integer("element_bytes", 4),
    )
    sweep = r.int_list("sweep", "")
    r.reject_unknown()
    for size in sweep:
        if not 1 <= size <= cfg.vocab_size:
            raise ValueError("sweep: sampled sizes must lie in [1, vocab_size]")
    return cfg, sweep or [cfg.vocab_size]


def decode_settings_from_kv(kv: dict, vocab_size: int) -> tuple:
    """(mode, beam, ctc_top_k) from the decode.* keys of a config dict.

    Non-decode keys are ignored so a full training config file can drive
    evaluation; unknown or malformed decode.* keys are still rejected.
    """
    r = _KvReader({k: v for k, v in kv.items() if k.startswith("decode.")})
    mode = r.string("decode.mode", "greedy", choices=DECODE_MODES)
    beam = r.integer("decode.beam", 10)
    top_k = r.integer("decode.ctc_top_k", 0)
    r.reject_unknown()
    if beam < 1:
        raise ValueError("decode.beam: must be at least 1")
    if not 0 <= top_k <= vocab_size - 1:
        raise ValueError("decode.ctc_top_k: must lie in [0, vocab_size-1] "
                         "(0 disables the constraint)")
    return mode, beam, top_k


@dataclass(frozen=True)
class BenchConfig:
    """Shapes and step count for the full-vs-sampled timing comparison."""

    vocab_size: int
    total_size: int
    feat_dim: int = 8
    hidden: int = 16
    frames: int = 12
    target_len: int = 4
    batch: int = 4
    steps: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 2:
            raise ValueError("vocab_size: must be at least 2")
        if self.feat_dim < 1 or self.hidden < 1:
            raise ValueError("feat_dim/hidden: must be positive")
        if self.target_len < 0:
            raise ValueError("target_len: must be non-negative")
        if self.target_len >= 2 and self.vocab_size < 3:
            raise ValueError("target_len: lengths above 1 need vocab_size >= 3 "
                             "so targets can avoid adjacent repeats")
        if self.frames < max(self.target_len, 1):
            raise ValueError("frames: must be at least target_len so targets "
                             "stay reachable")
        if self.batch < 1 or self.steps < 1:
            raise ValueError("batch/steps: must be positive")
        if not self.target_len + 1 <= self.total_size <= self.vocab_size:
            raise ValueError("total_size: must lie in [target_len+1, vocab_size] "
                             "to cover the positive set")


def bench_config_from_kv(kv: dict) -> BenchConfig:
    r = _KvReader(kv)
    cfg = BenchConfig(
        vocab_size=r.integer("vocab_size"),
        total_size=r.integer("total_size"),
        feat_dim=r.integer("feat_dim", 8),
        hidden=r.integer("hidden", 16),
        frames=r.integer("frames", 12),
        target_len=r.integer("target_len", 4),
        batch=r.integer("batch", 4),
        steps=r.integer("steps", 3),
        seed=r.integer("seed", 0),
    )
    r.reject_unknown()
    return cfg
