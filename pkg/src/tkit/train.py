"""Minibatch training with sampled-softmax transducer loss.

Each step runs in two phases.  Phase one encodes every example of the
batch, draws the sampled vocabulary (its distribution may come from the
CTC posteriors of the same forward pass), and materializes all joint
logit lattices, registering each with the allocation meter.  Only when
every lattice of the batch is alive does phase two score them, backprop,
and release them one by one.  The measured peak therefore equals the
analytic formula batch * T * (U+1) * L * element_bytes whenever the
batch is shape-uniform, which is what the memory accounting promises.

Auxiliary CTC losses always use the full vocabulary; sampling shrinks
only the joint lattice.

Determinism: all randomness flows from config.seed through fixed-purpose
streams (shuffling, batched sampling, per-example sampling), and log
lines carry no timestamps, so single-worker reruns are byte-identical.
Worker threads only parallelize per-example computation; reduction stays
in example order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from tkit.config import TrainConfig
from tkit.ctc import CtcLogits, CtcPosterior, ctc_loss, ctc_posterior
from tkit.dataio import Dataset
from tkit.decode import greedy_decode
from tkit.memory import AllocationMeter
from tkit.metrics import token_error_rate
from tkit.model import (
    ForwardCache,
    ToyModel,
    backward,
    encode,
    final_ctc_logits,
    intermediate_ctc_logits,
    joint_logits,
    predict,
)
from tkit.numerics import SeededRng
from tkit.rnnt import transducer_loss
from tkit.sampler import (
    build_positive_set,
    make_ctc_distribution,
    make_uniform_distribution,
    sample_vocab,
    sample_vocab_per_example,
)

GRAD_CLIP_NORM = 5.0
# reserved stream ids: 0/1 data generation, 3 model init, 2-prefixed
# tuples shuffling; sampling streams start far above to stay disjoint
BATCH_SAMPLING_STREAM_BASE = 10_000
EXAMPLE_SAMPLING_STREAM_BASE = 1_000_000


class TrainingDiverged(RuntimeError):
    """Raised when a loss stops being finite; names epoch and step."""


@dataclass
class Adam:
    """Standard Adam with bias correction; state keyed by parameter name."""

    lr: float = 1.0e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def update(self, params: dict, grads: dict) -> None:
        self.step_count += 1
        t = self.step_count
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** t)
            v_hat = self.v[name] / (1 - self.beta2 ** t)
            params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: dict, max_norm: float = GRAD_CLIP_NORM) -> float:
    """Scale all gradients to a global norm of at most max_norm."""
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


@dataclass
class TrainResult:
    model: ToyModel
    history: List[dict]
    log_lines: List[str]

    @property
    def final_dev_ter(self) -> float:
        return self.history[-1]["dev_ter"] if self.history else float("nan")


def _sampling_posterior(model: ToyModel, config: TrainConfig, h_enc, h_inter):
    if config.sampling_distribution == "joint-ctc":
        return ctc_posterior(CtcLogits(final_ctc_logits(model, h_enc)))
    # inter-ctc and sc-ctc both read the intermediate head; under
    # sc-ctc that head is the one whose distribution conditions layer 2
    return ctc_posterior(CtcLogits(intermediate_ctc_logits(model, h_inter)))


def _batch_vocabs(model: ToyModel, config: TrainConfig, batch, forwards, step):
    """One SampledVocab per example (shared object when batched)."""
    if not config.uses_sampling:
        return [None] * len(batch)
    targets = [utt.target for utt in batch]
    uniform = config.sampling_distribution == "uniform"
    if config.sampling_strategy == "batched":
        positive = build_positive_set(targets)
        if uniform:
            dist = make_uniform_distribution(config.vocab_size, positive)
        else:
            # one row per example: its frame-averaged posterior; the
            # batch distribution is the mean of those rows
            rows = np.stack([
                _sampling_posterior(model, config, h_enc, h_inter).probs.mean(axis=0)
                for h_enc, h_inter, _, _, _ in forwards])
            dist = make_ctc_distribution(CtcPosterior(rows), positive,
                                         source=config.sampling_distribution)
        rng = SeededRng(config.seed, BATCH_SAMPLING_STREAM_BASE + step)
        vocab = sample_vocab(targets, dist, config.sampling_total_size, rng)
        return [vocab] * len(batch)
    dists = []
    for target, (h_enc, h_inter, _, _, _) in zip(targets, forwards):
        positive = build_positive_set(target)
        if uniform:
            dists.append(make_uniform_distribution(config.vocab_size, positive))
        else:
            posterior = _sampling_posterior(model, config, h_enc, h_inter)
            dists.append(make_ctc_distribution(posterior, positive,
                                               source=config.sampling_distribution))
    offset = EXAMPLE_SAMPLING_STREAM_BASE + step * config.batch_size
    return sample_vocab_per_example(targets, dists, config.sampling_total_size,
                                    config.seed, stream_offset=offset)


def _forward_example(model: ToyModel, utt):
    h_enc, h_inter, enc_cache = encode(model, utt.features)
    h_pre, pred_cache = predict(model, utt.target.labels)
    return h_enc, h_inter, enc_cache, h_pre, pred_cache


def _score_example(model: ToyModel, config: TrainConfig, utt, forward, lattice,
                   joint_cache):
    h_enc, h_inter, enc_cache, h_pre, pred_cache = forward
    target = utt.target
    trans = transducer_loss(lattice, target)
    losses = {"transducer": trans.loss, "ctc": 0.0, "inter": 0.0}
    d_ctc = None
    d_inter = None
    if config.weight_ctc != 0.0:
        res = ctc_loss(CtcLogits(final_ctc_logits(model, h_enc)), target)
        losses["ctc"] = res.loss
        d_ctc = config.weight_ctc * res.grad
    if config.weight_inter != 0.0:
        res = ctc_loss(CtcLogits(intermediate_ctc_logits(model, h_inter)), target)
        losses["inter"] = res.loss
        d_inter = config.weight_inter * res.grad
    cache = ForwardCache(enc_cache, pred_cache, joint_cache)
    grads = backward(model, cache, config.weight_transducer * trans.grad,
                     d_ctc_logits=d_ctc, d_inter_logits=d_inter)
    return losses, grads


def train_step(model: ToyModel, config: TrainConfig, batch, optimizer: Adam,
               meter: AllocationMeter, step: int, pool=None) -> dict:
    """One optimizer update over a minibatch; returns its mean losses."""
    mapper = pool.map if pool is not None else map
    forwards = list(mapper(lambda utt: _forward_example(model, utt), batch))
    vocabs = _batch_vocabs(model, config, batch, forwards, step)

    # phase one: every lattice of the batch alive at once
    lattices = []
    for forward, vocab in zip(forwards, vocabs):
        h_enc, _, _, h_pre, _ = forward
        lattice, joint_cache = joint_logits(model, h_enc, h_pre, vocab=vocab)
        meter.allocate(lattice.data.nbytes)
        lattices.append((lattice, joint_cache))

    # phase two: score, backprop, release
    scored = list(mapper(
        lambda args: _score_example(model, config, *args),
        [(utt, forward, lattice, joint_cache)
         for utt, forward, (lattice, joint_cache) in zip(batch, forwards, lattices)]))
    totals = {"transducer": 0.0, "ctc": 0.0, "inter": 0.0}
    grad_sum = model.zero_grads()
    for (losses, grads), (lattice, _) in zip(scored, lattices):
        for key in totals:
            totals[key] += losses[key]
        for name in grad_sum:
            grad_sum[name] += grads[name]
        meter.release(lattice.data.nbytes)

    n = len(batch)
    for key in totals:
        totals[key] /= n
    for name in grad_sum:
        grad_sum[name] /= n
    if not all(np.isfinite(v) for v in totals.values()):
        raise TrainingDiverged(f"non-finite loss at step {step}: {totals}")
    clip_gradients(grad_sum)
    optimizer.update(model.params, grad_sum)
    return totals


def evaluate_greedy(model: ToyModel, data: Dataset) -> float:
    refs = [list(utt.target.labels) for utt in data]
    hyps = [greedy_decode(model, utt.features) for utt in data]
    return token_error_rate(refs, hyps)


def format_epoch_line(epoch: int, means: dict, dev_ter: float,
                      peak_bytes: int) -> str:
    return (f"epoch={epoch} "
            f"loss_transducer={means['transducer']:.6f} "
            f"loss_ctc={means['ctc']:.6f} "
            f"loss_inter={means['inter']:.6f} "
            f"dev_ter={dev_ter:.4f} "
            f"peak_logit_bytes={peak_bytes}")


def train(config: TrainConfig, data: Dataset, dev: Optional[Dataset] = None,
          workers: int = 1, log_fn=None) -> TrainResult:
    """Run the configured number of epochs; returns model and history.

    The per-epoch log line is stable under reruns with the same seed:
    epoch=N loss_transducer= loss_ctc= loss_inter= dev_ter= peak_logit_bytes=
    """
    if data.vocab_size and data.vocab_size != config.vocab_size:
        raise ValueError(f"model.vocab_size={config.vocab_size} does not match "
                         f"dataset vocab_size={data.vocab_size}")
    if data.feat_dim and data.feat_dim != config.feat_dim:
        raise ValueError(f"model.feat_dim={config.feat_dim} does not match "
                         f"dataset feat_dim={data.feat_dim}")
    model = ToyModel(config.feat_dim, config.hidden, config.vocab_size,
                     self_condition=config.self_condition, seed=config.seed)
    optimizer = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    meter = AllocationMeter()
    utterances = list(data)
    history = []
    log_lines = []
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        step = 0
        for epoch in range(1, config.epochs + 1):
            order = np.random.default_rng(
                np.random.SeedSequence((config.seed, 2, epoch))).permutation(
                    len(utterances))
            meter.reset()
            sums = {"transducer": 0.0, "ctc": 0.0, "inter": 0.0}
            step_losses = []
            batches = 0
            for start in range(0, len(utterances), config.batch_size):
                batch = [utterances[i] for i in order[start:start + config.batch_size]]
                means = train_step(model, config, batch, optimizer, meter,
                                   step, pool=pool)
                step += 1
                batches += 1
                step_losses.append(means["transducer"])
                for key in sums:
                    sums[key] += means[key]
            means = {key: (value / batches if batches else float("nan"))
                     for key, value in sums.items()}
            dev_ter = evaluate_greedy(model, dev) if dev is not None else float("nan")
            record = {"epoch": epoch, **means, "dev_ter": dev_ter,
                      "peak_logit_bytes": meter.peak_bytes,
                      "step_losses": step_losses}
            history.append(record)
            line = format_epoch_line(epoch, means, dev_ter, meter.peak_bytes)
            log_lines.append(line)
            if log_fn is not None:
                log_fn(line)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(model, history, log_lines)
