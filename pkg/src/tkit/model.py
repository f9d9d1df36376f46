"""Toy transducer model: recurrent encoder, prediction net, additive joint.

Small enough to finite-difference end to end, structured like the real
thing: a 2-layer tanh recurrent encoder with a CTC head on each layer
(the layer-1 head doubles as the intermediate branch and, optionally, as
a self-conditioning signal fed into layer 2), an embedding + tanh
recurrence prediction net, and an additive joint producing the logit
lattice.  With a sampled vocabulary the joint touches only the selected
output rows, so the lattice label axis shrinks to the sampled size.

All gradients are hand-derived; nothing here depends on an autodiff
framework.  Forward passes return caches holding exactly the activations
``backward`` consumes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from tkit.ctc import CtcLogits, ctc_loss
from tkit.numerics import log_softmax
from tkit.rnnt import LogitLattice, TargetSeq, transducer_loss
from tkit.sampler import SampledVocab

CHECKPOINT_MAGIC = b"TKIT"
CHECKPOINT_VERSION = 1


def param_specs(feat_dim: int, hidden: int, vocab_size: int):
    """(name, shape, fan_in) for every parameter, in checkpoint order."""
    f, h, v = feat_dim, hidden, vocab_size
    return [
        ("enc1_wx", (h, f), f),
        ("enc1_wh", (h, h), h),
        ("enc1_b", (h,), f),
        ("enc2_wx", (h, h), h),
        ("enc2_wh", (h, h), h),
        ("enc2_b", (h,), h),
        ("inter_w", (v, h), h),
        ("inter_b", (v,), h),
        ("ctc_w", (v, h), h),
        ("ctc_b", (v,), h),
        ("sc_w", (h, v), v),
        ("sc_b", (h,), v),
        ("emb", (v - 1, h), h),
        ("pred_h0", (h,), h),
        ("pred_wx", (h, h), h),
        ("pred_wh", (h, h), h),
        ("pred_b", (h,), h),
        ("joint_we", (h, h), h),
        ("joint_wp", (h, h), h),
        ("joint_b", (h,), h),
        ("out_w", (v, h), h),
    ]


class ToyModel:
    """Parameter store plus dimensions; parameters live in ``params``."""

    def __init__(self, feat_dim: int, hidden: int, vocab_size: int,
                 self_condition: bool = False, seed: int = 0,
                 params: Optional[dict] = None):
        if hidden < 1 or feat_dim < 1 or vocab_size < 2:
            raise ValueError("need hidden >= 1, feat_dim >= 1, vocab_size >= 2")
        self.feat_dim = feat_dim
        self.hidden = hidden
        self.vocab_size = vocab_size
        self.self_condition = self_condition
        self.blank_id = 0
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(np.random.SeedSequence((seed, 3)))
            self.params = {}
            for name, shape, fan_in in param_specs(feat_dim, hidden, vocab_size):
                bound = 1.0 / np.sqrt(fan_in)
                self.params[name] = rng.uniform(-bound, bound, size=shape)

    def zero_grads(self) -> dict:
        return {name: np.zeros_like(p) for name, p in self.params.items()}


def encode(model: ToyModel, features: np.ndarray,
           self_condition: Optional[bool] = None):
    """Run the 2-layer encoder; returns (h_enc, h_inter, cache).

    Layer-1 output is the intermediate representation.  With
    self-conditioning, the layer-1 label distribution is projected back
    to hidden width and added to layer 2's input.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("features must have shape (T, feat_dim) with T >= 1")
    if x.shape[1] != model.feat_dim:
        raise ValueError(
            f"feature width {x.shape[1]} does not match model feat_dim {model.feat_dim}")
    sc = model.self_condition if self_condition is None else self_condition
    p = model.params
    T, h = x.shape[0], model.hidden

    h1 = np.zeros((T, h))
    prev = np.zeros(h)
    for t in range(T):
        h1[t] = np.tanh(p["enc1_wx"] @ x[t] + p["enc1_wh"] @ prev + p["enc1_b"])
        prev = h1[t]

    if sc:
        inter_logits = h1 @ p["inter_w"].T + p["inter_b"]
        q = np.exp(log_softmax(inter_logits, axis=1))
        z = h1 + q @ p["sc_w"].T + p["sc_b"]
    else:
        q = None
        z = h1

    h2 = np.zeros((T, h))
    prev = np.zeros(h)
    for t in range(T):
        h2[t] = np.tanh(p["enc2_wx"] @ z[t] + p["enc2_wh"] @ prev + p["enc2_b"])
        prev = h2[t]

    cache = {"x": x, "h1": h1, "q": q, "z": z, "h2": h2, "self_condition": sc}
    return h2, h1, cache


def predict(model: ToyModel, history) -> tuple:
    """Prediction-net states for every prefix of ``history``.

    Row u is the state after consuming the first u labels; row 0 is the
    learned start state.  The blank is never embedded.
    """
    labels = [int(y) for y in history]
    for y in labels:
        if y < 1 or y >= model.vocab_size:
            raise ValueError(f"label {y} outside the text vocabulary")
    p = model.params
    U, h = len(labels), model.hidden
    e = p["emb"][[y - 1 for y in labels]] if U else np.zeros((0, h))
    hp = np.zeros((U + 1, h))
    hp[0] = p["pred_h0"]
    for u in range(1, U + 1):
        hp[u] = np.tanh(p["pred_wx"] @ e[u - 1] + p["pred_wh"] @ hp[u - 1] + p["pred_b"])
    cache = {"labels": labels, "e": e, "hp": hp}
    return hp, cache


def pred_step(model: ToyModel, state: np.ndarray, label: int) -> np.ndarray:
    """Advance the prediction state by one emitted label (decode-time)."""
    if label < 1 or label >= model.vocab_size:
        raise ValueError(f"label {label} outside the text vocabulary")
    p = model.params
    return np.tanh(p["pred_wx"] @ p["emb"][label - 1] + p["pred_wh"] @ state + p["pred_b"])


def joint_step(model: ToyModel, h_enc_t: np.ndarray, h_pre_u: np.ndarray) -> np.ndarray:
    """Full-vocabulary joint scores for a single (t, u) state."""
    p = model.params
    a = np.tanh(p["joint_we"] @ h_enc_t + p["joint_wp"] @ h_pre_u + p["joint_b"])
    return p["out_w"] @ a


def joint_logits(model: ToyModel, h_enc: np.ndarray, h_pre: np.ndarray,
                 vocab: Optional[SampledVocab] = None):
    """Logit lattice over the full vocabulary or a sampled subset.

    With a sampled vocabulary only the selected output rows are used, so
    the lattice holds T * (U+1) * |sampled| elements instead of
    T * (U+1) * |V|.
    """
    p = model.params
    if h_enc.shape[1] != model.hidden or h_pre.shape[1] != model.hidden:
        raise ValueError("encoder/prediction widths do not match the joint")
    if vocab is not None and int(vocab.ids.max()) >= model.vocab_size:
        raise ValueError("sampled vocabulary references an id outside the vocabulary")
    pre = (h_enc @ p["joint_we"].T)[:, None, :] + (h_pre @ p["joint_wp"].T)[None, :, :]
    act = np.tanh(pre + p["joint_b"])
    rows = p["out_w"] if vocab is None else p["out_w"][vocab.ids]
    logits = act @ rows.T
    lattice = LogitLattice(logits, label_map=None if vocab is None else vocab.ids)
    cache = {"act": act, "h_enc": h_enc, "h_pre": h_pre,
             "ids": None if vocab is None else vocab.ids}
    return lattice, cache


@dataclass
class ForwardCache:
    """Bundle of the per-component caches one training example produced."""

    encoder: dict
    predictor: dict
    joint: dict


def backward(model: ToyModel, cache: ForwardCache, d_lattice: np.ndarray,
             d_ctc_logits: Optional[np.ndarray] = None,
             d_inter_logits: Optional[np.ndarray] = None) -> dict:
    """Exact parameter gradients from upstream logit gradients.

    Upstream arrays carry any loss weighting already (pass
    ``weight * loss.grad``); passing None for a CTC head skips that
    branch entirely.  Gradients flow through the joint, both CTC heads,
    the self-conditioning path when the forward pass used it, both
    encoder layers, and the prediction net.
    """
    p = model.params
    enc, pred, joint = cache.encoder, cache.predictor, cache.joint
    grads = model.zero_grads()
    T = enc["x"].shape[0]
    U1 = pred["hp"].shape[0]

    # joint network
    act, ids = joint["act"], joint["ids"]
    if d_lattice.shape != act.shape[:2] + ((model.vocab_size if ids is None else len(ids)),):
        raise ValueError("lattice gradient shape does not match the forward cache")
    rows = p["out_w"] if ids is None else p["out_w"][ids]
    d_act = d_lattice @ rows
    d_rows = np.einsum("tul,tuh->lh", d_lattice, act)
    if ids is None:
        grads["out_w"] += d_rows
    else:
        np.add.at(grads["out_w"], ids, d_rows)
    d_pre = d_act * (1.0 - act * act)
    grads["joint_b"] += d_pre.sum(axis=(0, 1))
    grads["joint_we"] += np.einsum("tuh,tf->hf", d_pre, joint["h_enc"])
    grads["joint_wp"] += np.einsum("tuh,uf->hf", d_pre, joint["h_pre"])
    d_h2 = np.einsum("tuh,hf->tf", d_pre, p["joint_we"])
    d_hp = np.einsum("tuh,hf->uf", d_pre, p["joint_wp"])

    # final CTC head
    if d_ctc_logits is not None:
        grads["ctc_w"] += d_ctc_logits.T @ enc["h2"]
        grads["ctc_b"] += d_ctc_logits.sum(axis=0)
        d_h2 = d_h2 + d_ctc_logits @ p["ctc_w"]

    # encoder layer 2 (backprop through time)
    h2, z = enc["h2"], enc["z"]
    d_z = np.zeros_like(z)
    carry = np.zeros(model.hidden)
    for t in range(T - 1, -1, -1):
        dh = d_h2[t] + carry
        d_pre2 = dh * (1.0 - h2[t] * h2[t])
        grads["enc2_wx"] += np.outer(d_pre2, z[t])
        if t > 0:
            grads["enc2_wh"] += np.outer(d_pre2, h2[t - 1])
        grads["enc2_b"] += d_pre2
        d_z[t] = p["enc2_wx"].T @ d_pre2
        carry = p["enc2_wh"].T @ d_pre2

    # self-conditioning and intermediate head
    h1, q = enc["h1"], enc["q"]
    d_h1 = d_z.copy()
    d_il = np.zeros((T, model.vocab_size))
    if d_inter_logits is not None:
        d_il += d_inter_logits
    if enc["self_condition"]:
        grads["sc_w"] += np.einsum("th,tv->hv", d_z, q)
        grads["sc_b"] += d_z.sum(axis=0)
        d_q = d_z @ p["sc_w"]
        d_il += q * (d_q - np.sum(d_q * q, axis=1, keepdims=True))
    if d_inter_logits is not None or enc["self_condition"]:
        grads["inter_w"] += d_il.T @ h1
        grads["inter_b"] += d_il.sum(axis=0)
        d_h1 = d_h1 + d_il @ p["inter_w"]

    # encoder layer 1
    x = enc["x"]
    carry = np.zeros(model.hidden)
    for t in range(T - 1, -1, -1):
        dh = d_h1[t] + carry
        d_pre1 = dh * (1.0 - h1[t] * h1[t])
        grads["enc1_wx"] += np.outer(d_pre1, x[t])
        if t > 0:
            grads["enc1_wh"] += np.outer(d_pre1, h1[t - 1])
        grads["enc1_b"] += d_pre1
        carry = p["enc1_wh"].T @ d_pre1

    # prediction net
    hp, e, labels = pred["hp"], pred["e"], pred["labels"]
    carry = np.zeros(model.hidden)
    for u in range(U1 - 1, 0, -1):
        dh = d_hp[u] + carry
        d_pp = dh * (1.0 - hp[u] * hp[u])
        grads["emb"][labels[u - 1] - 1] += p["pred_wx"].T @ d_pp
        grads["pred_wx"] += np.outer(d_pp, e[u - 1])
        grads["pred_wh"] += np.outer(d_pp, hp[u - 1])
        grads["pred_b"] += d_pp
        carry = p["pred_wh"].T @ d_pp
    grads["pred_h0"] += d_hp[0] + carry

    return grads


def composite_loss_and_grads(model: ToyModel, features: np.ndarray, labels,
                             vocab: Optional[SampledVocab] = None,
                             transducer_weight: float = 1.0,
                             ctc_weight: float = 0.5,
                             inter_weight: float = 0.3):
    """Weighted transducer + CTC + intermediate-CTC loss for one utterance.

    The transducer term uses the (possibly sampled) joint lattice; both
    CTC terms always score the full vocabulary.  A zero weight skips the
    corresponding backward branch.  Returns (losses dict, grads dict);
    losses are unweighted, grads belong to the weighted total.
    """
    target = TargetSeq(tuple(int(y) for y in labels), blank_id=model.blank_id)
    h_enc, h_inter, enc_cache = encode(model, features)
    h_pre, pred_cache = predict(model, target.labels)
    lattice, joint_cache = joint_logits(model, h_enc, h_pre, vocab=vocab)
    cache = ForwardCache(enc_cache, pred_cache, joint_cache)

    trans = transducer_loss(lattice, target)
    losses = {"transducer": trans.loss}
    d_lattice = transducer_weight * trans.grad
    d_ctc = None
    d_inter = None
    if ctc_weight != 0.0:
        res = ctc_loss(CtcLogits(final_ctc_logits(model, h_enc)), target)
        losses["ctc"] = res.loss
        d_ctc = ctc_weight * res.grad
    if inter_weight != 0.0:
        res = ctc_loss(CtcLogits(intermediate_ctc_logits(model, h_inter)), target)
        losses["inter"] = res.loss
        d_inter = inter_weight * res.grad
    grads = backward(model, cache, d_lattice, d_ctc_logits=d_ctc,
                     d_inter_logits=d_inter)
    return losses, grads


def full_model_grad_check(model: ToyModel, features: np.ndarray, labels,
                          vocab: Optional[SampledVocab] = None,
                          epsilon: float = 1.0e-5, **weights) -> float:
    """Max relative error between analytic and central-difference grads,
    taken over every element of every parameter."""

    def total(m: ToyModel) -> float:
        losses, _ = composite_loss_and_grads(m, features, labels, vocab=vocab,
                                             **weights)
        w = {"transducer": weights.get("transducer_weight", 1.0),
             "ctc": weights.get("ctc_weight", 0.5),
             "inter": weights.get("inter_weight", 0.3)}
        return sum(w[k] * v for k, v in losses.items())

    _, grads = composite_loss_and_grads(model, features, labels, vocab=vocab,
                                        **weights)
    worst = 0.0
    for name, arr in model.params.items():
        flat = arr.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + epsilon
            up = total(model)
            flat[i] = keep - epsilon
            down = total(model)
            flat[i] = keep
            fd = (up - down) / (2.0 * epsilon)
            g = grads[name].ravel()[i]
            err = abs(fd - g) / max(abs(fd), abs(g), 1.0)
            worst = max(worst, err)
    return worst


def intermediate_ctc_logits(model: ToyModel, h_inter: np.ndarray) -> np.ndarray:
    return h_inter @ model.params["inter_w"].T + model.params["inter_b"]


def final_ctc_logits(model: ToyModel, h_enc: np.ndarray) -> np.ndarray:
    return h_enc @ model.params["ctc_w"].T + model.params["ctc_b"]


def save_model(model: ToyModel, path) -> None:
    """Little-endian binary checkpoint: header then float64 arrays in order."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IIIII", CHECKPOINT_VERSION, model.feat_dim,
                            model.hidden, model.vocab_size,
                            int(model.self_condition)))
        for name, shape, _ in param_specs(model.feat_dim, model.hidden,
                                          model.vocab_size):
            arr = np.ascontiguousarray(model.params[name], dtype="<f8")
            assert arr.shape == shape
            f.write(arr.tobytes())


def load_model(path) -> ToyModel:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a model checkpoint (bad magic)")
        version, feat_dim, hidden, vocab_size, sc = struct.unpack("<IIIII", f.read(20))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        params = {}
        for name, shape, _ in param_specs(feat_dim, hidden, vocab_size):
            count = int(np.prod(shape))
            raw = f.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated checkpoint at {name}")
            params[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after checkpoint payload")
    return ToyModel(feat_dim, hidden, vocab_size, self_condition=bool(sc),
                    params=params)
