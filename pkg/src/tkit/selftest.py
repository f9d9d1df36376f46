"""Built-in correctness checks: oracles, gradients, identities.

Each check reruns a small randomized slice of the verification suite
against an independent reference (brute-force enumeration, central
finite differences, or an exact identity).  The CLI's selftest command
prints one row per check and fails if any row fails.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

import tkit.ctc as ctc
import tkit.rnnt as rnnt
from tkit.decode import DecodeConstraint, beam_search, greedy_decode, greedy_hypothesis
from tkit.model import ToyModel, full_model_grad_check
from tkit.numerics import SeededRng
from tkit.rnnt import LogitLattice, TargetSeq
from tkit.sampler import build_positive_set, make_uniform_distribution, sample_vocab


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _random_target(rng, max_len, vocab_size):
    length = int(rng.integers(0, max_len + 1))
    return TargetSeq(tuple(int(v) for v in rng.integers(1, vocab_size, size=length)))


def _random_lattice(rng, T, U, vocab_size):
    return LogitLattice(rng.normal(size=(T, U + 1, vocab_size)))


def check_transducer_oracle(trials=20, seed=0) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        T = int(rng.integers(1, 5))
        target = _random_target(rng, 3, 5)
        lattice = _random_lattice(rng, T, len(target), 5)
        exact = rnnt.transducer_loss(lattice, target).loss
        brute = rnnt.transducer_loss_bruteforce(lattice, target)
        worst = max(worst, abs(exact - brute) / max(abs(brute), 1.0))
    return CheckResult("transducer-loss-vs-enumeration", worst <= 1e-9,
                       f"max relative error {worst:.3e} over {trials} instances")


def check_ctc_oracle(trials=20, seed=1) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        vocab_size = int(rng.integers(2, 5))
        T = int(rng.integers(1, 6))
        target = _random_target(rng, 2, vocab_size)
        logits = ctc.CtcLogits(rng.normal(size=(T, vocab_size)))
        try:
            exact = ctc.ctc_loss(logits, target).loss
        except ValueError:
            continue
        brute = ctc.ctc_loss_bruteforce(logits, target)
        worst = max(worst, abs(exact - brute) / max(abs(brute), 1.0))
    return CheckResult("ctc-loss-vs-enumeration", worst <= 1e-9,
                       f"max relative error {worst:.3e} over {trials} instances")


def check_transducer_gradients(trials=5, seed=2) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        T = int(rng.integers(1, 4))
        target = _random_target(rng, 2, 5)
        lattice = _random_lattice(rng, T, len(target), 5)
        worst = max(worst, rnnt.grad_check(lattice, target))
    return CheckResult("transducer-gradient-vs-finite-differences",
                       worst <= 1e-4, f"max relative error {worst:.3e}")


def check_ctc_gradients(trials=5, seed=3) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        target = TargetSeq(tuple(int(v) for v in rng.integers(1, 4, size=2)))
        T = int(rng.integers(3, 6))
        logits = ctc.CtcLogits(rng.normal(size=(T, 4)))
        worst = max(worst, ctc.ctc_grad_check(logits, target))
    return CheckResult("ctc-gradient-vs-finite-differences",
                       worst <= 1e-4, f"max relative error {worst:.3e}")


def check_full_model_gradients(seed=4) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for self_condition in (False, True):
        model = ToyModel(feat_dim=2, hidden=3, vocab_size=4,
                         self_condition=self_condition, seed=seed)
        features = rng.normal(size=(3, 2))
        worst = max(worst, full_model_grad_check(model, features, [1, 3]))
    return CheckResult("model-gradient-vs-finite-differences",
                       worst <= 1e-3, f"max relative error {worst:.3e}")


def check_sampled_equals_full(trials=20, seed=5) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for trial in range(trials):
        vocab_size = int(rng.integers(4, 7))  # positives (<= 3) never cover the vocab
        T = int(rng.integers(1, 4))
        target = _random_target(rng, 2, vocab_size)
        full = _random_lattice(rng, T, len(target), vocab_size)
        vocab = sample_vocab([target],
                             make_uniform_distribution(
                                 vocab_size, build_positive_set([target])),
                             vocab_size, SeededRng(seed, trial))
        sampled = LogitLattice(full.data[:, :, vocab.ids], label_map=vocab.ids)
        a = rnnt.transducer_loss(full, target).loss
        b = rnnt.transducer_loss(sampled, target).loss
        worst = max(worst, abs(a - b))
    return CheckResult("sampled-softmax-full-cover-identity", worst <= 1e-12,
                       f"max absolute difference {worst:.3e}")


def check_decode_identities(trials=10, seed=6) -> CheckResult:
    rng = np.random.default_rng(seed)
    ok = True
    detail = "constraint and beam identities hold"
    for trial in range(trials):
        model = ToyModel(feat_dim=2, hidden=3, vocab_size=4, seed=trial)
        features = rng.normal(size=(int(rng.integers(1, 4)), 2))
        full = DecodeConstraint(frozenset(range(4)))
        if greedy_decode(model, features, full) != greedy_decode(model, features):
            ok, detail = False, "full constraint changed greedy output"
            break
        restricted = DecodeConstraint(frozenset({0, 2}))
        out = greedy_decode(model, features, restricted)
        if not set(out) <= {2}:
            ok, detail = False, "constrained decode emitted a disallowed label"
            break
        hyp = beam_search(model, features, beam=1)
        ghyp = greedy_hypothesis(model, features)
        if hyp.labels != ghyp.labels or hyp.score != ghyp.score:
            ok, detail = False, "beam of one diverged from greedy"
            break
    return CheckResult("decode-identities", ok, detail)


def run_selftest() -> List[CheckResult]:
    return [
        check_transducer_oracle(),
        check_ctc_oracle(),
        check_transducer_gradients(),
        check_ctc_gradients(),
        check_full_model_gradients(),
        check_sampled_equals_full(),
        check_decode_identities(),
    ]


def format_report(results: List[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL'}  {r.detail}"
             for r in results]
    failed = sum(1 for r in results if not r.passed)
    lines.append(f"{len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines)
