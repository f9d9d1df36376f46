"""Command-line entry point.

Subcommands: gen-data, train, eval, memplot, bench, selftest.  Output is
line-oriented key=value (logs) or CSV with a documented header (tables).
Malformed input produces a one-line `error:` diagnostic naming the
offending field and a nonzero exit.  TKIT_LOG selects verbosity: debug
(echo the effective config), info (default), quiet (suppress progress).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from tkit.config import (TrainConfig, bench_config_from_kv, decode_settings_from_kv,
                         mem_config_from_kv, parse_kv_file, synth_spec_from_kv,
                         train_config_from_kv)
from tkit.dataio import Utterance, generate, read_dataset, write_dataset
from tkit.decode import decode_utterance
from tkit.memory import AllocationMeter, memory_report
from tkit.metrics import token_error_rate
from tkit.model import ToyModel, load_model, save_model
from tkit.rnnt import TargetSeq
from tkit.selftest import format_report, run_selftest
from tkit.train import Adam, TrainingDiverged, train, train_step

LOG_LEVELS = ("debug", "info", "quiet")


def _log_level() -> str:
    level = os.environ.get("TKIT_LOG", "info")
    if level not in LOG_LEVELS:
        raise ValueError(f"TKIT_LOG: expected one of {', '.join(LOG_LEVELS)}, "
                         f"got {level!r}")
    return level


def _emit_lines(path, lines) -> None:
    text = "".join(line + "\n" for line in lines)
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _check_workers(workers: int) -> int:
    if workers < 1:
        raise ValueError("workers: must be positive")
    return workers


def cmd_gen_data(args) -> int:
    spec, n, start = synth_spec_from_kv(parse_kv_file(args.config))
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    data = generate(spec, n, start=start)
    write_dataset(data, args.out)
    if args.log_level != "quiet":
        print(f"utterances={len(data)} vocab_size={data.vocab_size} "
              f"feat_dim={data.feat_dim} out={args.out}")
    return 0


def cmd_train(args) -> int:
    config = train_config_from_kv(parse_kv_file(args.config))
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    data = read_dataset(args.data)
    dev = read_dataset(args.dev) if args.dev else None
    if args.log_level == "debug":
        for field in dataclasses.fields(config):
            print(f"config.{field.name}={getattr(config, field.name)}")
    log_fn = print if args.log_level != "quiet" else None
    result = train(config, data, dev=dev, workers=_check_workers(args.workers),
                   log_fn=log_fn)
    save_model(result.model, args.out)
    if args.log_level != "quiet":
        print(f"checkpoint={args.out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.checkpoint)
    data = read_dataset(args.data)
    if data.vocab_size and data.vocab_size != model.vocab_size:
        raise ValueError(f"checkpoint vocab_size={model.vocab_size} does not "
                         f"match dataset vocab_size={data.vocab_size}")
    if data.feat_dim and data.feat_dim != model.feat_dim:
        raise ValueError(f"checkpoint feat_dim={model.feat_dim} does not "
                         f"match dataset feat_dim={data.feat_dim}")
    mode, beam, top_k = ("greedy", 10, 0)
    if args.config is not None:
        mode, beam, top_k = decode_settings_from_kv(
            parse_kv_file(args.config), model.vocab_size)

    def decode_one(utt):
        return decode_utterance(model, utt.features, mode, beam, top_k)

    workers = _check_workers(args.workers)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            hyps = list(pool.map(decode_one, data))
    else:
        hyps = [decode_one(utt) for utt in data]
    refs = [list(utt.target.labels) for utt in data]
    ter = token_error_rate(refs, hyps)
    if args.out:
        _emit_lines(args.out, [
            " ".join([utt.id] + [str(v) for v in hyp])
            for utt, hyp in zip(data, hyps)])
    print(f"ter={ter:.4f} utterances={len(data)} mode={mode}")
    return 0


def cmd_memplot(args) -> int:
    cfg, sweep = mem_config_from_kv(parse_kv_file(args.config))
    lines = ["sampled_size,component,bytes"]
    for size in sweep:
        report = memory_report(dataclasses.replace(cfg, sampled_size=size))
        lines.extend(f"{size},{component},{nbytes}"
                     for component, nbytes in report.rows())
    _emit_lines(args.out, lines)
    return 0


def _bench_batches(cfg) -> list:
    """Fixed-shape random batches; adjacent labels never repeat."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 11)))
    batches = []
    for step in range(cfg.steps):
        batch = []
        for i in range(cfg.batch):
            labels = []
            for _ in range(cfg.target_len):
                v = int(rng.integers(1, cfg.vocab_size))
                while labels and v == labels[-1]:
                    v = int(rng.integers(1, cfg.vocab_size))
                labels.append(v)
            batch.append(Utterance(rng.normal(size=(cfg.frames, cfg.feat_dim)),
                                   TargetSeq(tuple(labels)), f"bench-{step}-{i}"))
        batches.append(batch)
    return batches


def _bench_run(cfg, total_size: int, batches) -> str:
    """One CSV row: train `steps` steps from a fresh model at this size."""
    config = TrainConfig(
        vocab_size=cfg.vocab_size, feat_dim=cfg.feat_dim, hidden=cfg.hidden,
        batch_size=cfg.batch, seed=cfg.seed,
        sampling_strategy="example-wise", sampling_distribution="uniform",
        sampling_total_size=total_size)
    model = ToyModel(cfg.feat_dim, cfg.hidden, cfg.vocab_size, seed=cfg.seed)
    optimizer = Adam(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
    meter = AllocationMeter()
    losses = []
    start = time.perf_counter()
    for step, batch in enumerate(batches):
        losses.append(train_step(model, config, batch, optimizer, meter, step)
                      ["transducer"])
    wall = time.perf_counter() - start
    mode = "sampled" if total_size else "full"
    reported = total_size or cfg.vocab_size
    return (f"{mode},{reported},{wall:.6f},{meter.peak_bytes},"
            f"{sum(losses) / len(losses):.12g}")


def cmd_bench(args) -> int:
    cfg = bench_config_from_kv(parse_kv_file(args.config))
    batches = _bench_batches(cfg)
    lines = ["mode,total_size,wall_seconds,peak_logit_bytes,mean_loss",
             _bench_run(cfg, 0, batches),
             _bench_run(cfg, cfg.total_size, batches)]
    _emit_lines(args.out, lines)
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest()
    print(format_report(results))
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tkit",
        description="Memory-efficient transducer training toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="generation spec file")
    p.add_argument("--out", required=True, help="output dataset path")
    p.add_argument("--seed", type=int, default=None, help="override spec seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", required=True, help="training config file")
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.add_argument("--dev", default=None, help="dev dataset for per-epoch error")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--workers", type=int, default=1, help="data-parallel workers")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="model checkpoint")
    p.add_argument("--data", required=True, help="evaluation dataset")
    p.add_argument("--config", default=None,
                   help="config file supplying decode.* keys (others ignored)")
    p.add_argument("--out", default=None, help="per-utterance hypothesis file")
    p.add_argument("--workers", type=int, default=1, help="parallel decoders")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("memplot", help="memory model sweep as CSV")
    p.add_argument("--config", required=True, help="memory shape config file")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_memplot)

    p = sub.add_parser("bench", help="time full vs sampled training steps")
    p.add_argument("--config", required=True, help="bench shape config file")
    p.add_argument("--out", default=None, help="CSV path (default stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("selftest", help="run built-in correctness checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        args.log_level = _log_level()
        return args.func(args)
    except (ValueError, OSError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
