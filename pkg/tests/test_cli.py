"""CLI subcommands: pipeline smoke, CSV outputs, diagnostics, exit codes."""

import numpy as np
import pytest

from tkit import cli
from tkit.model import load_model
from tkit.rnnt import LossResult
import tkit.rnnt


SPEC_TEXT = """
vocab_size=10
feat_dim=3
mean_target_len=3
frames_min=1
frames_max=2
noise=0.05
seed=7
n=24
"""

TRAIN_TEXT = """
model.vocab_size=10
model.feat_dim=3
model.hidden=6
epochs=2
batch_size=6
seed=3
"""


def write(path, text):
    path.write_text(text.strip() + "\n")
    return str(path)


@pytest.fixture()
def workdir(tmp_path):
    spec = write(tmp_path / "spec.kv", SPEC_TEXT)
    cfg = write(tmp_path / "train.kv", TRAIN_TEXT)
    assert cli.main(["gen-data", "--config", spec,
                     "--out", str(tmp_path / "train.jsonl")]) == 0
    assert cli.main(["gen-data", "--config", spec, "--seed", "8",
                     "--out", str(tmp_path / "dev.jsonl")]) == 0
    return tmp_path


def run_eval(tmp_path, capsys, extra_cfg="", out=None):
    args = ["eval", "--checkpoint", str(tmp_path / "model.ckpt"),
            "--data", str(tmp_path / "dev.jsonl")]
    if extra_cfg:
        args += ["--config", write(tmp_path / "decode.kv", extra_cfg)]
    if out:
        args += ["--out", out]
    assert cli.main(args) == 0
    return capsys.readouterr().out


class TestPipeline:
    def test_gen_train_eval(self, workdir, capsys):
        code = cli.main(["train", "--config", str(workdir / "train.kv"),
                         "--data", str(workdir / "train.jsonl"),
                         "--dev", str(workdir / "dev.jsonl"),
                         "--out", str(workdir / "model.ckpt")])
        assert code == 0
        out = capsys.readouterr().out
        epoch_lines = [l for l in out.splitlines() if l.startswith("epoch=")]
        assert len(epoch_lines) == 2
        assert "loss_transducer=" in epoch_lines[0]
        assert "dev_ter=" in epoch_lines[0]
        model = load_model(workdir / "model.ckpt")
        assert model.vocab_size == 10

        hyp_path = workdir / "hyps.txt"
        out = run_eval(workdir, capsys, out=str(hyp_path))
        assert out.startswith("ter=")
        lines = hyp_path.read_text().splitlines()
        assert len(lines) == 24
        assert all(line.split()[0].startswith("utt-") for line in lines)

    def test_gen_data_deterministic(self, workdir, tmp_path):
        spec = str(workdir / "spec.kv")
        again = tmp_path / "again.jsonl"
        assert cli.main(["gen-data", "--config", spec, "--out", str(again)]) == 0
        assert again.read_bytes() == (workdir / "train.jsonl").read_bytes()

    def test_seed_flag_changes_data(self, workdir):
        assert ((workdir / "train.jsonl").read_bytes()
                != (workdir / "dev.jsonl").read_bytes())

    def test_train_reruns_byte_identical(self, workdir, capsys):
        outs, ckpts = [], []
        for name in ("a.ckpt", "b.ckpt"):
            assert cli.main(["train", "--config", str(workdir / "train.kv"),
                             "--data", str(workdir / "train.jsonl"),
                             "--dev", str(workdir / "dev.jsonl"),
                             "--out", str(workdir / name)]) == 0
            out = capsys.readouterr().out
            outs.append(out[:out.rindex("checkpoint=")])  # paths differ by design
            ckpts.append((workdir / name).read_bytes())
        assert outs[0] == outs[1]
        assert ckpts[0] == ckpts[1]

    def test_train_seed_flag_overrides_config(self, workdir, capsys):
        for name, seed in (("a.ckpt", []), ("b.ckpt", ["--seed", "4"])):
            assert cli.main(["train", "--config", str(workdir / "train.kv"),
                             "--data", str(workdir / "train.jsonl"),
                             "--out", str(workdir / name)] + seed) == 0
        capsys.readouterr()
        assert ((workdir / "a.ckpt").read_bytes()
                != (workdir / "b.ckpt").read_bytes())


class TestLogLevels:
    def test_quiet_suppresses_progress(self, workdir, capsys, monkeypatch):
        monkeypatch.setenv("TKIT_LOG", "quiet")
        assert cli.main(["train", "--config", str(workdir / "train.kv"),
                         "--data", str(workdir / "train.jsonl"),
                         "--out", str(workdir / "model.ckpt")]) == 0
        assert capsys.readouterr().out == ""

    def test_debug_echoes_config(self, workdir, capsys, monkeypatch):
        monkeypatch.setenv("TKIT_LOG", "debug")
        assert cli.main(["train", "--config", str(workdir / "train.kv"),
                         "--data", str(workdir / "train.jsonl"),
                         "--out", str(workdir / "model.ckpt")]) == 0
        out = capsys.readouterr().out
        assert "config.vocab_size=10" in out
        assert "config.seed=3" in out

    def test_bad_level_rejected(self, workdir, capsys, monkeypatch):
        monkeypatch.setenv("TKIT_LOG", "loud")
        assert cli.main(["selftest"]) == 2
        assert "TKIT_LOG" in capsys.readouterr().err


class TestEvalIdentities:
    @pytest.fixture()
    def trained(self, workdir, capsys):
        assert cli.main(["train", "--config", str(workdir / "train.kv"),
                         "--data", str(workdir / "train.jsonl"),
                         "--out", str(workdir / "model.ckpt")]) == 0
        capsys.readouterr()
        return workdir

    def test_beam_one_matches_greedy(self, trained, capsys):
        greedy = run_eval(trained, capsys, "decode.mode=greedy")
        beam1 = run_eval(trained, capsys, "decode.mode=beam\ndecode.beam=1")
        assert greedy.split("mode=")[0] == beam1.split("mode=")[0]

    def test_full_constraint_matches_unconstrained(self, trained, capsys):
        plain = run_eval(trained, capsys, "decode.ctc_top_k=0",
                         out=str(trained / "h0.txt"))
        full = run_eval(trained, capsys, "decode.ctc_top_k=9",
                        out=str(trained / "h9.txt"))
        assert plain == full
        assert ((trained / "h0.txt").read_text()
                == (trained / "h9.txt").read_text())

    def test_workers_do_not_change_metrics(self, trained, capsys):
        one = run_eval(trained, capsys)
        args = ["eval", "--checkpoint", str(trained / "model.ckpt"),
                "--data", str(trained / "dev.jsonl"), "--workers", "3"]
        assert cli.main(args) == 0
        assert capsys.readouterr().out == one

    def test_non_decode_keys_ignored(self, trained, capsys):
        via_train_cfg = ["eval", "--checkpoint", str(trained / "model.ckpt"),
                         "--data", str(trained / "dev.jsonl"),
                         "--config", str(trained / "train.kv")]
        assert cli.main(via_train_cfg) == 0
        assert cli.main(via_train_cfg[:-2]) == 0
        with_cfg, without_cfg = capsys.readouterr().out.splitlines()
        assert with_cfg == without_cfg


class TestMemplot:
    def run(self, tmp_path, capsys, text):
        cfg = write(tmp_path / "mem.kv", text)
        assert cli.main(["memplot", "--config", cfg]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "sampled_size,component,bytes"
        rows = {}
        for line in lines[1:]:
            size, component, nbytes = line.split(",")
            rows[(int(size), component)] = int(nbytes)
        return rows

    def test_reference_shape_row(self, tmp_path, capsys):
        rows = self.run(tmp_path, capsys, """
frames=500
target_len=100
vocab_size=2000
sweep=50,2000
""")
        assert rows[(2000, "logit_tensor")] == 404_000_000
        assert rows[(50, "logit_tensor")] == 10_100_000

    def test_logit_rows_monotone(self, tmp_path, capsys):
        rows = self.run(tmp_path, capsys, """
frames=20
target_len=6
vocab_size=100
sweep=10,20,50,100
""")
        logit = [rows[(k, "logit_tensor")] for k in (10, 20, 50, 100)]
        assert logit == sorted(logit)
        assert all(a < b for a, b in zip(logit, logit[1:]))

    def test_total_row_sums_components(self, tmp_path, capsys):
        rows = self.run(tmp_path, capsys, """
frames=20
target_len=6
vocab_size=100
sweep=25
""")
        parts = [v for (s, c), v in rows.items() if c != "total"]
        assert rows[(25, "total")] == sum(parts)

    def test_bad_sweep_rejected(self, tmp_path, capsys):
        cfg = write(tmp_path / "mem.kv",
                    "frames=20\ntarget_len=6\nvocab_size=100\nsweep=0,10")
        assert cli.main(["memplot", "--config", cfg]) == 2
        assert "sweep" in capsys.readouterr().err


class TestBench:
    def run(self, tmp_path, capsys, total_size):
        cfg = write(tmp_path / "bench.kv", f"""
vocab_size=16
total_size={total_size}
feat_dim=3
hidden=5
frames=6
target_len=2
batch=3
steps=2
seed=5
""")
        assert cli.main(["bench", "--config", cfg]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "mode,total_size,wall_seconds,peak_logit_bytes,mean_loss"
        assert len(lines) == 3
        rows = {}
        for line in lines[1:]:
            mode, size, wall, peak, loss = line.split(",")
            rows[mode] = (int(size), float(wall), int(peak), float(loss))
        return rows

    def test_peak_ratio_matches_sizes(self, tmp_path, capsys):
        rows = self.run(tmp_path, capsys, 8)
        assert rows["full"][0] == 16 and rows["sampled"][0] == 8
        # exact integer ratio: peak_full * sampled_size == peak_sampled * vocab
        assert rows["full"][2] * 8 == rows["sampled"][2] * 16
        assert rows["full"][1] > 0 and rows["sampled"][1] > 0

    def test_full_cover_matches_full_loss(self, tmp_path, capsys):
        rows = self.run(tmp_path, capsys, 16)
        assert rows["full"][2] == rows["sampled"][2]
        assert rows["sampled"][3] == pytest.approx(rows["full"][3], abs=1e-10)


class TestSelftest:
    def test_passes_and_exits_zero(self, capsys):
        assert cli.main(["selftest"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out
        assert out.count("PASS") == 7

    def test_gradient_sign_flip_detected(self, capsys, monkeypatch):
        real = tkit.rnnt.transducer_loss

        def flipped(lattice, target):
            result = real(lattice, target)
            return LossResult(result.loss, -result.grad)

        monkeypatch.setattr(tkit.rnnt, "transducer_loss", flipped)
        assert cli.main(["selftest"]) == 1
        out = capsys.readouterr().out
        assert "transducer-gradient-vs-finite-differences  FAIL" in out


class TestDiagnostics:
    def test_missing_config_key_named(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.kv", "model.feat_dim=3")
        data = write(tmp_path / "d.jsonl", "")
        assert cli.main(["train", "--config", cfg, "--data", data,
                         "--out", str(tmp_path / "m.ckpt")]) == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "model.vocab_size" in err
        assert err.count("\n") == 1

    def test_unknown_config_key_named(self, tmp_path, capsys):
        cfg = write(tmp_path / "bad.kv",
                    "model.vocab_size=10\nmodel.feat_dim=3\nmodel.hiden=4")
        data = write(tmp_path / "d.jsonl", "")
        assert cli.main(["train", "--config", cfg, "--data", data,
                         "--out", str(tmp_path / "m.ckpt")]) == 2
        assert "model.hiden" in capsys.readouterr().err

    def test_missing_file_reported(self, tmp_path, capsys):
        assert cli.main(["memplot", "--config", str(tmp_path / "nope.kv")]) == 2
        assert "nope.kv" in capsys.readouterr().err

    def test_vocab_mismatch_reported(self, workdir, capsys):
        cfg = write(workdir / "other.kv",
                    "model.vocab_size=11\nmodel.feat_dim=3")
        assert cli.main(["train", "--config", cfg,
                         "--data", str(workdir / "train.jsonl"),
                         "--out", str(workdir / "m.ckpt")]) == 2
        err = capsys.readouterr().err
        assert "vocab_size" in err

    def test_bad_workers_rejected(self, workdir, capsys):
        assert cli.main(["train", "--config", str(workdir / "train.kv"),
                         "--data", str(workdir / "train.jsonl"),
                         "--out", str(workdir / "m.ckpt"),
                         "--workers", "0"]) == 2
        assert "workers" in capsys.readouterr().err

    def test_bad_decode_key_named(self, workdir, capsys):
        assert cli.main(["train", "--config", str(workdir / "train.kv"),
                         "--data", str(workdir / "train.jsonl"),
                         "--out", str(workdir / "model.ckpt")]) == 0
        capsys.readouterr()
        cfg = write(workdir / "decode.kv", "decode.beem=2")
        assert cli.main(["eval", "--checkpoint", str(workdir / "model.ckpt"),
                         "--data", str(workdir / "dev.jsonl"),
                         "--config", cfg]) == 2
        assert "decode.beem" in capsys.readouterr().err

    def test_missing_subcommand_exits_nonzero(self, capsys):
        assert cli.main([]) != 0
        capsys.readouterr()

    def test_unknown_flag_exits_nonzero(self, capsys):
        assert cli.main(["selftest", "--frobnicate"]) != 0
        capsys.readouterr()
