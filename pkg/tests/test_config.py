"""Config parsing: key=value files into typed configs, errors naming keys."""

import pytest

from tkit.config import (
    TrainConfig,
    mem_config_from_kv,
    parse_kv_file,
    parse_kv_text,
    synth_spec_from_kv,
    train_config_from_kv,
)


class TestKvParsing:
    def test_basic_pairs_with_comments_and_blanks(self):
        text = """
        # experiment knobs
        model.vocab_size = 200

        sampling.strategy=example-wise  # trailing comment
        """
        kv = parse_kv_text(text)
        assert kv == {"model.vocab_size": "200",
                      "sampling.strategy": "example-wise"}

    def test_line_without_equals_is_rejected(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_kv_text("a=1\nnot a pair\n")

    def test_duplicate_key_is_rejected(self):
        with pytest.raises(ValueError, match="duplicate key a"):
            parse_kv_text("a=1\na=2\n")

    def test_empty_key_is_rejected(self):
        with pytest.raises(ValueError, match="empty key"):
            parse_kv_text("=3\n")

    def test_file_errors_name_the_file(self, tmp_path):
        path = tmp_path / "broken.conf"
        path.write_text("oops\n")
        with pytest.raises(ValueError, match="broken.conf"):
            parse_kv_file(path)


class TestTrainConfig:
    def minimal(self, **extra):
        kv = {"model.vocab_size": "8", "model.feat_dim": "3"}
        kv.update(extra)
        return train_config_from_kv(kv)

    def test_defaults(self):
        config = self.minimal()
        assert config.hidden == 16
        assert config.lr == pytest.approx(1e-3)
        assert (config.beta1, config.beta2) == (0.9, 0.999)
        assert config.weight_transducer == 1.0
        assert config.weight_ctc == 0.5
        assert config.weight_inter == 0.3
        assert config.sampling_total_size == 0
        assert not config.uses_sampling

    def test_unknown_key_is_named(self):
        with pytest.raises(ValueError, match="sampling.total_szie"):
            self.minimal(**{"sampling.total_szie": "50"})

    def test_missing_required_key_is_named(self):
        with pytest.raises(ValueError, match="model.vocab_size"):
            train_config_from_kv({"model.feat_dim": "3"})

    def test_bad_integer_is_named(self):
        with pytest.raises(ValueError, match="epochs"):
            self.minimal(epochs="three")

    def test_enum_values_are_checked(self):
        with pytest.raises(ValueError, match="sampling.strategy"):
            self.minimal(**{"sampling.strategy": "pooled"})
        with pytest.raises(ValueError, match="sampling.distribution"):
            self.minimal(**{"sampling.distribution": "ctc"})
        with pytest.raises(ValueError, match="decode.mode"):
            self.minimal(**{"decode.mode": "viterbi"})

    def test_total_size_bounded_by_vocab(self):
        with pytest.raises(ValueError, match="sampling.total_size"):
            self.minimal(**{"sampling.total_size": "9"})
        assert self.minimal(**{"sampling.total_size": "8"}).uses_sampling

    def test_sc_ctc_requires_self_condition(self):
        with pytest.raises(ValueError, match="sc-ctc"):
            self.minimal(**{"sampling.distribution": "sc-ctc"})
        config = self.minimal(**{"sampling.distribution": "sc-ctc",
                                 "model.self_condition": "true"})
        assert config.self_condition

    def test_rate_bounds(self):
        with pytest.raises(ValueError, match="optimizer.lr"):
            self.minimal(**{"optimizer.lr": "0"})
        with pytest.raises(ValueError, match="beta"):
            self.minimal(**{"optimizer.beta1": "1.5"})
        with pytest.raises(ValueError, match="loss.ctc"):
            self.minimal(**{"loss.ctc": "-1"})

    def test_direct_construction_validates_too(self):
        with pytest.raises(ValueError, match="decode.beam"):
            TrainConfig(vocab_size=8, feat_dim=3, decode_beam=0)


class TestOtherConfigs:
    def test_synth_spec_round_trip(self):
        spec, n, start = synth_spec_from_kv({"vocab_size": "20", "feat_dim": "4",
                                             "frames_min": "2", "frames_max": "3",
                                             "n": "40", "start": "10"})
        assert spec.vocab_size == 20
        assert spec.frames_per_label == (2, 3)
        assert (n, start) == (40, 10)

    def test_synth_spec_unknown_key(self):
        with pytest.raises(ValueError, match="vocabsize"):
            synth_spec_from_kv({"vocab_size": "20", "feat_dim": "4",
                                "vocabsize": "20"})

    def test_mem_config_sweep(self):
        cfg, sweep = mem_config_from_kv({"frames": "500", "target_len": "100",
                                         "vocab_size": "2000",
                                         "sweep": "2000,1000,300"})
        assert cfg.frames == 500
        assert sweep == [2000, 1000, 300]

    def test_mem_config_sweep_defaults_to_full(self):
        _, sweep = mem_config_from_kv({"frames": "5", "target_len": "2",
                                       "vocab_size": "30"})
        assert sweep == [30]

    def test_mem_config_sweep_bounds(self):
        with pytest.raises(ValueError, match="sweep"):
            mem_config_from_kv({"frames": "5", "target_len": "2",
                                "vocab_size": "30", "sweep": "40"})
