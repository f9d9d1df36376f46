"""Memory accounting: golden numbers, exact ratios, monotonicity."""

import numpy as np
import pytest

from tkit.memory import AllocationMeter, MemConfig, MemoryReport, logit_tensor_bytes, memory_report


def cfg(**kw):
    base = dict(frames=10, target_len=5, vocab_size=8, hidden=4, feat_dim=3,
                batch=2, element_bytes=4)
    base.update(kw)
    return MemConfig(**base)


class TestLogitTensorBytes:
    def test_large_vocabulary_golden_value(self):
        # [DERIVED] 500 * 101 * 2000 * 4 = 404,000,000
        c = MemConfig(frames=500, target_len=100, vocab_size=2000,
                      hidden=1, feat_dim=1, batch=1, element_bytes=4)
        assert logit_tensor_bytes(c) == 404_000_000

    def test_gradients_double_it(self):
        c = cfg()
        assert logit_tensor_bytes(c, with_gradients=True) == 2 * logit_tensor_bytes(c)

    def test_sampled_equal_to_full_changes_nothing(self):
        assert logit_tensor_bytes(cfg(sampled_size=8)) == logit_tensor_bytes(cfg())

    def test_reduction_ratio_is_exact(self):
        full = MemConfig(frames=500, target_len=100, vocab_size=2000,
                         hidden=1, feat_dim=1)
        sampled = MemConfig(frames=500, target_len=100, vocab_size=2000,
                            hidden=1, feat_dim=1, sampled_size=300)
        # full/sampled == vocab/sampled, checked in integers
        assert logit_tensor_bytes(full) * 300 == logit_tensor_bytes(sampled) * 2000

    def test_scales_linearly_in_batch(self):
        assert logit_tensor_bytes(cfg(batch=6)) == 3 * logit_tensor_bytes(cfg(batch=2))


class TestMemoryReport:
    def test_golden_components(self):
        # [DERIVED] hand-computed for frames=10, target_len=5, V=8, H=4,
        # F=3, batch=2, 4-byte elements:
        #   encoder params 184, acts 2*10*(3+12+8)=460 -> 2576 bytes
        #   predictor params 68, acts 2*11*4=88        -> 624 bytes
        #   joint params 68, acts 2*10*6*4=480         -> 2192 bytes
        #   logit 2*10*6*8*4                            = 3840 bytes
        #   gradients (184+68+68)*4                     = 1280 bytes
        report = memory_report(cfg())
        assert report.encoder == 2576
        assert report.predictor == 624
        assert report.joint == 2192
        assert report.logit_tensor == 3840
        assert report.gradients == 1280
        assert report.total == 10512

    def test_total_is_component_sum(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            c = cfg(frames=int(rng.integers(1, 40)),
                    target_len=int(rng.integers(0, 20)),
                    vocab_size=int(rng.integers(2, 50)),
                    batch=int(rng.integers(1, 8)))
            report = memory_report(c)
            assert report.total == sum(report.components().values())
            assert all(v >= 0 for v in report.components().values())

    def test_sampling_moves_total_by_exactly_the_logit_delta(self):
        full = memory_report(cfg(vocab_size=2000))
        sampled = memory_report(cfg(vocab_size=2000, sampled_size=300))
        assert full.total - sampled.total == full.logit_tensor - sampled.logit_tensor
        assert (full.encoder, full.predictor, full.joint, full.gradients) == \
            (sampled.encoder, sampled.predictor, sampled.joint, sampled.gradients)

    def test_logit_component_strictly_decreasing_in_sampled_size(self):
        sizes = [8, 6, 4, 2, 1]
        values = [memory_report(cfg(sampled_size=s)).logit_tensor for s in sizes]
        assert all(a > b for a, b in zip(values, values[1:]))

    def test_totals_monotone_in_each_dimension(self):
        base = cfg()
        for field, bigger in [("frames", 11), ("target_len", 6),
                              ("vocab_size", 9), ("batch", 3),
                              ("hidden", 5), ("element_bytes", 8)]:
            grown = memory_report(cfg(**{field: bigger})).total
            assert grown >= memory_report(base).total

    def test_encoder_and_logit_are_separate_rows(self):
        # the report must let the two be compared side by side
        names = [name for name, _ in memory_report(cfg()).rows()]
        assert "encoder" in names and "logit_tensor" in names
        assert names[-1] == "total"

    def test_negative_component_is_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            MemoryReport(encoder=-1, predictor=0, joint=0, logit_tensor=0,
                         gradients=0)


class TestMemConfig:
    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ValueError, match="frames"):
            cfg(frames=0)
        with pytest.raises(ValueError, match="batch"):
            cfg(batch=0)

    def test_rejects_oversized_sample(self):
        with pytest.raises(ValueError, match="sampled_size"):
            cfg(sampled_size=9)

    def test_empty_target_is_allowed(self):
        assert logit_tensor_bytes(cfg(target_len=0)) == 2 * 10 * 1 * 8 * 4


class TestAllocationMeter:
    def test_peak_tracks_high_water_mark(self):
        meter = AllocationMeter()
        meter.allocate(100)
        meter.allocate(50)
        meter.release(100)
        meter.allocate(20)
        assert meter.current_bytes == 70
        assert meter.peak_bytes == 150

    def test_release_cannot_exceed_outstanding(self):
        meter = AllocationMeter()
        meter.allocate(10)
        with pytest.raises(ValueError, match="release"):
            meter.release(11)

    def test_reset_clears_both_counters(self):
        meter = AllocationMeter()
        meter.allocate(10)
        meter.reset()
        assert meter.current_bytes == 0 and meter.peak_bytes == 0
