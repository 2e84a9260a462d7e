import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resilsim.faults import (FaultPlan, FaultRecord, faults_for_op, inject,
                             sample_faults, substream)


class TestSampleFaults:
    def test_ber_zero_empty(self):
        assert sample_faults(8, 8, 0.0, 0, "b", substream(0)) == []

    def test_ber_one_all_bits(self):
        out = sample_faults(1, 1, 1.0, 0, "b", substream(0))
        assert sorted(f.bit for f in out) == list(range(32))

    def test_sorted_by_row_col_bit(self):
        out = sample_faults(16, 16, 0.2, 0, "b", substream(3))
        keys = [(f.row, f.col, f.bit) for f in out]
        assert keys == sorted(keys)

    def test_mean_flip_count_binomial(self):
        # 1000-element tensor at ber 1e-3: expected 32 flips per trial.
        # 99% CI on the mean of 10000 trials: 32 +/- 2.5758*sqrt(32*~1)/100.
        rng = substream(11)
        trials = 10000
        counts = [len(sample_faults(50, 20, 1e-3, 0, "b", rng)) for _ in range(trials)]
        mean = np.mean(counts)
        half_width = 2.5758 * np.sqrt(32.0) / np.sqrt(trials)
        assert abs(mean - 32.0) < half_width

    def test_frequency_matches_ber_within_3_sigma(self):
        # >= 10^7 sampled bits in aggregate.
        ber = 2e-3
        n_bits = 320 * 320 * 32  # ~3.3e6 per call
        total_bits = 0
        total_flips = 0
        rng = substream(5)
        for _ in range(4):
            total_flips += len(sample_faults(320, 320, ber, 0, "b", rng))
            total_bits += n_bits
        sigma = np.sqrt(total_bits * ber * (1 - ber))
        assert abs(total_flips - total_bits * ber) < 3 * sigma

    def test_rejects_bad_ber(self):
        with pytest.raises(ValueError):
            sample_faults(2, 2, 1.5, 0, "b", substream(0))


class TestInject:
    def test_single_bit_pattern(self):
        t = np.zeros((1, 1), dtype=np.int32)
        out = inject(t, [FaultRecord(0, "b", 0, 0, 12)])
        assert out[0, 0] == 4096

    def test_xor_involution_single(self):
        t = np.full((1, 1), 4096, dtype=np.int32)
        out = inject(t, [FaultRecord(0, "b", 0, 0, 12)])
        assert out[0, 0] == 0

    def test_sign_bit(self):
        t = np.full((1, 1), 22, dtype=np.int32)
        out = inject(t, [FaultRecord(0, "b", 0, 0, 31)])
        assert out[0, 0] == -2147483626

    def test_other_elements_untouched(self):
        rng = np.random.default_rng(0)
        t = rng.integers(-2**31, 2**31, size=(6, 7), dtype=np.int64).astype(np.int32)
        out = inject(t, [FaultRecord(0, "b", 2, 3, 5)])
        mask = np.ones_like(t, dtype=bool)
        mask[2, 3] = False
        assert np.array_equal(out[mask], t[mask])

    def test_out_of_bounds_rejected(self):
        t = np.zeros((2, 2), dtype=np.int32)
        with pytest.raises(ValueError, match="out of bounds"):
            inject(t, [FaultRecord(0, "b", 2, 0, 0)])

    @settings(max_examples=50, deadline=None)
    @given(st.sets(st.tuples(st.integers(0, 4), st.integers(0, 4),
                             st.integers(0, 31)), max_size=20),
           st.integers(0, 2**32 - 1))
    def test_involution_property(self, triples, seed):
        rng = np.random.default_rng(seed)
        t = rng.integers(-2**31, 2**31, size=(5, 5), dtype=np.int64).astype(np.int32)
        faults = [FaultRecord(0, "b", r, c, b) for r, c, b in triples]
        assert np.array_equal(inject(inject(t, faults), faults), t)

    @given(st.integers(0, 30), st.integers(-2**20, 2**20))
    def test_low_bit_flip_changes_value_by_power_of_two(self, bit, value):
        t = np.full((1, 1), value, dtype=np.int32)
        out = inject(t, [FaultRecord(0, "b", 0, 0, bit)])
        assert abs(int(out[0, 0]) - value) == 2 ** bit


class TestFaultsForOp:
    def test_targeted_filter_miss(self):
        plan = FaultPlan.targeted([FaultRecord(3, "blk0", 0, 0, 5)])
        assert faults_for_op(plan, 2, "blk0", (4, 4)) == []
        assert faults_for_op(plan, 3, "blk1", (4, 4)) == []

    def test_targeted_filter_hit(self):
        rec = FaultRecord(3, "blk0", 0, 0, 5)
        plan = FaultPlan.targeted([rec])
        assert faults_for_op(plan, 3, "blk0", (4, 4)) == [rec]

    def test_random_deterministic(self):
        plan = FaultPlan.random(1e-2, seed=99)
        a = faults_for_op(plan, 4, "blk2", (32, 32))
        b = faults_for_op(plan, 4, "blk2", (32, 32))
        assert a == b

    def test_random_substreams_differ_by_op(self):
        plan = FaultPlan.random(5e-3, seed=99)
        a = faults_for_op(plan, 4, "blk2", (32, 32))
        b = faults_for_op(plan, 5, "blk2", (32, 32))
        c = faults_for_op(plan, 4, "blk3", (32, 32))
        assert [(f.row, f.col, f.bit) for f in a] != [(f.row, f.col, f.bit) for f in b]
        assert [(f.row, f.col, f.bit) for f in a] != [(f.row, f.col, f.bit) for f in c]

    def test_ber_override(self):
        plan = FaultPlan.random(0.0, seed=1)
        assert faults_for_op(plan, 0, "b", (8, 8)) == []
        assert len(faults_for_op(plan, 0, "b", (8, 8), ber=1.0)) == 8 * 8 * 32

    def test_random_plan_rejects_records(self):
        with pytest.raises(ValueError):
            FaultPlan(mode="random", seed=0, ber=0.1,
                      records=(FaultRecord(0, "b", 0, 0, 0),))

    def test_bad_bit_rejected(self):
        with pytest.raises(ValueError):
            FaultRecord(0, "b", 0, 0, 32)
