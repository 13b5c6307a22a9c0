import math

import numpy as np
import pytest

from flcomm.sensitivity_controller import (
    LEVEL_ANCHOR,
    ClientGradientReport,
    SensitivityState,
    check_freeze,
    error_sensitivity,
    global_gradient,
    level_to_bits,
    moving_average,
    observe,
    rebaseline,
    update_level,
)


def report(g, n=1):
    return ClientGradientReport(gradient=np.asarray(g, dtype=np.float64), dataset_size=n)


class TestGlobalGradient:
    def test_singleton_identity(self):
        g = global_gradient([report([1.0, 2.0], 1)])
        np.testing.assert_array_equal(g, [1.0, 2.0])

    def test_antisymmetric_pair(self):
        g = global_gradient([report([1.0, 0.0], 1), report([-1.0, 0.0], 1)])
        np.testing.assert_array_equal(g, [0.0, 0.0])

    def test_size_weighting(self):
        g = global_gradient([report([2.0, 0.0], 2), report([0.0, 4.0], 4)])
        np.testing.assert_allclose(g, [0.5, 0.5])

    def test_uniform_toggle(self):
        g = global_gradient([report([2.0, 0.0], 2), report([0.0, 4.0], 4)], weighting="uniform")
        np.testing.assert_allclose(g, [1.0, 2.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            global_gradient([])


class TestErrorSensitivity:
    def test_identical_gradients_zero(self):
        reps = [report([1.0, 1.0]), report([1.0, 1.0])]
        g = np.array([1.0, 1.0])
        assert error_sensitivity(reps, g) == 0.0

    def test_two_client_variance(self):
        reps = [report([1.0, 0.0]), report([-1.0, 0.0])]
        assert error_sensitivity(reps, np.zeros(2)) == 1.0

    def test_singleton_with_unit_size(self):
        reps = [report([3.0, -1.0], 1)]
        g = global_gradient(reps)
        assert error_sensitivity(reps, g) == 0.0

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        reps = [report(rng.normal(size=5)) for _ in range(4)]
        assert error_sensitivity(reps, global_gradient(reps)) >= 0.0


def make_state(**kw):
    defaults = dict(
        level_q=4.0, e_thresh=1.0, gamma=2.0, band_eps=0.1,
        window_w=5, rebase_t=20, v_thresh=0.25, q_init=4.0,
    )
    defaults.update(kw)
    return SensitivityState(**defaults)


class TestUpdateLevel:
    def test_low_sensitivity_coarsens(self):
        s = update_level(make_state(), 0.5)
        assert s.level_q == 8.0

    def test_inside_band_holds(self):
        s = update_level(make_state(), 1.05)
        assert s.level_q == 4.0

    def test_high_sensitivity_refines(self):
        s = update_level(make_state(), 2.0)
        assert s.level_q == 2.0

    def test_frozen_holds(self):
        s = update_level(make_state(frozen=True), 2.0)
        assert s.level_q == 4.0

    def test_clamping(self):
        s = make_state(level_q=256.0, q_max=256.0)
        assert update_level(s, 0.5).level_q == 256.0
        s = make_state(level_q=1.0, q_min=1.0)
        assert update_level(s, 9.9).level_q == 1.0

    def test_history_appended_even_when_frozen(self):
        s = update_level(make_state(frozen=True), 2.0)
        assert s.history == (2.0,)

    def test_scale_coherence(self):
        s = make_state(level_q=4.0)
        s = update_level(s, 3.0)   # refine: 2.0
        s = update_level(s, 0.2)   # coarsen: back to 4.0 exactly
        assert s.level_q == 4.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            update_level(make_state(), -0.1)


class TestCheckFreeze:
    def test_moving_average_value(self):
        s = make_state(window_w=2, history=(1.0, 3.0))
        assert moving_average(s) == 2.0

    def test_short_history_noop(self):
        s = make_state(window_w=3, history=(1.0,))
        assert math.isnan(moving_average(s))
        assert check_freeze(s) == s

    def test_freezes_after_w_consecutive(self):
        s = make_state(window_w=2, e_thresh=5.0, history=(1.0, 3.0))
        s = check_freeze(s)
        assert not s.frozen and s.below_count == 1
        s = update_level(s, 2.0)
        s = check_freeze(s)
        assert s.frozen

    def test_unfreezes_on_high_average(self):
        s = make_state(window_w=2, e_thresh=5.0, frozen=True, below_count=2,
                       history=(10.0, 10.0))
        s = check_freeze(s)
        assert not s.frozen and s.below_count == 0


class TestRebaseline:
    def test_zero_variance_no_fire(self):
        s = make_state(rebase_t=2, v_thresh=0.5, history=(1.0, 1.0))
        out, fired = rebaseline(s)
        assert not fired and out == s

    def test_fires_on_high_variance(self):
        s = make_state(rebase_t=2, v_thresh=0.5, history=(0.0, 2.0),
                       level_q=8.0, q_max=256.0, frozen=True, below_count=3)
        out, fired = rebaseline(s)
        assert fired
        assert out.q_init == 8.0 and not out.frozen and out.below_count == 0

    def test_threshold_not_exceeded(self):
        s = make_state(rebase_t=2, v_thresh=2.0, history=(0.0, 2.0))
        _, fired = rebaseline(s)
        assert not fired  # variance is exactly 1

    def test_short_history_noop(self):
        s = make_state(rebase_t=5, history=(0.0, 2.0))
        _, fired = rebaseline(s)
        assert not fired


class TestLevelToBits:
    def test_anchor_maps_to_base(self):
        assert level_to_bits(LEVEL_ANCHOR, 8) == 8

    def test_doubling_drops_one_bit(self):
        assert level_to_bits(LEVEL_ANCHOR * 2, 8) == 7

    def test_quarter_adds_two_bits(self):
        assert level_to_bits(LEVEL_ANCHOR / 4, 8) == 10

    def test_clamped_to_valid_depths(self):
        assert level_to_bits(2.0**20, 8) == 1
        assert level_to_bits(2.0**-20, 8) == 12

    def test_b_base_out_of_range(self):
        with pytest.raises(ValueError):
            level_to_bits(16.0, 13)


class TestObserve:
    def test_band_prevents_oscillation(self):
        # a sequence decaying into the band leaves a constant level tail
        s = make_state(level_q=16.0, q_max=1024.0, window_w=50, rebase_t=50)
        seq = [1.0 + 2.0 * 0.5**k for k in range(30)]
        levels = []
        for e in seq:
            s, dec = observe(s, e)
            levels.append(dec.level_q)
        tail = [lv for e, lv in zip(seq, levels) if abs(e - 1.0) < 0.1]
        assert len(set(tail)) == 1

    def test_trace_determinism(self):
        seq = list(np.random.default_rng(9).uniform(0.0, 3.0, size=60))

        def run():
            s = make_state(window_w=5, rebase_t=10)
            out = []
            for e in seq:
                s, dec = observe(s, e)
                out.append((dec.level_q, dec.frozen, dec.rebased))
            return out

        assert run() == run()

    def test_auto_calibration_median(self):
        s = SensitivityState(level_q=16.0, e_thresh=None, calib_rounds=5)
        values = [3.0, 1.0, 2.0, 5.0, 4.0]
        for e in values[:4]:
            s, dec = observe(s, e)
            assert s.e_thresh is None
            assert s.level_q == 16.0  # held during calibration
        s, dec = observe(s, values[4])
        assert s.e_thresh == 3.0  # median of first five
        assert s.band_eps == pytest.approx(0.15)
        assert s.v_thresh == pytest.approx(2.25)
        # fifth value participates in the update: 4.0 > 3.0 + 0.15 -> refine
        assert s.level_q == 8.0
