import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rankdistill.errors import ConfigurationError, NumericError
from rankdistill.optim import AdamState, WarmupLinearSchedule, adam_init, adam_step
from rankdistill.tensor import parameter


class TestAdam:
    def test_zero_lr_leaves_params_bit_identical_but_advances_state(self):
        rng = np.random.default_rng(0)
        p = parameter(rng.normal(size=(3, 2)))
        before = p.data.copy()
        params = {"p": p}
        state = adam_init(params)
        p.grad = rng.normal(size=(3, 2))
        adam_step(params, state, lr=0.0)
        assert np.array_equal(p.data, before)
        assert state.step == 1
        assert np.any(state.m["p"] != 0) and np.any(state.v["p"] != 0)

    @pytest.mark.parametrize("g", [1.0, 1e-3, 40.0])
    def test_first_update_is_signed_lr_step(self, g):
        # Bias correction makes the first step ~ -lr * sign(g) for any magnitude.
        p = parameter(np.array(0.0))
        params = {"p": p}
        state = adam_init(params)
        p.grad = np.asarray(g)
        adam_step(params, state, lr=0.01)
        assert abs(float(p.data) + 0.01) < 1e-6

    def test_quadratic_descent_trajectory(self):
        # Closed-form oracle: grad of (w-3)^2 is 2(w-3), fed to Adam directly.
        p = parameter(np.array(0.0))
        params = {"p": p}
        state = adam_init(params)
        traj = [float(p.data)]
        for _ in range(10):
            p.grad = np.asarray(2.0 * (p.data - 3.0))
            adam_step(params, state, lr=0.5)
            traj.append(float(p.data))
        # w climbs strictly toward 3 every step (momentum overshoots past it
        # near the end, but never turns back within 10 steps).
        assert all(b > a for a, b in zip(traj, traj[1:]))
        assert abs(traj[-1] - 3.0) < abs(traj[0] - 3.0)
        # Frozen from the oracle run.
        assert abs(traj[-1] - 3.9534477380254409) < 1e-9

    def test_nan_gradient_aborts_with_param_name(self):
        p = parameter(np.zeros(2))
        params = {"weird_param": p}
        state = adam_init(params)
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(NumericError, match="weird_param"):
            adam_step(params, state, lr=0.1)

    def test_negative_lr_rejected(self):
        p = parameter(np.zeros(1))
        with pytest.raises(ConfigurationError):
            adam_step({"p": p}, adam_init({"p": p}), lr=-1e-3)

    @given(st.lists(st.integers(1, 5), min_size=1, max_size=3))
    @settings(max_examples=30, deadline=None)
    def test_moments_shape_congruent(self, shape):
        p = parameter(np.zeros(tuple(shape)))
        state = adam_init({"p": p})
        assert state.m["p"].shape == p.data.shape
        assert state.v["p"].shape == p.data.shape

    def test_step_counter_monotone(self):
        p = parameter(np.zeros(1))
        params = {"p": p}
        state = adam_init(params)
        p.grad = np.ones(1)
        seen = []
        for _ in range(5):
            adam_step(params, state, lr=1e-3)
            seen.append(state.step)
        assert seen == [1, 2, 3, 4, 5]


class TestWarmupLinearSchedule:
    def test_endpoints_and_peak(self):
        sched = WarmupLinearSchedule(base_lr=2.0, total_steps=1000, warmup_fraction=0.05)
        assert sched(0) == 0.0
        assert sched(1000) == 0.0
        assert sched(50) == pytest.approx(2.0)  # peak at warmup_fraction * total
        assert sched(49) < sched(50) > sched(51)

    def test_zero_warmup_starts_at_base(self):
        sched = WarmupLinearSchedule(base_lr=1.0, total_steps=100, warmup_fraction=0.0)
        assert sched(0) == pytest.approx(1.0)

    @given(st.floats(0.025, 0.10), st.integers(10, 5000))
    @settings(max_examples=60, deadline=None)
    def test_piecewise_linear_continuous_nonnegative(self, frac, total):
        sched = WarmupLinearSchedule(base_lr=1.0, total_steps=total, warmup_fraction=frac)
        assert all(sched(s) >= 0 for s in range(total + 1))
        # Linear on each side of the (possibly fractional) breakpoint, and
        # continuous across it.
        peak = frac * total
        for lo, hi in [(0.0, peak), (peak, float(total))]:
            mid = (lo + hi) / 2
            interp = (sched(lo) + sched(hi)) / 2
            assert abs(sched(mid) - interp) < 1e-12
        eps = 1e-9 * total
        assert abs(sched(peak - eps) - sched(peak + eps)) < 1e-6
        assert sched(peak) == pytest.approx(1.0)

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigurationError):
            WarmupLinearSchedule(base_lr=0.0, total_steps=10)
        with pytest.raises(ConfigurationError):
            WarmupLinearSchedule(base_lr=1.0, total_steps=0)
        with pytest.raises(ConfigurationError):
            WarmupLinearSchedule(base_lr=1.0, total_steps=10, warmup_fraction=1.0)
