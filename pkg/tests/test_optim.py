import numpy as np
import pytest

from qatlab.estimator import PositivityError
from qatlab.optim import (OptimizerState, Schedule, TrainingDiverged,
                          adam_g_plus, adam_step, lr_at, momentum_step,
                          remap_state_for_ste, sgd_step)


class TestSchedule:
    def test_constant(self):
        sched = Schedule(base_lr=0.01, total_steps=100)
        assert lr_at(0, sched) == 0.01
        assert lr_at(99, sched) == 0.01

    def test_first_post_warmup_step_is_base_lr(self):
        sched = Schedule(0.01, 1000, kind="cosine_with_warmup", warmup_fraction=0.1)
        assert lr_at(100, sched) == 0.01  # cos(0) = 1

    def test_decay_midpoint_is_half(self):
        sched = Schedule(0.01, 1000, kind="cosine_with_warmup", warmup_fraction=0.1)
        assert lr_at(100 + 450, sched) == pytest.approx(0.005, abs=1e-15)

    def test_warmup_ramp(self):
        sched = Schedule(1.0, 100, kind="cosine_with_warmup", warmup_fraction=0.1)
        np.testing.assert_allclose([lr_at(t, sched) for t in range(10)],
                                   np.arange(1, 11) / 10.0)

    def test_continuous_at_junction(self):
        sched = Schedule(0.7, 5000, kind="cosine_with_warmup", warmup_fraction=0.02)
        w = int(0.02 * 5000)
        assert abs(lr_at(w - 1, sched) - lr_at(w, sched)) <= 1e-12

    def test_positive_and_bounded(self):
        sched = Schedule(0.3, 200, kind="cosine_with_warmup", warmup_fraction=0.05)
        lrs = np.array([lr_at(t, sched) for t in range(200)])
        assert np.all(lrs > 0.0) and np.all(lrs <= 0.3)

    def test_step_out_of_range(self):
        sched = Schedule(0.01, 10)
        with pytest.raises(ValueError):
            lr_at(10, sched)

    def test_validation(self):
        with pytest.raises(ValueError):
            Schedule(base_lr=0.0, total_steps=10)
        with pytest.raises(ValueError):
            Schedule(base_lr=0.1, total_steps=10, warmup_fraction=1.0)
        with pytest.raises(ValueError):
            Schedule(base_lr=0.1, total_steps=10, kind="linear")


class TestSgd:
    def test_examples(self):
        assert sgd_step(0.0, 0.1) == 0.0
        assert sgd_step(2.0, 0.1) == pytest.approx(-0.2)
        assert sgd_step(-1.0, 0.001) == pytest.approx(0.001)

    def test_nonfinite_grad_diverges(self):
        with pytest.raises(TrainingDiverged):
            sgd_step(float("nan"), 0.1)


class TestMomentum:
    def test_first_step(self):
        state = OptimizerState.momentum((), beta=0.9)
        assert momentum_step(1.0, 1.0, state) == pytest.approx(-0.1)

    def test_zero_grad_decays_geometrically(self):
        state = OptimizerState.momentum((), beta=0.9)
        momentum_step(1.0, 1.0, state)
        deltas = [momentum_step(0.0, 1.0, state) for _ in range(5)]
        for first, second in zip(deltas, deltas[1:]):
            assert second == pytest.approx(0.9 * first)

    def test_beta_zero_is_sgd(self, rng):
        state = OptimizerState.momentum((), beta=0.0)
        for g in rng.normal(size=20):
            assert momentum_step(g, 0.05, state) == pytest.approx(sgd_step(g, 0.05))

    def test_expanded_form_matches_recurrence(self, rng):
        # m_T = (1-beta) * sum beta^(T-i) g_i
        beta = 0.9
        state = OptimizerState.momentum((), beta=beta)
        grads = rng.normal(size=50)
        for g in grads:
            momentum_step(g, 1.0, state)
        t = len(grads) - 1
        expect = (1 - beta) * sum(beta ** (t - i) * g for i, g in enumerate(grads))
        assert state.m == pytest.approx(expect, abs=1e-12)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        for g in (3.7, -0.002):
            state = OptimizerState.adam((), eps=0.0)
            assert adam_step(g, 0.01, state) == pytest.approx(-0.01 * np.sign(g))

    def test_zero_grad_zero_state(self):
        state = OptimizerState.adam((), eps=1e-8)
        assert adam_step(0.0, 0.01, state) == 0.0

    def test_zero_grad_zero_state_eps_zero(self):
        # 0/0 guard: no history and no signal means no movement
        state = OptimizerState.adam((), eps=0.0)
        assert adam_step(0.0, 0.01, state) == 0.0

    def test_step_counter(self):
        state = OptimizerState.adam(())
        adam_step(1.0, 0.01, state)
        adam_step(1.0, 0.01, state)
        assert state.step == 2

    def test_magnitude_bound_on_random_streams(self, rng):
        # 1e4 independent streams, vectorized as one state. The nominal
        # constant max(1, (1-b1)/sqrt(1-b2)) is the usual heuristic; bias
        # correction lets transients poke marginally past it (observed
        # 1.0004x on heavy-tailed streams), hence the 1% headroom.
        state = OptimizerState.adam((10_000,), beta1=0.9, beta2=0.95, eps=0.0)
        bound = adam_g_plus(state)
        lr = 0.01
        for step in range(60):
            grads = rng.standard_cauchy(10_000)  # heavy tails on purpose
            delta = adam_step(grads, lr, state)
            if step == 0:
                # first update is exactly +-lr wherever the gradient is nonzero
                assert np.max(np.abs(delta)) <= lr + 1e-15
            assert np.max(np.abs(delta)) <= lr * bound * 1.01

    def test_validation(self):
        with pytest.raises(ValueError):
            OptimizerState.adam((), beta1=1.0)
        with pytest.raises(ValueError):
            OptimizerState.adam((), eps=-1e-9)
        with pytest.raises(ValueError):
            OptimizerState(kind="rmsprop")


class TestRemap:
    def test_ste_factors_change_nothing(self):
        state = OptimizerState.momentum((3,))
        state.m = np.array([0.1, -0.2, 0.3])
        out = remap_state_for_ste(state, np.ones(3))
        np.testing.assert_array_equal(out.m, state.m)

    def test_zero_buffers_stay_zero(self):
        state = OptimizerState.adam((4,))
        out = remap_state_for_ste(state, np.full(4, 2.0))
        assert not np.any(out.m) and not np.any(out.v)

    def test_momentum_divides_by_derivative(self):
        state = OptimizerState.momentum(())
        state.m = np.asarray(0.5)
        assert remap_state_for_ste(state, 2.0).m == pytest.approx(0.25)

    def test_adam_divides_m_and_v(self):
        state = OptimizerState.adam((2,))
        state.m = np.array([0.4, 0.4])
        state.v = np.array([0.8, 0.8])
        state.step = 17
        out = remap_state_for_ste(state, np.array([2.0, 4.0]))
        np.testing.assert_allclose(out.m, [0.2, 0.1])
        np.testing.assert_allclose(out.v, [0.2, 0.05])
        assert out.step == 17

    def test_source_state_untouched(self):
        state = OptimizerState.momentum((2,))
        state.m = np.array([1.0, 1.0])
        remap_state_for_ste(state, np.array([2.0, 2.0]))
        np.testing.assert_array_equal(state.m, [1.0, 1.0])

    def test_nonpositive_derivative_rejected(self):
        state = OptimizerState.momentum((2,))
        with pytest.raises(PositivityError):
            remap_state_for_ste(state, np.array([1.0, 0.0]))


def test_momentum_vs_adam_units():
    # same gradient stream, wildly different magnitudes: momentum scales with
    # the gradient, adam does not
    gm = OptimizerState.momentum(())
    ga = OptimizerState.adam((), eps=0.0)
    d_m = momentum_step(100.0, 0.01, gm)
    d_a = adam_step(100.0, 0.01, ga)
    assert abs(d_m) == pytest.approx(0.1)
    assert abs(d_a) == pytest.approx(0.01)


def test_momentum_bound_with_bounded_gradients(rng):
    # |update| < lr * g+ whenever |grad| < g+ / (L+ * (1 - beta^(t+1)));
    # here L+ = 1 so any |grad| <= g+ stream qualifies
    g_plus = 0.5
    state = OptimizerState.momentum((), beta=0.9)
    for t in range(200):
        g = float(rng.uniform(-g_plus, g_plus)) * (1 - 0.9 ** (t + 1))
        delta = momentum_step(g, 0.01, state)
        assert abs(delta) < 0.01 * g_plus
