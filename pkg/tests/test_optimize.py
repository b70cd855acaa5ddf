import numpy as np
import pytest

from dstft.objectives import EvalResult, entropy_objective
from dstft.optimize import (
    DivergenceError,
    OptimConfig,
    as_constant,
    evaluate,
    fit,
    grid,
    local_minima,
    sweep_theta,
)
from dstft.transform import LengthField, PositionField, Signal, make_plan


def quadratic(target):
    """l = (theta - target)^2 on the mean length, through the direct-gradient path."""
    def objective(tf, plan, j=0):
        th = plan.frame_lengths()
        r = th - target
        return EvalResult(float(np.sum(r**2)), d_frame_lengths=2 * r)
    return objective


def small_plan(theta=20.0, n=4):
    return make_plan(64, theta, PositionField.uniform_hop(32.0, 16.0), n)


SIG = Signal(np.random.default_rng(0).standard_normal(160))


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(algorithm="sgd"), dict(lr_theta=0), dict(lr_decay=1.5),
                                    dict(max_iters=0), dict(theta_bounds=(1.0, None)),
                                    dict(theta_bounds=(10.0, 5.0)), dict(position_bounds=(1, 0))])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            OptimConfig(**kw)


class TestFit:
    def test_gd_quadratic_converges(self):
        res = fit(small_plan(), SIG, quadratic(37.0),
                  OptimConfig(algorithm="gd", lr_theta=0.1, max_iters=200, rel_tol=1e-14))
        assert float(res.final_plan.lengths.values) == pytest.approx(37.0, abs=1e-6)
        assert res.iterations_used == len(res.loss_trace) == len(res.grad_norm_trace)

    def test_adam_first_step_is_lr(self):
        # Adam's bias-corrected first step has magnitude lr regardless of gradient scale
        res = fit(small_plan(), SIG, quadratic(50.0), OptimConfig(lr_theta=0.5, max_iters=2))
        assert res.loss_trace[1] == pytest.approx(4 * (50 - 20.5) ** 2)

    def test_bounds_projection(self):
        res = fit(small_plan(), SIG, quadratic(1000.0), OptimConfig(algorithm="gd", lr_theta=1.0, max_iters=5))
        assert float(res.final_plan.lengths.values) == 64.0
        res = fit(small_plan(), SIG, quadratic(0.0),
                  OptimConfig(algorithm="gd", lr_theta=1.0, max_iters=5, theta_bounds=(8.0, 30.0)))
        assert float(res.final_plan.lengths.values) == 8.0

    def test_converged_flag_and_best(self):
        res = fit(small_plan(), SIG, quadratic(20.0), OptimConfig(max_iters=50, rel_tol=1e-6))
        assert res.converged and res.best_loss == 0.0

    def test_positions_frozen_by_default(self):
        res = fit(small_plan(), SIG, entropy_objective(), OptimConfig(max_iters=3))
        assert res.final_plan.positions.params == small_plan().positions.params

    def test_train_positions(self):
        cfg = OptimConfig(max_iters=3, train_lengths=False, train_positions=True, lr_t=0.5)
        res = fit(small_plan(), SIG, entropy_objective(), cfg)
        assert float(res.final_plan.lengths.values) == 20.0
        assert res.final_plan.positions.params["hop"] != 16.0

    def test_callback_and_counts(self):
        seen = []
        res = fit(small_plan(), [SIG, SIG], entropy_objective(), OptimConfig(max_iters=4, rel_tol=0),
                  callback=lambda it, plan, extra, v: seen.append((it, v)))
        assert [s[0] for s in seen] == [0, 1, 2, 3]
        np.testing.assert_array_equal([s[1] for s in seen], res.loss_trace)
        assert res.n_forward == res.n_backward == 8

    def test_divergence(self):
        def bad(tf, plan, j=0):
            return EvalResult(1.0, d_frame_lengths=np.full(plan.n_frames, np.inf))
        with pytest.raises(DivergenceError):
            fit(small_plan(), SIG, bad)

    def test_extra_arrays(self):
        def obj(tf, plan, j, extra):
            w = extra["w"]
            return EvalResult(float(np.sum((w - 3) ** 2)), d_extra={"w": 2 * (w - 3)})
        res = fit(small_plan(), SIG, obj, OptimConfig(algorithm="gd", lr_extra=0.25, max_iters=40,
                                                      train_lengths=False), extra={"w": np.zeros(3)})
        np.testing.assert_allclose(res.extra["final"]["w"], 3.0, atol=1e-9)

    def test_deterministic(self):
        cfg = OptimConfig(max_iters=5, rel_tol=0)
        a = fit(small_plan(), SIG, entropy_objective(), cfg)
        b = fit(small_plan(), SIG, entropy_objective(), cfg)
        np.testing.assert_array_equal(a.loss_trace, b.loss_trace)

    def test_evaluate_mean(self):
        v1, g1, _ = evaluate(small_plan(), [SIG], entropy_objective())
        v2, g2, _ = evaluate(small_plan(), [SIG, SIG], entropy_objective())
        assert v1 == pytest.approx(v2)
        np.testing.assert_allclose(g1.d_lengths, g2.d_lengths)


class TestSweep:
    def test_grid(self):
        np.testing.assert_allclose(grid(20, 30, 2.5), [20, 22.5, 25, 27.5, 30])
        with pytest.raises(ValueError):
            grid(5, 1, 1)

    def test_sweep_matches_quadratic(self):
        out = sweep_theta(small_plan(), SIG, quadratic(30.0), (20, 40), 5)
        np.testing.assert_allclose(out[:, 0], [20, 25, 30, 35, 40])
        np.testing.assert_allclose(out[:, 1], 4 * (out[:, 0] - 30) ** 2)
        with pytest.raises(ValueError):
            sweep_theta(small_plan(), SIG, quadratic(30.0), (1, 40), 5)

    def test_local_minima(self):
        np.testing.assert_array_equal(local_minima([3, 1, 2, 0, 5, 5, 4]), [1, 3])

    def test_as_constant(self):
        p = make_plan(64, LengthField.time_varying(np.full(4, 10.0)), PositionField.uniform_hop(0, 8), 4)
        assert as_constant(p, 12.0).lengths.values == 12.0
        fo = make_plan(64, LengthField.time_varying(np.full(4, 10.0)), PositionField.fixed_overlap(0.5, 0.0), 4)
        with pytest.raises(ValueError):
            as_constant(fo, 12.0)
