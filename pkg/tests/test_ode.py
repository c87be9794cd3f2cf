"""
常微分方程式の積分と収束判定のテスト
"""
import math

import numpy as np
import pytest

from dynamics.fields import ScalarField, VectorField
from dynamics.ode import (
    RK4,
    RKF45,
    ConvergenceClass,
    Termination,
    classify,
    cross_validate,
    initial_grid,
    integrate,
    integrate_batch,
    sweep,
)
from dynamics.results import CheckReport, Verdict
from dynamics.sampling import Domain
from dynamics.scenarios import builtin


DECAY = VectorField.parse(["-x1"], 1)
OSCILLATOR = VectorField.parse(["x2", "-x1"], 2)
CONTRACTION = VectorField.parse(["-x1", "-x2"], 2)


class TestIntegration:
    """積分器のテスト"""

    def test_rkf45_exponential_decay(self):
        """x' = -x の解が e⁻¹ になるテスト"""
        traj = integrate(DECAY, [1.0], 0.0, 1.0, RKF45(rtol=1e-9, atol=1e-12))
        assert traj.termination == Termination.REACHED_TF
        assert traj.times[-1] == pytest.approx(1.0, abs=1e-12)
        assert abs(traj.final_state[0] - math.exp(-1.0)) < 1e-7

    def test_rkf45_tolerance_on_nonautonomous_field(self):
        """非自律な3次元の例で RKF45 の誤差が 10·rtol 以内になるテスト"""
        f = builtin("example1").vector_field()
        x0 = [0.8, -0.6, 0.5]
        reference = integrate(f, x0, 0.0, 2.0, RK4(h=1e-3)).final_state
        rtol = 1e-6
        traj = integrate(f, x0, 0.0, 2.0, RKF45(rtol=rtol, atol=1e-9))
        assert traj.termination == Termination.REACHED_TF
        error = np.abs(traj.final_state - reference)
        assert np.all(error <= 10 * rtol * np.maximum(np.abs(reference), 1.0))

    def test_rk4_exponential_decay(self):
        """固定刻み RK4 でも e⁻¹ になるテスト"""
        traj = integrate(DECAY, [1.0], 0.0, 1.0, RK4(h=0.01))
        assert abs(traj.final_state[0] - math.exp(-1.0)) < 1e-7
        assert traj.method == "rk4"
        assert traj.method_params == {"h": 0.01}

    def test_rk4_is_fourth_order(self):
        """刻みを半分にすると誤差が約 1/16 になるテスト"""
        exact = math.exp(-1.0)
        coarse = abs(integrate(DECAY, [1.0], 0.0, 1.0, RK4(h=0.1)).final_state[0] - exact)
        fine = abs(integrate(DECAY, [1.0], 0.0, 1.0, RK4(h=0.05)).final_state[0] - exact)
        assert 12.0 < coarse / fine < 20.0

    def test_oscillator_energy_drift(self):
        """調和振動子の1周期でエネルギーがほぼ保存されるテスト"""
        traj = integrate(OSCILLATOR, [1.0, 0.0], 0.0, 2 * math.pi, RK4(h=0.01))
        energy = (traj.states ** 2).sum(axis=1)
        assert np.max(np.abs(energy - 1.0)) <= 1e-6
        np.testing.assert_allclose(traj.final_state, [1.0, 0.0], atol=1e-6)

    def test_times_strictly_increase(self):
        """時刻が狭義単調増加するテスト"""
        traj = integrate(OSCILLATOR, [1.0, 0.5], 0.0, 3.0)
        assert np.all(np.diff(traj.times) > 0)
        assert np.isfinite(traj.states).all()
        assert traj.times[0] == 0.0

    def test_early_convergence(self):
        """原点に十分近づくと早期終了するテスト"""
        traj = integrate(CONTRACTION, [1.0, 1.0], 0.0, 100.0)
        assert traj.termination == Termination.CONVERGED_EARLY
        assert traj.times[-1] < 100.0

    def test_divergence_stops_integration(self):
        """x' = x の発散で打ち切るテスト"""
        traj = integrate(VectorField.parse(["x1"], 1), [1.0], 0.0, 30.0, RK4(h=0.01))
        assert traj.termination == Termination.DIVERGED
        assert np.isfinite(traj.states).all()

    def test_max_steps(self):
        """ステップ数の上限で打ち切るテスト"""
        traj = integrate(OSCILLATOR, [1.0, 0.0], 0.0, 10.0, RK4(h=0.01), max_steps=5)
        assert traj.termination == Termination.MAX_STEPS
        assert traj.times.shape[0] == 6

    def test_batch_matches_single(self):
        """一括積分と1本ずつの積分が一致するテスト"""
        starts = np.array([[1.0, 0.0], [0.3, -0.7], [2.0, 1.0]])
        batch = integrate_batch(OSCILLATOR, starts, 0.0, 2.0, RK4(h=0.05))
        for x0, traj in zip(starts, batch):
            single = integrate(OSCILLATOR, x0, 0.0, 2.0, RK4(h=0.05))
            np.testing.assert_allclose(traj.states, single.states, rtol=1e-14, atol=1e-14)

    def test_invalid_arguments(self):
        """不正な引数のテスト"""
        with pytest.raises(ValueError):
            integrate(DECAY, [1.0], 1.0, 0.0)
        with pytest.raises(ValueError):
            integrate(DECAY, [1.0, 2.0], 0.0, 1.0)
        with pytest.raises(ValueError):
            integrate(DECAY, [1.0], 0.0, 1.0, RK4(h=0.0))


class TestClassification:
    """収束の分類のテスト"""

    def test_converged(self):
        """収束の分類テスト"""
        verdict = classify(integrate(CONTRACTION, [1.0, -1.0], 0.0, 50.0))
        assert verdict.cls == ConvergenceClass.CONVERGED
        assert verdict.target == (0.0, 0.0)

    def test_bounded_nonconvergent(self):
        """有界だが収束しない分類テスト"""
        verdict = classify(integrate(OSCILLATOR, [1.0, 0.0], 0.0, 20.0))
        assert verdict.cls == ConvergenceClass.BOUNDED_NONCONVERGENT
        assert verdict.final_norm == pytest.approx(1.0, rel=1e-3)

    def test_diverged(self):
        """発散の分類テスト"""
        verdict = classify(integrate(VectorField.parse(["x1"], 1), [1.0], 0.0, 30.0, RK4(h=0.01)))
        assert verdict.cls == ConvergenceClass.DIVERGED

    def test_nonzero_target(self):
        """原点以外の目標点への収束テスト"""
        f = VectorField.parse(["1 - x1"], 1)
        verdict = classify(integrate(f, [0.0], 0.0, 30.0), target=[1.0])
        assert verdict.cls == ConvergenceClass.CONVERGED


class TestSweep:
    """初期値の掃引のテスト"""

    def test_initial_grid(self):
        """初期値格子のテスト"""
        grid = initial_grid(((-1.0, 1.0), (0.0, 2.0)), 3)
        assert grid.shape == (9, 2)
        assert grid[0].tolist() == [-1.0, 0.0]
        assert grid[-1].tolist() == [1.0, 2.0]
        assert initial_grid(((-1.0, 1.0),), 0).shape == (0, 1)
        assert initial_grid(((-1.0, 3.0),), 1).tolist() == [[1.0]]

    def test_results_follow_input_order(self):
        """結果が入力順であるテスト"""
        starts = initial_grid(((-1.0, 1.0), (-1.0, 1.0)), 4)
        results = sweep(CONTRACTION, starts, 20.0)
        assert [r.x0 for r in results] == [tuple(x) for x in starts.tolist()]
        assert all(r.verdict.cls == ConvergenceClass.CONVERGED for r in results)

    def test_empty_sweep(self):
        """初期値がない場合のテスト"""
        assert sweep(CONTRACTION, np.empty((0, 2)), 1.0) == []


class TestCrossValidation:
    """十分条件とシミュレーションの突き合わせのテスト"""

    S_FIELD = ScalarField.parse("x1^2 + x2^2", 2)
    DOMAIN = Domain.cube(2, 1.0, t_range=(0.0, 1.0))

    def _report(self, verdict):
        return CheckReport(condition="th3-case1", verdict=verdict)

    def test_agrees_for_contraction(self):
        """収束する系で一致するテスト"""
        results = sweep(CONTRACTION, initial_grid(self.DOMAIN.box, 5), 20.0)
        check = cross_validate(self._report(Verdict.HOLDS_STRICT), results, self.S_FIELD, self.DOMAIN)
        assert check.applicable
        assert check.agrees
        assert check.level == pytest.approx(1.0, abs=1e-2)
        assert check.n_checked >= 9

    def test_detects_nonconvergence(self):
        """収束しない軌道を検出するテスト"""
        results = sweep(OSCILLATOR, initial_grid(self.DOMAIN.box, 5), 20.0)
        check = cross_validate(self._report(Verdict.HOLDS_STRICT), results, self.S_FIELD, self.DOMAIN, level=0.6)
        assert not check.agrees
        assert (0.5, 0.5) in check.failures
        assert (1.0, 1.0) not in check.failures

    def test_not_applicable_without_strict_verdict(self):
        """厳密な成立でなければ対象外になるテスト"""
        check = cross_validate(self._report(Verdict.VIOLATED), [], self.S_FIELD, self.DOMAIN)
        assert not check.applicable
        assert check.agrees
