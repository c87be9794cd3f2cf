"""
積分条件とモンテカルロ積分のテスト
"""
import math

import numpy as np
import pytest

from dynamics.expr import parse
from dynamics.fields import ScalarField, VectorField, WeightSpec
from dynamics.integrals import (
    LevelSet,
    NecessaryVerdict,
    SamplingError,
    ball_integral,
    check_necessary,
    default_levels,
    estimate_sublevel_integral,
    sphere_flux,
)


def _ones(points, times):
    return np.ones(points.shape[0]), np.zeros(points.shape[0], dtype=bool)


DISK = ScalarField.parse("x1^2 + x2^2", 2)


class TestSublevelIntegral:
    """劣位集合上の積分のテスト"""

    def test_disk_volume(self):
        """単位円 × [0, 1] の体積が π になるテスト"""
        estimate = estimate_sublevel_integral(_ones, DISK, 1.0, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0), n=40_000, seed=1)
        assert abs(estimate.value - math.pi) < 4 * estimate.std_error
        assert estimate.std_error < 0.02
        assert estimate.n_accepted == pytest.approx(40_000 * math.pi / 4, rel=0.05)
        assert not estimate.clipped

    def test_time_length_scales_volume(self):
        """時間区間の長さに比例するテスト"""
        estimate = estimate_sublevel_integral(_ones, DISK, 1.0, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 2.0), n=40_000, seed=1)
        assert abs(estimate.value - 2 * math.pi) < 4 * estimate.std_error

    def test_superlevel_set(self):
        """S⁻¹ >= C の集合のテスト（S <= 1/C と同じ）"""
        estimate = estimate_sublevel_integral(
            _ones, DISK, 4.0, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0), n=40_000, seed=2, kind=LevelSet.SUPERLEVEL
        )
        assert abs(estimate.value - math.pi / 4) < 4 * estimate.std_error

    def test_clipping_is_reported(self):
        """箱が集合を切り取る場合のテスト"""
        estimate = estimate_sublevel_integral(_ones, DISK, 1.0, ((-0.5, 0.5), (-0.5, 0.5)), (0.0, 1.0), n=2_000)
        assert estimate.clipped
        assert estimate.value == pytest.approx(1.0)

    def test_same_seed_is_deterministic(self):
        """同じ seed で同じ推定値になるテスト"""
        args = (_ones, DISK, 0.5, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0))
        a = estimate_sublevel_integral(*args, n=5_000, seed=9)
        b = estimate_sublevel_integral(*args, n=5_000, seed=9)
        assert a.value == b.value and a.std_error == b.std_error

    def test_std_error_halves_with_four_times_samples(self):
        """サンプル数を4倍にすると標準誤差がほぼ半分になるテスト"""
        args = (_ones, DISK, 1.0, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0))
        coarse = estimate_sublevel_integral(*args, n=10_000, seed=4)
        fine = estimate_sublevel_integral(*args, n=40_000, seed=4)
        assert 1.8 < coarse.std_error / fine.std_error < 2.2

    def test_accepted_sets_grow_with_level(self):
        """同じ seed では C を大きくすると受理集合が広がるテスト"""
        args = (_ones, DISK)
        box, t_range = ((-1.5, 1.5), (-1.5, 1.5)), (0.0, 1.0)
        estimates = [estimate_sublevel_integral(*args, c, box, t_range, n=8_000, seed=6) for c in (0.25, 0.5, 1.0, 2.0)]
        accepted = [e.n_accepted for e in estimates]
        volumes = [e.value for e in estimates]
        assert accepted == sorted(accepted)
        assert volumes == sorted(volumes)
        assert accepted[0] < accepted[-1]

    def test_thin_set_raises(self):
        """受理率が低すぎる場合のテスト"""
        with pytest.raises(SamplingError):
            estimate_sublevel_integral(_ones, DISK, 1e-12, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0), n=10_000)

    def test_level_must_be_positive(self):
        """C <= 0 を拒否するテスト"""
        with pytest.raises(ValueError):
            estimate_sublevel_integral(_ones, DISK, 0.0, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0))

    def test_default_levels_increase(self):
        """既定のレベルが増加列になるテスト"""
        levels = default_levels(DISK, ((-1.0, 1.0), (-1.0, 1.0)), (0.0, 1.0))
        assert len(levels) == 4
        assert levels == sorted(levels)
        assert levels[-1] <= 2.0


class TestGaussTheorem:
    """発散定理の自己テスト"""

    def test_identity_field_flux(self):
        """h = x の球面流束が表面積に一致するテスト"""
        h = VectorField.parse(["x1", "x2", "x3"], 3)
        flux = sphere_flux(h, 1.0, n=10_000)
        assert flux.value == pytest.approx(4 * math.pi, rel=1e-12)

    @pytest.mark.parametrize(
        "components, center, radius",
        [
            (["x1^3 + x2", "x2*x1^2"], None, 1.0),
            (["x1*x2^2 - x2", "x1 + x2^3"], [0.5, -0.2], 0.8),
            (["x1^2", "x2^2"], [1.0, 1.0], 1.0),
            (["x1*x2*x3", "x2^2 - x3", "x3^3 + x1"], None, 1.0),
            (["x1^3", "x1*x2", "x2*x3^2"], [0.2, 0.0, -0.3], 1.2),
        ],
    )
    def test_flux_matches_divergence_integral(self, components, center, radius):
        """球面の流束と球の内部の発散の積分が一致するテスト"""
        h = VectorField.parse(components, len(components))
        flux = sphere_flux(h, radius, center, n=100_000, seed=3)
        volume = ball_integral(h, radius, center, n=100_000, seed=4)
        combined = math.sqrt(flux.std_error ** 2 + volume.std_error ** 2)
        assert abs(flux.value - volume.value) <= 4 * combined

    def test_sphere_flux_needs_samples(self):
        """サンプル数が少なすぎる場合のテスト"""
        with pytest.raises(ValueError):
            sphere_flux(VectorField.parse(["x1"], 1), 1.0, n=10)


class TestNecessaryConditions:
    """積分による必要条件のテスト"""

    BOX2 = ((-1.2, 1.2), (-1.2, 1.2))

    def test_unit_weight_contraction_is_consistent(self):
        """μ ≡ 1 で f = -x の積分が負になるテスト"""
        f = VectorField.parse(["-x1", "-x2"], 2)
        report = check_necessary(1, 1, f, DISK, None, [0.25, 1.0], self.BOX2, (0.0, 1.0), n=20_000)
        assert report.verdict == NecessaryVerdict.CONSISTENT
        assert report.weight == "mu=1"
        for row in report.rows:
            assert row.estimate.value < 0
            assert row.source_strength == pytest.approx(-row.estimate.value)

    def test_s_weight_case1(self):
        """S の重みで case 1 が成立するテスト"""
        f = VectorField.parse(["-x1", "-x2"], 2)
        report = check_necessary(2, 1, f, DISK, WeightSpec.s_weight(), [0.5], self.BOX2, (0.0, 1.0), n=20_000)
        assert report.consistent
        # ∇·(S f) = -4|x|² を半径² 0.5 の円板で積分すると -π/2
        row = report.rows[0]
        assert abs(row.estimate.value + math.pi / 2) < 4 * row.estimate.std_error

    def test_expanding_field_violates_case1(self):
        """f = x では case 1 が破れるテスト"""
        f = VectorField.parse(["x1", "x2"], 2)
        report = check_necessary(2, 1, f, DISK, None, [0.5], self.BOX2, (0.0, 1.0), n=20_000)
        assert report.verdict == NecessaryVerdict.VIOLATED
        assert report.rows[0].source_strength < 0

    def test_inverse_weight_case2_in_one_dimension(self):
        """1次元の f = -x で case 2 が成立するテスト（∇·(S⁻¹f) = 1/x²）"""
        f = VectorField.parse(["-x1"], 1)
        s_field = ScalarField.parse("x1^2", 1)
        report = check_necessary(2, 2, f, s_field, None, [1.0], ((-1.2, 1.2),), (0.0, 1.0), n=20_000, epsilon=0.05)
        assert report.verdict == NecessaryVerdict.CONSISTENT
        assert report.rows[0].source_strength > 0

    def test_inverse_weight_case2_in_three_dimensions(self):
        """3次元の f = -x で case 2 が破れるテスト（∇·(S⁻¹f) = -1/|x|²）"""
        f = VectorField.parse(["-x1", "-x2", "-x3"], 3)
        s_field = ScalarField.parse("x1^2 + x2^2 + x3^2", 3)
        box = ((-1.2, 1.2),) * 3
        report = check_necessary(2, 2, f, s_field, None, [1.0], box, (0.0, 1.0), n=20_000, epsilon=0.05)
        assert report.verdict == NecessaryVerdict.VIOLATED

    def test_explicit_mu_attaches_growth_diagnostics(self):
        """明示的な μ で増大度の診断が付くテスト"""
        f = VectorField.parse(["-x1", "-x2"], 2)
        weight = WeightSpec.explicit(parse("sqrt(x1^2 + x2^2)", 2))
        report = check_necessary(2, 1, f, DISK, weight, [0.5], self.BOX2, (0.0, 1.0), n=10_000)
        assert report.growth is not None
        assert report.growth.c0 == pytest.approx(1.0)
        assert report.verdict == NecessaryVerdict.CONSISTENT

    def test_unsupported_case(self):
        """case 3 の必要条件はないテスト"""
        with pytest.raises(ValueError):
            check_necessary(1, 3, VectorField.parse(["-x1"], 1), ScalarField.parse("x1^2", 1), None, [1.0], ((-1.0, 1.0),), (0.0, 1.0))
