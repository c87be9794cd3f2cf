"""
前進モード自動微分のテスト
"""
import math

import numpy as np
import pytest

from dynamics.autodiff import Dual, HyperDual, as_dual, eval_dual, eval_hyperdual, seeded_duals
from dynamics.expr import EvalContext, EvaluationDomainError, evaluate, evaluate_carrier, parse


def random_expression(rng: np.random.Generator, n: int, depth: int) -> str:
    """有界な値をとる滑らかな式をランダムに作る"""
    if depth == 0 or rng.random() < 0.2:
        choice = rng.integers(3)
        if choice == 0:
            return f"{rng.uniform(-1, 1):.3f}"
        if choice == 1:
            return "t"
        return f"x{rng.integers(1, n + 1)}"
    kind = rng.integers(6)
    if kind < 3:
        op = ["+", "-", "*"][kind]
        return f"({random_expression(rng, n, depth - 1)} {op} {random_expression(rng, n, depth - 1)})"
    if kind == 3:
        return f"({random_expression(rng, n, depth - 1)})^2"
    func = ["sin", "cos", "tanh"][rng.integers(3)]
    return f"{func}({random_expression(rng, n, depth - 1)})"


def _random_cases(count: int):
    rng = np.random.default_rng(2024)
    cases = []
    for _ in range(count):
        n = int(rng.integers(1, 5))
        text = random_expression(rng, n, int(rng.integers(1, 7)))
        x = rng.uniform(-1, 1, size=n)
        t = float(rng.uniform(0, 1))
        axis = int(rng.integers(n))
        cases.append((text, n, x, t, axis))
    return cases


class TestDualNumbers:
    """二重数の演算テスト"""

    def test_product_rule(self):
        """積の微分のテスト"""
        x = Dual(2.0, 1.0)
        result = x * x * x
        assert result.value == 8.0
        assert result.deriv == 12.0

    def test_quotient_rule(self):
        """商の微分のテスト"""
        x = Dual(2.0, 1.0)
        result = 1.0 / x
        assert result.value == 0.5
        assert result.deriv == pytest.approx(-0.25)

    def test_hyperdual_mixed_derivative(self):
        """超二重数の混合2階微分のテスト"""
        x = HyperDual(3.0, 1.0, 1.0, 0.0)
        result = x * x * x
        assert result.d1 == pytest.approx(27.0)
        assert result.d12 == pytest.approx(18.0)

    def test_hyperdual_division(self):
        """超二重数の除算のテスト"""
        x = HyperDual(2.0, 1.0, 1.0, 0.0)
        result = 1.0 / x
        assert result.d1 == pytest.approx(-0.25)
        assert result.d12 == pytest.approx(0.25)

    def test_constant_promotion(self):
        """定数の Dual 化テスト"""
        assert as_dual(3.0).deriv == 0.0


class TestExpressionDerivatives:
    """式の微分のテスト"""

    def test_partial_derivative(self):
        """偏微分のテスト"""
        expr = parse("x1^3 + x1*x2", 2)
        value, deriv, _ = eval_dual(expr, [2.0, 5.0], 0.0, dx=[1.0, 0.0])
        assert value == pytest.approx(18.0)
        assert deriv == pytest.approx(17.0)

    def test_time_derivative(self):
        """時間微分のテスト"""
        expr = parse("sin(t)*x1", 1)
        _, deriv, _ = eval_dual(expr, [2.0], 0.5, dt=1.0)
        assert deriv == pytest.approx(2.0 * math.cos(0.5))

    def test_second_mixed_partial(self):
        """混合2階偏微分のテスト"""
        expr = parse("x1^2*x2^3", 2)
        _, d1, d2, d12, _ = eval_hyperdual(expr, [1.0, 2.0], 0.0, first=([1.0, 0.0], 0.0), second=([0.0, 1.0], 0.0))
        assert d1 == pytest.approx(16.0)
        assert d2 == pytest.approx(12.0)
        assert d12 == pytest.approx(24.0)

    def test_sqrt_at_zero_is_not_differentiable(self):
        """0 での平方根の微分がエラーになるテスト"""
        expr = parse("sqrt(x1)", 1)
        assert evaluate(expr, [0.0], 0.0) == 0.0
        with pytest.raises(EvaluationDomainError):
            eval_dual(expr, [0.0], 0.0, dx=[1.0])

    def test_fractional_power_at_zero_is_not_differentiable(self):
        """0 での分数べきの微分がエラーになるテスト"""
        with pytest.raises(EvaluationDomainError):
            eval_dual(parse("x1^0.5", 1), [0.0], 0.0, dx=[1.0])

    def test_abs_kink_is_flagged_not_raised(self):
        """abs の折れ点はフラグのみのテスト"""
        expr = parse("abs(x1)", 1)
        at_kink = eval_dual(expr, [0.0], 0.0, dx=[1.0])
        assert at_kink.deriv == 0.0
        assert at_kink.kink is True
        assert eval_dual(expr, [0.5], 0.0, dx=[1.0]).kink is False
        assert eval_hyperdual(expr, [0.0], 0.0, first=([1.0], 0.0), second=([1.0], 0.0)).kink is True

        ctx = EvalContext((3,))
        xs, t = seeded_duals(np.array([[-1.0], [0.0], [1.0]]), np.zeros(3), axis=0)
        result = evaluate_carrier(expr, xs, t, ctx)
        assert ctx.kink.tolist() == [False, True, False]
        assert result.deriv.tolist() == [-1.0, 0.0, 1.0]

    def test_batch_derivative_matches_scalar(self):
        """一括微分と1点微分が一致するテスト"""
        expr = parse("x1*exp(-t) + x2^3*cos(x1)", 2)
        rng = np.random.default_rng(3)
        points = rng.uniform(-1, 1, size=(10, 2))
        times = rng.uniform(0, 2, size=10)
        ctx = EvalContext((10,))
        xs, t = seeded_duals(points, times, axis=1)
        batch = evaluate_carrier(expr, xs, t, ctx)
        for k in range(10):
            _, deriv, _ = eval_dual(expr, points[k], times[k], dx=[0.0, 1.0])
            assert batch.deriv[k] == pytest.approx(deriv, rel=1e-12, abs=1e-15)


class TestFiniteDifferenceAgreement:
    """ランダムな式で差分近似と一致するテスト"""

    H = 1e-5

    @pytest.mark.parametrize("text, n, x, t, axis", _random_cases(200))
    def test_first_derivative(self, text, n, x, t, axis):
        """1階微分と中心差分の一致テスト"""
        expr = parse(text, n)
        direction = np.eye(n)[axis]
        value, deriv, _ = eval_dual(expr, x, t, dx=direction)
        forward = evaluate(expr, x + self.H * direction, t)
        backward = evaluate(expr, x - self.H * direction, t)
        fd = (forward - backward) / (2 * self.H)
        assert abs(deriv - fd) <= 1e-6 * (1.0 + abs(fd) + abs(value))

    @pytest.mark.parametrize("text, n, x, t, axis", _random_cases(50))
    def test_second_derivative(self, text, n, x, t, axis):
        """2階微分と1階微分の中心差分の一致テスト"""
        expr = parse(text, n)
        direction = np.eye(n)[axis]
        value, _, _, d12, _ = eval_hyperdual(expr, x, t, first=(direction, 0.0), second=(direction, 0.0))
        forward = eval_dual(expr, x + self.H * direction, t, dx=direction).deriv
        backward = eval_dual(expr, x - self.H * direction, t, dx=direction).deriv
        fd = (forward - backward) / (2 * self.H)
        assert abs(d12 - fd) <= 1e-4 * (1.0 + abs(fd) + abs(value))

    @pytest.mark.parametrize("text, n, x, t, axis", _random_cases(50))
    def test_directional_derivative_is_linear(self, text, n, x, t, axis):
        """方向微分が方向について線形になるテスト"""
        expr = parse(text, n)
        rng = np.random.default_rng(axis + 17)
        d1, d2 = rng.normal(size=n), rng.normal(size=n)
        a, b = 1.5, -0.75
        combined = eval_dual(expr, x, t, dx=a * d1 + b * d2).deriv
        separate = a * eval_dual(expr, x, t, dx=d1).deriv + b * eval_dual(expr, x, t, dx=d2).deriv
        assert combined == pytest.approx(separate, rel=1e-9, abs=1e-12)

    @pytest.mark.parametrize("text, n, x, t, axis", _random_cases(50))
    def test_mixed_derivative_is_symmetric(self, text, n, x, t, axis):
        """2つの方向を入れ替えても混合2階微分が変わらないテスト"""
        expr = parse(text, n)
        u = np.eye(n)[axis]
        v = np.ones(n)
        forward = eval_hyperdual(expr, x, t, first=(u, 0.0), second=(v, 1.0))
        swapped = eval_hyperdual(expr, x, t, first=(v, 1.0), second=(u, 0.0))
        assert forward.d12 == pytest.approx(swapped.d12, rel=1e-9, abs=1e-12)
        assert forward.d1 == pytest.approx(swapped.d2, rel=1e-12, abs=1e-15)

    @pytest.mark.parametrize("text, n, x, t, axis", _random_cases(50))
    def test_hyperdual_with_zero_second_direction(self, text, n, x, t, axis):
        """2番目の方向が 0 なら二重数の微分と同じで混合微分が 0 になるテスト"""
        expr = parse(text, n)
        direction = np.eye(n)[axis]
        dual = eval_dual(expr, x, t, dx=direction)
        hyper = eval_hyperdual(expr, x, t, first=(direction, 0.0), second=(np.zeros(n), 0.0))
        assert hyper.value == pytest.approx(dual.value, rel=1e-14, abs=1e-15)
        assert hyper.d1 == pytest.approx(dual.deriv, rel=1e-12, abs=1e-15)
        assert hyper.d2 == 0.0
        assert hyper.d12 == 0.0
