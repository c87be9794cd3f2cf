"""
数式の構文解析・評価のテスト
"""
import math

import numpy as np
import pytest

from dynamics.expr import (
    Binary,
    Constant,
    EvaluationDomainError,
    ExpressionSyntaxError,
    ParseErrorKind,
    Unary,
    VarT,
    VarX,
    depends_on_time,
    evaluate,
    evaluate_batch,
    max_state_index,
    parse,
    to_text,
    tree_depth,
)


_FUNCTIONS = ("neg", "sin", "cos", "exp", "sqrt", "abs", "tanh")


def random_tree(rng: np.random.Generator, n: int, depth: int):
    """深さ depth 以下のランダムな構文木（定数は非負、指数は定数）"""
    if depth <= 1 or rng.random() < 0.25:
        choice = rng.integers(3)
        if choice == 0:
            return Constant(float(np.round(rng.uniform(0, 10), 3)))
        if choice == 1:
            return VarT()
        return VarX(int(rng.integers(1, n + 1)))
    kind = rng.integers(6)
    if kind < 4:
        op = ("add", "sub", "mul", "div")[kind]
        return Binary(op, random_tree(rng, n, depth - 1), random_tree(rng, n, depth - 1))
    if kind == 4:
        exponent = float(rng.choice([-2.0, -1.0, 0.5, 2.0, 3.0]))
        return Binary("pow", random_tree(rng, n, depth - 1), Constant(exponent))
    return Unary(_FUNCTIONS[rng.integers(len(_FUNCTIONS))], random_tree(rng, n, depth - 1))


class TestParsing:
    """構文解析のテスト"""

    def test_precedence_of_mul_over_add(self):
        """乗算が加算より先に結合するテスト"""
        assert evaluate(parse("1 + 2*3", 0), [], 0.0) == 7.0

    def test_power_is_right_associative(self):
        """べき乗の右結合テスト"""
        assert evaluate(parse("2^3^2", 0), [], 0.0) == 512.0

    def test_unary_minus_binds_looser_than_power(self):
        """単項マイナスはべき乗より弱いテスト"""
        assert evaluate(parse("-2^2", 0), [], 0.0) == -4.0

    def test_double_star_is_power(self):
        """** を ^ として扱うテスト"""
        assert parse("x1**2", 1) == parse("x1^2", 1)

    def test_structure_of_simple_expression(self):
        """構文木の形のテスト"""
        expr = parse("x1*t + sin(x2)", 2)
        assert expr == Binary("add", Binary("mul", VarX(1), VarT()), Unary("sin", VarX(2)))

    def test_constant_exponent_is_folded(self):
        """定数の指数を畳み込むテスト"""
        expr = parse("x1^(1/2)", 1)
        assert isinstance(expr, Binary)
        assert expr.right == Constant(0.5)

    def test_negative_exponent(self):
        """負の指数のテスト"""
        assert evaluate(parse("x1^-1", 1), [4.0], 0.0) == pytest.approx(0.25)

    def test_to_text_reparses_to_same_tree(self):
        """表示した文字列を再解析すると同じ木になるテスト"""
        for text in ["-x1^2 + 3*x2/(t + 1)", "(x1^2 + 0.5*x2^2)^2.5", "exp(-t)*tanh(x1) - abs(x2)"]:
            expr = parse(text, 2)
            assert parse(to_text(expr), 2) == expr

    @pytest.mark.parametrize("seed", range(100))
    def test_random_tree_survives_to_text(self, seed):
        """ランダムな木を文字列にして再解析すると元の木に戻るテスト"""
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 4))
        tree = random_tree(rng, n, int(rng.integers(1, 7)))
        assert parse(to_text(tree), n) == tree

    def test_max_state_index_and_time_dependence(self):
        """変数の添字と時間依存の判定テスト"""
        expr = parse("x3 + t", 3)
        assert max_state_index(expr) == 3
        assert depends_on_time(expr)
        assert not depends_on_time(parse("x1", 1))


class TestParseDiagnostics:
    """構文エラーの診断情報のテスト"""

    @pytest.mark.parametrize(
        "text, kind, offset",
        [
            ("x1 +", ParseErrorKind.UNEXPECTED_TOKEN, 4),
            ("foo(x1)", ParseErrorKind.UNKNOWN_IDENTIFIER, 0),
            ("sin(x1, x2)", ParseErrorKind.ARITY_MISMATCH, 0),
            ("x1 + x4", ParseErrorKind.DIMENSION_OVERFLOW, 5),
            ("x1^x2", ParseErrorKind.NON_CONSTANT_EXPONENT, 3),
            ("x0", ParseErrorKind.UNKNOWN_IDENTIFIER, 0),
            ("", ParseErrorKind.UNEXPECTED_TOKEN, 0),
            ("(x1", ParseErrorKind.UNEXPECTED_TOKEN, 3),
        ],
    )
    def test_error_kind_and_offset(self, text, kind, offset):
        """エラーの種類と位置のテスト"""
        with pytest.raises(ExpressionSyntaxError) as info:
            parse(text, 3)
        assert info.value.diagnostics.kind == kind
        assert info.value.diagnostics.offset == offset

    def test_offset_counts_bytes(self):
        """位置がバイト単位であるテスト"""
        # 全角スペースは UTF-8 で3バイト
        with pytest.raises(ExpressionSyntaxError) as info:
            parse("　x1 +", 1)
        assert info.value.diagnostics.offset == 7

    def test_deep_nesting_is_diagnosed(self):
        """深い入れ子が再帰エラーでなく診断になるテスト"""
        with pytest.raises(ExpressionSyntaxError):
            parse("(" * 500 + "x1" + ")" * 500, 1)

    def test_long_flat_sum_is_diagnosed(self):
        """括弧のない長い和でも再帰エラーでなく深さの診断になるテスト"""
        with pytest.raises(ExpressionSyntaxError) as info:
            parse(" + ".join(["x1"] * 3000), 1)
        assert info.value.diagnostics.kind == ParseErrorKind.TOO_DEEP

    def test_sum_below_depth_limit(self):
        """上限以下の長い和は解析と評価ができるテスト"""
        expr = parse(" + ".join(["x1"] * 300) + " + x2", 2)
        assert tree_depth(expr) == 301
        assert max_state_index(expr) == 2
        assert not depends_on_time(expr)
        assert evaluate(expr, [1.0, 0.5], 0.0) == pytest.approx(300.5)


class TestEvaluation:
    """評価のテスト"""

    def test_scalar_evaluation(self):
        """1点での評価テスト"""
        value = evaluate(parse("x1^2 + sin(t)", 1), [3.0], math.pi / 2)
        assert value == pytest.approx(10.0)

    @pytest.mark.parametrize("text, x", [("1/x1", 0.0), ("sqrt(x1)", -1.0), ("x1^0.5", -4.0), ("x1^-2", 0.0)])
    def test_domain_errors_raise(self, text, x):
        """定義域エラーのテスト"""
        with pytest.raises(EvaluationDomainError):
            evaluate(parse(text, 1), [x], 0.0)

    def test_domain_error_carries_offset(self):
        """定義域エラーがノード位置を持つテスト"""
        with pytest.raises(EvaluationDomainError) as info:
            evaluate(parse("x1 + 1/x2", 2), [1.0, 0.0], 0.0)
        assert info.value.offset == 6

    def test_batch_marks_invalid_points(self):
        """一括評価で無効点に NaN とマスクが付くテスト"""
        points = np.array([[1.0], [0.0], [2.0]])
        values, bad = evaluate_batch(parse("1/x1", 1), points, np.zeros(3))
        assert bad.tolist() == [False, True, False]
        assert np.isnan(values[1])
        assert values[2] == pytest.approx(0.5)

    def test_batch_matches_scalar(self):
        """一括評価と1点評価が一致するテスト"""
        expr = parse("x1*x2 - cos(t)*x1^3", 2)
        rng = np.random.default_rng(1)
        points = rng.uniform(-1, 1, size=(20, 2))
        times = rng.uniform(0, 5, size=20)
        values, bad = evaluate_batch(expr, points, times)
        assert not bad.any()
        for p, t, v in zip(points, times, values):
            assert v == pytest.approx(evaluate(expr, p, t), rel=1e-12, abs=1e-14)

    def test_constant_expression_broadcasts(self):
        """定数式の一括評価テスト"""
        values, bad = evaluate_batch(parse("2", 1), np.zeros((4, 1)), np.zeros(4))
        assert values.tolist() == [2.0] * 4
        assert not bad.any()
