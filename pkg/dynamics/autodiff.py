"""
前進モード自動微分モジュール

Dual: 1方向の1階微分
HyperDual: 2方向の1階微分と混合2階微分

成分は float でも numpy 配列でもよく、配列なら多数のサンプル点を同時に微分する
"""
from __future__ import annotations

from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from dynamics.expr import (
    Carrier,
    EvalContext,
    EvaluationDomainError,
    Expr,
    evaluate_carrier,
)


class DualValue(NamedTuple):
    """1点での値と方向微分（kink は abs の折れ点を通ったか）"""
    value: float
    deriv: float
    kink: bool = False


class HyperDualValue(NamedTuple):
    """1点での値・2方向の1階微分・混合2階微分"""
    value: float
    d1: float
    d2: float
    d12: float
    kink: bool = False


def _lift(other, template: "Dual"):
    if isinstance(other, Carrier):
        return other
    return type(template).constant(other)


class Dual(Carrier):
    """二重数 value + deriv·ε（ε² = 0）"""
    __slots__ = ("value", "deriv")
    second_order = False

    def __init__(self, value, deriv=0.0):
        self.value = value
        self.deriv = deriv

    @classmethod
    def constant(cls, value) -> "Dual":
        return cls(value, 0.0)

    def __repr__(self):
        return f"Dual({self.value!r}, {self.deriv!r})"

    def chain(self, f0, f1, f2) -> "Dual":
        return Dual(f0(self.value), f1(self.value) * self.deriv)

    def __neg__(self):
        return Dual(-self.value, -self.deriv)

    def __add__(self, other):
        other = _lift(other, self)
        return Dual(self.value + other.value, self.deriv + other.deriv)

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self)
        return Dual(self.value - other.value, self.deriv - other.deriv)

    def __rsub__(self, other):
        return _lift(other, self) - self

    def __mul__(self, other):
        other = _lift(other, self)
        return Dual(self.value * other.value, self.deriv * other.value + self.value * other.deriv)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = _lift(other, self)
        denom = other.value
        return Dual(
            self.value / denom,
            (self.deriv * denom - self.value * other.deriv) / (denom * denom),
        )

    def __rtruediv__(self, other):
        return _lift(other, self) / self


class HyperDual(Carrier):
    """
    超二重数 value + d1·ε1 + d2·ε2 + d12·ε1ε2（ε1² = ε2² = 0）

    d12 が方向1と方向2の混合2階微分になる
    """
    __slots__ = ("value", "d1", "d2", "d12")
    second_order = True

    def __init__(self, value, d1=0.0, d2=0.0, d12=0.0):
        self.value = value
        self.d1 = d1
        self.d2 = d2
        self.d12 = d12

    @classmethod
    def constant(cls, value) -> "HyperDual":
        return cls(value, 0.0, 0.0, 0.0)

    def __repr__(self):
        return f"HyperDual({self.value!r}, {self.d1!r}, {self.d2!r}, {self.d12!r})"

    def chain(self, f0, f1, f2) -> "HyperDual":
        a = self.value
        g1 = f1(a)
        return HyperDual(
            f0(a),
            g1 * self.d1,
            g1 * self.d2,
            g1 * self.d12 + f2(a) * self.d1 * self.d2,
        )

    def __neg__(self):
        return HyperDual(-self.value, -self.d1, -self.d2, -self.d12)

    def __add__(self, other):
        other = _lift(other, self)
        return HyperDual(
            self.value + other.value,
            self.d1 + other.d1,
            self.d2 + other.d2,
            self.d12 + other.d12,
        )

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other, self)
        return HyperDual(
            self.value - other.value,
            self.d1 - other.d1,
            self.d2 - other.d2,
            self.d12 - other.d12,
        )

    def __rsub__(self, other):
        return _lift(other, self) - self

    def __mul__(self, other):
        other = _lift(other, self)
        return HyperDual(
            self.value * other.value,
            self.d1 * other.value + self.value * other.d1,
            self.d2 * other.value + self.value * other.d2,
            self.d12 * other.value
            + self.d1 * other.d2
            + self.d2 * other.d1
            + self.value * other.d12,
        )

    __rmul__ = __mul__

    def reciprocal(self) -> "HyperDual":
        return self.chain(
            lambda u: 1.0 / u,
            lambda u: -1.0 / (u * u),
            lambda u: 2.0 / (u * u * u),
        )

    def __truediv__(self, other):
        other = _lift(other, self)
        return self * other.reciprocal()

    def __rtruediv__(self, other):
        return _lift(other, self) / self


# ---------------------------------------------------------------------------
# 式の微分
# ---------------------------------------------------------------------------

def _check(ctx: EvalContext):
    if ctx.invalid.any():
        message, offset = ctx.first_error
        raise EvaluationDomainError(message, offset)


def _direction(dx: Optional[Sequence[float]], n: int) -> np.ndarray:
    if dx is None:
        return np.zeros(n)
    dx = np.asarray(dx, dtype=float)
    if dx.shape != (n,):
        raise ValueError(f"direction has shape {dx.shape}, expected ({n},)")
    return dx


def eval_dual(
    expr: Expr,
    x: Sequence[float],
    t: float,
    dx: Optional[Sequence[float]] = None,
    dt: float = 0.0,
) -> DualValue:
    """
    方向 (dx, dt) への方向微分を1点で計算する

    Returns:
        DualValue（abs の折れ点では微分を 0 とし kink を立てる）

    Raises:
        EvaluationDomainError: 微分を含めて定義域外の場合
    """
    x = np.asarray(x, dtype=float)
    dx = _direction(dx, x.shape[0])
    ctx = EvalContext()
    xs = [Dual(np.float64(v), np.float64(d)) for v, d in zip(x, dx)]
    result = evaluate_carrier(expr, xs, Dual(np.float64(t), np.float64(dt)), ctx)
    _check(ctx)
    result = _lift(result, Dual.constant(0.0))
    return DualValue(float(result.value), float(result.deriv), bool(ctx.kink.any()))


def eval_hyperdual(
    expr: Expr,
    x: Sequence[float],
    t: float,
    first: Tuple[Optional[Sequence[float]], float] = (None, 0.0),
    second: Tuple[Optional[Sequence[float]], float] = (None, 0.0),
) -> HyperDualValue:
    """
    2方向の1階微分と混合2階微分を1点で計算する

    Args:
        first: 方向1 (dx, dt)
        second: 方向2 (dx, dt)

    Returns:
        HyperDualValue（値, 方向1の微分, 方向2の微分, 混合2階微分, kink）
    """
    x = np.asarray(x, dtype=float)
    dx1 = _direction(first[0], x.shape[0])
    dx2 = _direction(second[0], x.shape[0])
    ctx = EvalContext()
    xs = [HyperDual(np.float64(v), np.float64(a), np.float64(b), 0.0) for v, a, b in zip(x, dx1, dx2)]
    tt = HyperDual(np.float64(t), np.float64(first[1]), np.float64(second[1]), 0.0)
    result = evaluate_carrier(expr, xs, tt, ctx)
    _check(ctx)
    result = _lift(result, HyperDual.constant(0.0))
    return HyperDualValue(
        float(result.value), float(result.d1), float(result.d2), float(result.d12), bool(ctx.kink.any())
    )


def seeded_duals(points: np.ndarray, times: np.ndarray, axis: Optional[int]):
    """
    一括評価用の Dual 変数を作る

    Args:
        points: 形状 (m, n)
        times: 形状 (m,)
        axis: 微分する状態変数の添字（0始まり）、None なら t で微分

    Returns:
        (状態変数の Dual リスト, 時間の Dual)
    """
    n = points.shape[1]
    xs = [Dual(points[:, j], 1.0 if axis == j else 0.0) for j in range(n)]
    t = Dual(times, 1.0 if axis is None else 0.0)
    return xs, t


def seeded_hyperduals(points: np.ndarray, times: np.ndarray, axis1: int, axis2: int):
    """一括評価用の HyperDual 変数（状態の軸 axis1, axis2 方向）"""
    n = points.shape[1]
    xs = [
        HyperDual(points[:, j], 1.0 if axis1 == j else 0.0, 1.0 if axis2 == j else 0.0, 0.0)
        for j in range(n)
    ]
    return xs, HyperDual.constant(times)


def as_dual(value) -> Dual:
    """定数になった評価結果も Dual として扱う"""
    return value if isinstance(value, Dual) else Dual.constant(value)


def as_hyperdual(value) -> HyperDual:
    return value if isinstance(value, HyperDual) else HyperDual.constant(value)
