"""
場モジュール
スカラー場 S(x,t)、ベクトル場 f(x,t)、制御系 ξ + g·u と、
安定条件に現れる合成量（∇S, ∂S/∂t, ∇·f, 各種の流束密度）を計算する

合成量は全て自動微分のキャリアで計算するので、記号微分は行わない
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from core.config import DEFAULTS
from dynamics.autodiff import (
    as_dual,
    as_hyperdual,
    eval_dual,
    seeded_duals,
    seeded_hyperduals,
)
from dynamics.expr import (
    Binary,
    Constant,
    EvalContext,
    Expr,
    VarX,
    evaluate,
    evaluate_batch,
    evaluate_carrier,
    max_state_index,
    parse,
    to_text,
)
from dynamics.results import CheckReport, Verdict, Witness, pick_worst
from dynamics.sampling import Domain, SamplingPlan, chunk_bounds, draw_samples, map_ordered


class SingularPointError(ArithmeticError):
    """S=0 や |∇S|≈0 など、式が定義できない点で評価した"""


# ---------------------------------------------------------------------------
# 場の定義
# ---------------------------------------------------------------------------

def _check_indices(exprs: Sequence[Expr], dimension: int, what: str):
    for e in exprs:
        if max_state_index(e) > dimension:
            raise ValueError(f"{what} uses x{max_state_index(e)} beyond dimension {dimension}")


@dataclass(frozen=True)
class ScalarField:
    """スカラー場 S(x,t)"""
    dimension: int
    body: Expr

    def __post_init__(self):
        _check_indices([self.body], self.dimension, "scalar field")

    @classmethod
    def parse(cls, text: str, dimension: int) -> "ScalarField":
        return cls(dimension, parse(text, dimension))

    @property
    def text(self) -> str:
        return to_text(self.body)

    def value(self, x: Sequence[float], t: float) -> float:
        return evaluate(self.body, x, t)


@dataclass(frozen=True)
class VectorField:
    """ベクトル場 f(x,t)（成分数 = 次元）"""
    dimension: int
    components: Tuple[Expr, ...]

    def __post_init__(self):
        if len(self.components) != self.dimension:
            raise ValueError(
                f"vector field has {len(self.components)} components, expected {self.dimension}"
            )
        _check_indices(self.components, self.dimension, "vector field")

    @classmethod
    def parse(cls, texts: Sequence[str], dimension: int) -> "VectorField":
        return cls(dimension, tuple(parse(text, dimension) for text in texts))

    @classmethod
    def linear(cls, matrix: Sequence[Sequence[str]]) -> "VectorField":
        """
        線形場 f = A(t)x を作る

        Args:
            matrix: A(t) の各要素の式（t のみに依存）
        """
        n = len(matrix)
        rows = []
        for row in matrix:
            if len(row) != n:
                raise ValueError("linear field matrix must be square")
            terms = [Binary("mul", parse(entry, n), VarX(j + 1)) for j, entry in enumerate(row)]
            body = terms[0]
            for term in terms[1:]:
                body = Binary("add", body, term)
            rows.append(body)
        return cls(n, tuple(rows))

    @property
    def texts(self) -> Tuple[str, ...]:
        return tuple(to_text(c) for c in self.components)

    def value(self, x: Sequence[float], t: float) -> np.ndarray:
        return np.array([evaluate(c, x, t) for c in self.components])

    def evaluate_batch(self, points: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        多数の点で一括評価する

        Returns:
            (形状 (m, n) の値, 無効点マスク)
        """
        values = np.empty_like(points, dtype=float)
        invalid = np.zeros(points.shape[0], dtype=bool)
        for i, component in enumerate(self.components):
            values[:, i], bad = evaluate_batch(component, points, times)
            invalid |= bad
        return values, invalid

    def divergence_batch(self, points: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """多数の点での ∇·f（無効点は NaN）"""
        points = np.asarray(points, dtype=float)
        m = points.shape[0]
        ctx = EvalContext((m,))
        total = np.zeros(m)
        with np.errstate(all="ignore"):
            for i, component in enumerate(self.components):
                xs, t = seeded_duals(points, np.asarray(times, dtype=float), i)
                total += _column(as_dual(evaluate_carrier(component, xs, t, ctx)).deriv, m)
        invalid = ctx.invalid | ~np.isfinite(total)
        total[invalid] = np.nan
        return total, invalid


@dataclass(frozen=True)
class ControlledSystem:
    """
    制御系 ẋ = ξ(x,t) + g(x,t)·u(x,t)

    input_matrix は n×m、control は m 成分
    """
    dimension: int
    drift: VectorField
    input_matrix: Tuple[Tuple[Expr, ...], ...]
    control: Tuple[Expr, ...]

    def __post_init__(self):
        if self.drift.dimension != self.dimension:
            raise ValueError("drift dimension does not match system dimension")
        if len(self.input_matrix) != self.dimension:
            raise ValueError(f"input matrix needs {self.dimension} rows, got {len(self.input_matrix)}")
        for row in self.input_matrix:
            if len(row) != len(self.control):
                raise ValueError(
                    f"input matrix rows need {len(self.control)} columns to match the control"
                )
            _check_indices(row, self.dimension, "input matrix")
        _check_indices(self.control, self.dimension, "control law")

    @classmethod
    def parse(
        cls,
        drift: Sequence[str],
        input_matrix: Sequence[Sequence[str]],
        control: Sequence[str],
        dimension: int,
    ) -> "ControlledSystem":
        return cls(
            dimension,
            VectorField.parse(drift, dimension),
            tuple(tuple(parse(e, dimension) for e in row) for row in input_matrix),
            tuple(parse(e, dimension) for e in control),
        )

    def with_control(self, control: Sequence[str]) -> "ControlledSystem":
        """制御則だけを差し替えた系"""
        return ControlledSystem(
            self.dimension,
            self.drift,
            self.input_matrix,
            tuple(parse(e, self.dimension) for e in control),
        )

    def closed_loop(self) -> VectorField:
        """閉ループ系 ξi + Σj gij·uj"""
        components = []
        for xi, row in zip(self.drift.components, self.input_matrix):
            body = xi
            for gij, uj in zip(row, self.control):
                body = Binary("add", body, Binary("mul", gij, uj))
            components.append(body)
        return VectorField(self.dimension, tuple(components))


class WeightKind(str, Enum):
    S = "s"            # w = S（μ|∇S| = S）
    INV_S = "inv_s"    # w = S⁻¹
    MU = "mu"          # 明示的な μ(x,t)


@dataclass(frozen=True)
class WeightSpec:
    """
    積分条件の重み

    S / S⁻¹ の重みは μ = S/|∇S| に相当し、case 1 で S、case 2 で S⁻¹ になる
    """
    kind: WeightKind = WeightKind.S
    mu: Optional[Expr] = None

    def __post_init__(self):
        if (self.kind == WeightKind.MU) != (self.mu is not None):
            raise ValueError("an explicit mu expression is required exactly for the 'mu' weight")

    @classmethod
    def s_weight(cls) -> "WeightSpec":
        return cls(WeightKind.S)

    @classmethod
    def inv_s_weight(cls) -> "WeightSpec":
        return cls(WeightKind.INV_S)

    @classmethod
    def explicit(cls, mu: Expr) -> "WeightSpec":
        return cls(WeightKind.MU, mu)

    @classmethod
    def unit(cls) -> "WeightSpec":
        """μ ≡ 1"""
        return cls(WeightKind.MU, Constant(1.0))

    def describe(self) -> str:
        return self.kind.value if self.mu is None else f"mu={to_text(self.mu)}"


class FluxForm(str, Enum):
    """流束密度の形"""
    LYAPUNOV_RATE = "lyapunov_rate"              # ∂S/∂t + ∇S·f
    DIV_FORM = "div_form"                        # ∂S/∂t + ∇·(w f)
    INV_DIV_FORM = "inv_div_form"                # ∂S⁻¹/∂t + ∇·(w f)
    WEIGHTED_NORM = "weighted_norm"              # ∂S/∂t + ∇·(μ|∇S| f)
    INV_WEIGHTED_NORM = "inv_weighted_norm"      # ∂S⁻¹/∂t + ∇·(μ|∇S⁻¹| f)


# ---------------------------------------------------------------------------
# 一括計算
# ---------------------------------------------------------------------------

def _column(value, m: int) -> np.ndarray:
    return np.broadcast_to(np.asarray(value, dtype=float), (m,)).astype(float)


@dataclass
class FieldTerms:
    """
    サンプル点ごとの合成量

    invalid: S または f が定義域外（S⁻¹ を使わない量の除外に使う）
    inv_invalid: S = 0 などで S⁻¹ が定義できない
    kink: abs の折れ点を通った
    """
    s: np.ndarray
    s_t: np.ndarray
    grad: np.ndarray              # (m, n)
    fvals: np.ndarray             # (m, n)
    dfdx: np.ndarray              # (m, n) ∂fi/∂xi
    sf_parts: np.ndarray          # (m, n) ∂i(S fi)
    inv_s: np.ndarray
    inv_s_t: np.ndarray
    inv_grad: np.ndarray          # (m, n)
    invsf_parts: np.ndarray       # (m, n) ∂i(S⁻¹ fi)
    invalid: np.ndarray
    inv_invalid: np.ndarray
    kink: np.ndarray
    mu: Optional[np.ndarray] = None
    dmu: Optional[np.ndarray] = None
    mu_parts: Optional[np.ndarray] = None   # (m, n) ∂i(μ fi)
    hess: Optional[np.ndarray] = None       # (m, n, n)

    @property
    def size(self) -> int:
        return int(self.s.shape[0])

    # --- 合成量（値, 各項の絶対値の和） ---

    def lyapunov_rate(self) -> Tuple[np.ndarray, np.ndarray]:
        parts = self.grad * self.fvals
        return self.s_t + parts.sum(axis=1), np.abs(self.s_t) + np.abs(parts).sum(axis=1)

    def divergence_f(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.dfdx.sum(axis=1), np.abs(self.dfdx).sum(axis=1)

    def div_sf(self) -> Tuple[np.ndarray, np.ndarray]:
        scale = np.abs(self.grad * self.fvals) + np.abs(self.s[:, None] * self.dfdx)
        return self.sf_parts.sum(axis=1), scale.sum(axis=1)

    def div_invsf(self) -> Tuple[np.ndarray, np.ndarray]:
        scale = np.abs(self.inv_grad * self.fvals) + np.abs(self.inv_s[:, None] * self.dfdx)
        return self.invsf_parts.sum(axis=1), scale.sum(axis=1)

    def div_mu_f(self) -> Tuple[np.ndarray, np.ndarray]:
        self._require_mu()
        scale = np.abs(self.dmu * self.fvals) + np.abs(self.mu[:, None] * self.dfdx)
        return self.mu_parts.sum(axis=1), scale.sum(axis=1)

    def gradient_norm(self, inverse: bool = False) -> np.ndarray:
        norm = np.linalg.norm(self.grad, axis=1)
        if inverse:
            return norm * self.inv_s * self.inv_s
        return norm

    def div_weighted_norm(self, inverse: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        """
        ∇·(μ|∇S| f)（inverse なら ∇·(μ|∇S⁻¹| f)）

        ∂i|∇S| = Σj ∂jS·∂i∂jS / |∇S| をヘッセ行列から組み立てる
        """
        self._require_mu()
        if self.hess is None:
            raise ValueError("second derivatives were not computed for these terms")
        with np.errstate(all="ignore"):
            norm = np.linalg.norm(self.grad, axis=1)
            dnorm = np.einsum("mj,mij->mi", self.grad, self.hess) / norm[:, None]
            if inverse:
                inv2 = self.inv_s * self.inv_s
                dnorm = dnorm * inv2[:, None] + (-2.0 * norm * inv2 * self.inv_s)[:, None] * self.grad
                norm = norm * inv2
            pieces = np.stack(
                [
                    self.dmu * norm[:, None] * self.fvals,
                    self.mu[:, None] * dnorm * self.fvals,
                    (self.mu * norm)[:, None] * self.dfdx,
                ]
            )
        return pieces.sum(axis=(0, 2)), np.abs(pieces).sum(axis=(0, 2))

    def _require_mu(self):
        if self.mu is None:
            raise ValueError("weight terms were not computed; pass an explicit weight")

    # --- 流束密度 ---

    def weight_divergence(self, weight: WeightSpec, inverse: bool) -> Tuple[np.ndarray, np.ndarray]:
        """∇·(w f)。S / S⁻¹ の重みは inverse に応じて S か S⁻¹ を使う"""
        if weight.kind == WeightKind.MU:
            return self.div_mu_f()
        if weight.kind == WeightKind.INV_S:
            return self.div_invsf()
        return self.div_sf()

    def flux_density(self, form: FluxForm, weight: Optional[WeightSpec] = None) -> Tuple[np.ndarray, np.ndarray]:
        """
        流束密度の値と各項の絶対値の和

        Args:
            form: 流束密度の形
            weight: 重み（DIV_FORM の既定は S、INV_DIV_FORM の既定は S⁻¹）
        """
        if form == FluxForm.LYAPUNOV_RATE:
            return self.lyapunov_rate()
        if form in (FluxForm.DIV_FORM, FluxForm.INV_DIV_FORM):
            inverse = form == FluxForm.INV_DIV_FORM
            if weight is None:
                weight = WeightSpec.inv_s_weight() if inverse else WeightSpec.s_weight()
            rate = self.inv_s_t if inverse else self.s_t
            value, scale = self.weight_divergence(weight, inverse)
            return rate + value, np.abs(rate) + scale

        inverse = form == FluxForm.INV_WEIGHTED_NORM
        rate = self.inv_s_t if inverse else self.s_t
        if weight is None or weight.kind != WeightKind.MU:
            value, scale = self.div_invsf() if inverse else self.div_sf()
        else:
            value, scale = self.div_weighted_norm(inverse)
        return rate + value, np.abs(rate) + scale

    def singular_mask(self, form: FluxForm, weight: Optional[WeightSpec], kink_tol: float) -> np.ndarray:
        """流束密度が定義できないサンプル"""
        mask = self.invalid | self.kink
        uses_inverse = form in (FluxForm.INV_DIV_FORM, FluxForm.INV_WEIGHTED_NORM) or (
            weight is not None and weight.kind == WeightKind.INV_S
        )
        if uses_inverse:
            mask = mask | self.inv_invalid
        if form in (FluxForm.WEIGHTED_NORM, FluxForm.INV_WEIGHTED_NORM) and (
            weight is not None and weight.kind == WeightKind.MU
        ):
            mask = mask | (np.linalg.norm(self.grad, axis=1) < kink_tol)
        return mask


def compute_terms(
    f: VectorField,
    s_field: ScalarField,
    points: np.ndarray,
    times: np.ndarray,
    weight: Optional[WeightSpec] = None,
    second_order: bool = False,
) -> FieldTerms:
    """
    サンプル点ごとに合成量を計算する

    状態の各軸に Dual を1回ずつ、t に1回流す（second_order なら S のヘッセ行列も HyperDual で計算）

    Args:
        f: ベクトル場
        s_field: スカラー場 S
        points: 形状 (m, n)
        times: 形状 (m,)
        weight: 明示的な μ を使う場合の重み
        second_order: ヘッセ行列を計算するか

    Returns:
        FieldTerms
    """
    if f.dimension != s_field.dimension:
        raise ValueError(f"dimension mismatch: field {f.dimension}, certificate {s_field.dimension}")
    points = np.asarray(points, dtype=float)
    times = np.asarray(times, dtype=float)
    m, n = points.shape
    ctx = EvalContext((m,))
    mu_expr = weight.mu if weight is not None and weight.kind == WeightKind.MU else None

    grad = np.empty((m, n))
    inv_grad = np.empty((m, n))
    fvals = np.empty((m, n))
    dfdx = np.empty((m, n))
    sf_parts = np.empty((m, n))
    invsf_parts = np.empty((m, n))
    dmu = np.empty((m, n)) if mu_expr is not None else None
    mu_parts = np.empty((m, n)) if mu_expr is not None else None
    mu = None

    with np.errstate(all="ignore"):
        for i in range(n):
            xs, t = seeded_duals(points, times, i)
            s_i = as_dual(evaluate_carrier(s_field.body, xs, t, ctx))
            f_i = as_dual(evaluate_carrier(f.components[i], xs, t, ctx))
            inv_i = 1.0 / s_i
            grad[:, i] = _column(s_i.deriv, m)
            inv_grad[:, i] = _column(inv_i.deriv, m)
            fvals[:, i] = _column(f_i.value, m)
            dfdx[:, i] = _column(f_i.deriv, m)
            sf_parts[:, i] = _column((s_i * f_i).deriv, m)
            invsf_parts[:, i] = _column((inv_i * f_i).deriv, m)
            if mu_expr is not None:
                mu_i = as_dual(evaluate_carrier(mu_expr, xs, t, ctx))
                mu = _column(mu_i.value, m)
                dmu[:, i] = _column(mu_i.deriv, m)
                mu_parts[:, i] = _column((mu_i * f_i).deriv, m)

        xs, t = seeded_duals(points, times, None)
        s_t_dual = as_dual(evaluate_carrier(s_field.body, xs, t, ctx))
        inv_t_dual = 1.0 / s_t_dual
        s = _column(s_t_dual.value, m)
        s_t = _column(s_t_dual.deriv, m)
        inv_s = _column(inv_t_dual.value, m)
        inv_s_t = _column(inv_t_dual.deriv, m)

        hess = None
        if second_order:
            hess = np.empty((m, n, n))
            for i in range(n):
                for j in range(i, n):
                    xs, t = seeded_hyperduals(points, times, i, j)
                    h = as_hyperdual(evaluate_carrier(s_field.body, xs, t, ctx))
                    hess[:, i, j] = hess[:, j, i] = _column(h.d12, m)

    invalid = ctx.invalid.copy()
    for arr in (grad, fvals, dfdx, sf_parts, s_t):
        invalid |= ~np.isfinite(arr.reshape(m, -1)).all(axis=1)
    if hess is not None:
        invalid |= ~np.isfinite(hess.reshape(m, -1)).all(axis=1)
    if mu_expr is not None:
        invalid |= ~np.isfinite(mu_parts).all(axis=1)

    inv_invalid = (s == 0) | ~np.isfinite(inv_s) | ~np.isfinite(inv_s_t)
    for arr in (inv_grad, invsf_parts):
        inv_invalid |= ~np.isfinite(arr).all(axis=1)

    return FieldTerms(
        s=s,
        s_t=s_t,
        grad=grad,
        fvals=fvals,
        dfdx=dfdx,
        sf_parts=sf_parts,
        inv_s=inv_s,
        inv_s_t=inv_s_t,
        inv_grad=inv_grad,
        invsf_parts=invsf_parts,
        invalid=invalid,
        inv_invalid=inv_invalid,
        kink=ctx.kink.copy(),
        mu=mu,
        dmu=dmu,
        mu_parts=mu_parts,
        hess=hess,
    )


# ---------------------------------------------------------------------------
# 1点での計算
# ---------------------------------------------------------------------------

def _unit(n: int, i: int) -> np.ndarray:
    e = np.zeros(n)
    e[i] = 1.0
    return e


def gradient_with_kink(s_field: ScalarField, x: Sequence[float], t: float) -> Tuple[np.ndarray, bool]:
    """
    ∇S と、どれかの軸で abs の折れ点を通ったか

    Raises:
        EvaluationDomainError: 定義域外
    """
    n = s_field.dimension
    partials = [eval_dual(s_field.body, x, t, _unit(n, i), 0.0) for i in range(n)]
    grad = np.array([p.deriv for p in partials])
    return grad, any(p.kink for p in partials)


def gradient(s_field: ScalarField, x: Sequence[float], t: float) -> np.ndarray:
    """
    ∇S（状態の各軸に Dual を流す）

    折れ点では該当する偏微分を 0 として返す

    Raises:
        EvaluationDomainError: 定義域外
    """
    grad, kink = gradient_with_kink(s_field, x, t)
    if kink:
        logger.debug(f"Gradient of S passes an abs kink at x={tuple(x)}, t={t}")
    elif np.linalg.norm(grad) < DEFAULTS.kink_tol:
        logger.debug(f"Gradient of S vanishes at x={tuple(x)}, t={t}")
    return grad


def is_stationary(s_field: ScalarField, x: Sequence[float], t: float, kink_tol: float = DEFAULTS.kink_tol) -> bool:
    """|∇S| が kink_tol 未満か（折れ点も勾配が定まらないので True）"""
    grad, kink = gradient_with_kink(s_field, x, t)
    return kink or bool(np.linalg.norm(grad) < kink_tol)


def time_derivative(s_field: ScalarField, x: Sequence[float], t: float) -> float:
    """∂S/∂t"""
    return eval_dual(s_field.body, x, t, None, 1.0).deriv


def divergence(h: VectorField, x: Sequence[float], t: float) -> float:
    """∇·h = Σ ∂hi/∂xi"""
    n = h.dimension
    return float(sum(eval_dual(h.components[i], x, t, _unit(n, i), 0.0).deriv for i in range(n)))


def flux_density(
    form: FluxForm,
    s_field: ScalarField,
    weight: Optional[WeightSpec],
    f: VectorField,
    x: Sequence[float],
    t: float,
    kink_tol: float = DEFAULTS.kink_tol,
) -> float:
    """
    1点での流束密度

    Raises:
        SingularPointError: S=0（S⁻¹ を使う形）または |∇S| < kink_tol（μ|∇S| の形）
    """
    points = np.asarray(x, dtype=float).reshape(1, -1)
    times = np.array([float(t)])
    needs_hessian = form in (FluxForm.WEIGHTED_NORM, FluxForm.INV_WEIGHTED_NORM)
    terms = compute_terms(f, s_field, points, times, weight, second_order=needs_hessian)
    if terms.singular_mask(form, weight, kink_tol)[0]:
        raise SingularPointError(f"{form.value} is undefined at x={tuple(points[0])}, t={t}")
    value, _ = terms.flux_density(form, weight)
    return float(value[0])


# ---------------------------------------------------------------------------
# 正値性と th2 条件の増大度の仮定の診断
# ---------------------------------------------------------------------------

def positivity_check(
    s_field: ScalarField,
    domain: Domain,
    plan: SamplingPlan = SamplingPlan(),
    origin_tol: float = 1e-12,
) -> CheckReport:
    """
    S の正値性をサンプルで確かめる

    原点近傍を除く全サンプルで S > 0、かつサンプルした全ての t で S(0,t) <= origin_tol なら成立
    軸ゼロ述語による除外は適用しない（S はどこでも正である必要がある）
    """
    samples = draw_samples(domain, plan)
    keep = ~samples.origin
    points, times = samples.points[keep], samples.times[keep]

    results = map_ordered(
        lambda b: evaluate_batch(s_field.body, points[b[0]:b[1]], times[b[0]:b[1]]),
        chunk_bounds(points.shape[0], plan.chunk_size),
    )
    values = np.concatenate([v for v, _ in results]) if results else np.empty(0)
    invalid = np.concatenate([bad for _, bad in results]) if results else np.empty(0, dtype=bool)

    origin_times = np.unique(times) if times.size else np.array([domain.t_range[0]])
    origin_values, origin_bad = evaluate_batch(
        s_field.body, np.zeros((origin_times.shape[0], domain.dimension)), origin_times
    )
    origin_ok = bool(np.all(~origin_bad & (np.abs(origin_values) <= origin_tol)))

    report = CheckReport(
        condition="positivity",
        verdict=Verdict.HOLDS_STRICT,
        n_sampled=samples.size,
        n_excluded_origin=int(samples.origin.sum()),
        n_excluded_singular=int(invalid.sum()),
        seed=plan.seed,
    )
    if values.size:
        scored = np.where(invalid, -np.inf, -values)
        worst = pick_worst(scored, scored)
        report.worst_value = float(values[worst])
        report.worst_margin = float(-values[worst])
        report.witness = Witness.at(points, times, worst)
    positive = bool(values.size == 0 or np.all(values[~invalid] > 0))
    report.details["origin_value_ok"] = origin_ok
    report.details["min_value"] = report.worst_value

    zero_offaxis = values[~invalid] <= 0
    if zero_offaxis.any():
        vanishing_times = np.unique(times[~invalid][zero_offaxis])
        report.details["vanishing_times"] = int(vanishing_times.shape[0])

    if not (positive and origin_ok):
        report.verdict = Verdict.VIOLATED
        logger.warning(f"S is not positive definite on the sampled domain (min {report.worst_value})")
    logger.info(f"Positivity check: {report.verdict.value}")
    return report


@dataclass(frozen=True)
class GrowthDiagnostics:
    """
    th2 条件の仮定（‖f‖ ≤ c0‖x‖^γ, c1‖x‖ ≤ μ ≤ c2‖x‖）の観測値

    c0: max ‖f‖/‖x‖^γ
    c1, c2: μ/‖x‖ の最小値・最大値（μ を指定した場合）
    いずれもサンプル上の観測値で、保証ではない
    """
    gamma: float
    c0: float
    c1: Optional[float]
    c2: Optional[float]
    n_samples: int
    mu_nonpositive: int = 0


def growth_diagnostics(
    f: VectorField,
    mu: Optional[Expr],
    domain: Domain,
    gamma: float = 1.0,
    plan: SamplingPlan = SamplingPlan(grid_per_axis=0, random_samples=4096),
) -> GrowthDiagnostics:
    """
    ‖f‖ <= c0‖x‖^γ と c1‖x‖ <= μ <= c2‖x‖ の定数をサンプルから観測する
    """
    samples = draw_samples(domain, plan)
    keep = samples.active
    points, times = samples.points[keep], samples.times[keep]
    norms = np.linalg.norm(points, axis=1)

    fvals, invalid = f.evaluate_batch(points, times)
    ok = ~invalid & (norms > 0)
    ratios = np.linalg.norm(fvals[ok], axis=1) / norms[ok] ** gamma
    c0 = float(ratios.max()) if ratios.size else 0.0

    c1 = c2 = None
    nonpositive = 0
    if mu is not None:
        mu_vals, mu_bad = evaluate_batch(mu, points, times)
        good = ok & ~mu_bad
        nonpositive = int(np.sum(mu_vals[good] <= 0))
        scaled = mu_vals[good] / norms[good]
        if scaled.size:
            c1, c2 = float(scaled.min()), float(scaled.max())
        if nonpositive:
            logger.warning(f"Explicit mu is non-positive at {nonpositive} sampled points")

    logger.debug(f"Growth diagnostics: c0={c0:.4g} (gamma={gamma}), c1={c1}, c2={c2}")
    return GrowthDiagnostics(gamma, c0, c1, c2, int(points.shape[0]), nonpositive)
