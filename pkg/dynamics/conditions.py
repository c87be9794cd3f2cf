"""
安定条件チェックモジュール

各点での十分条件（自律でない系の3つの場合）、制御則の条件、
線形系の2つの行列不等式をサンプル上で検証する
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from core.config import DEFAULTS, NumericDefaults
from dynamics.autodiff import eval_dual
from dynamics.expr import Expr, evaluate, parse
from dynamics.fields import (
    ControlledSystem,
    FieldTerms,
    ScalarField,
    VectorField,
    compute_terms,
)
from dynamics.linalg import check_symmetric, is_negative_definite
from dynamics.results import (
    CheckReport,
    Verdict,
    Witness,
    classify_margin,
    normalized_margin,
    pick_worst,
)
from dynamics.sampling import Domain, SamplingPlan, chunk_bounds, draw_samples, map_ordered


CASES = (1, 2, 3)


def _inequalities(case: int, terms: FieldTerms) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    各不等式の（左辺 - 右辺, 各項の絶対値の和）。全て "<= 0" の形

    case 1: ∂S/∂t + ∇·(S f) - S ∇·f <= 0
    case 2: -(∂S⁻¹/∂t + ∇·(S⁻¹ f)) <= 0 かつ ∇·f <= 0
    case 3: 2∂S/∂t + ∇·(S f) <= 0 かつ -∇·(S⁻¹ f) <= 0
    """
    div_f, div_f_scale = terms.divergence_f()
    div_sf, div_sf_scale = terms.div_sf()
    if case == 1:
        value = terms.s_t + div_sf - terms.s * div_f
        scale = np.abs(terms.s_t) + div_sf_scale + np.abs(terms.s) * div_f_scale
        return [(value, scale)]

    div_invsf, div_invsf_scale = terms.div_invsf()
    if case == 2:
        value = -(terms.inv_s_t + div_invsf)
        scale = np.abs(terms.inv_s_t) + div_invsf_scale
        return [(value, scale), (div_f, div_f_scale)]

    value = 2.0 * terms.s_t + div_sf
    scale = 2.0 * np.abs(terms.s_t) + div_sf_scale
    return [(value, scale), (-div_invsf, div_invsf_scale)]


def _singular(case: int, terms: FieldTerms) -> np.ndarray:
    mask = terms.invalid | terms.kink
    if case != 1:
        mask = mask | terms.inv_invalid
    return mask


def _implication_failures(terms: FieldTerms, parts, singular: np.ndarray, delta_tol: float) -> np.ndarray:
    """
    case 3 の2つの不等式が成り立つ点では ∂S/∂t + ∇S·f <= 0 も成り立つはず

    [2∂S/∂t + ∇·(S f)] - S²∇·(S⁻¹ f) = 2(∂S/∂t + ∇S·f) を使う
    """
    (a, a_scale), (b, b_scale) = parts
    both_hold = (
        (normalized_margin(a, a_scale) <= delta_tol)
        & (normalized_margin(b, b_scale) <= delta_tol)
        & ~singular
    )
    lyap, lyap_scale = terms.lyapunov_rate()
    bound = 2.0 * delta_tol * (a_scale + terms.s ** 2 * b_scale + lyap_scale)
    return both_hold & (lyap > bound)


def check_sufficient(
    case: int,
    f: VectorField,
    s_field: ScalarField,
    domain: Domain,
    plan: SamplingPlan = SamplingPlan(),
    defaults: NumericDefaults = DEFAULTS,
    condition_prefix: str = "th3",
) -> CheckReport:
    """
    十分条件をサンプル上で検証する

    Args:
        case: 1, 2, 3 のいずれか
        f: ベクトル場
        s_field: 証明書 S
        domain: 検証領域
        plan: サンプリング計画
        defaults: 判定の許容幅など
        condition_prefix: レポートの条件名の接頭辞

    Returns:
        CheckReport（正規化マージンで判定し、witness に最悪点を記録）
    """
    if case not in CASES:
        raise ValueError(f"case must be one of {CASES}, got {case}")
    if domain.dimension != f.dimension:
        raise ValueError(f"domain has dimension {domain.dimension}, field has {f.dimension}")

    condition = f"{condition_prefix}-case{case}"
    logger.info(f"Checking {condition} on {domain.dimension}-dimensional domain (seed={plan.seed})")

    samples = draw_samples(domain, plan)
    active = samples.active
    points, times = samples.points[active], samples.times[active]

    def run_chunk(bounds: Tuple[int, int]) -> Dict[str, np.ndarray]:
        lo, hi = bounds
        terms = compute_terms(f, s_field, points[lo:hi], times[lo:hi])
        parts = _inequalities(case, terms)
        singular = _singular(case, terms)
        margins = np.stack([normalized_margin(v, s) for v, s in parts])
        values = np.stack([v for v, _ in parts])
        which = np.argmax(margins, axis=0)
        cols = np.arange(margins.shape[1])
        out = {
            "margin": margins[which, cols],
            "value": values[which, cols],
            "per_inequality": margins,
            "singular": singular,
            "kink": terms.kink,
        }
        if case == 3:
            out["implication"] = _implication_failures(terms, parts, singular, defaults.delta_tol)
        return out

    chunks = map_ordered(run_chunk, chunk_bounds(points.shape[0], plan.chunk_size))
    report = CheckReport(
        condition=condition,
        verdict=Verdict.INCONCLUSIVE,
        n_sampled=samples.size,
        n_excluded_predicate=int((samples.predicate & ~samples.origin).sum()),
        n_excluded_origin=int(samples.origin.sum()),
        seed=plan.seed,
    )
    if not chunks:
        report.notes.append("no samples left after exclusions")
        logger.warning(f"{condition}: every sample was excluded")
        return report

    def gather(key):
        return np.concatenate([c[key] for c in chunks], axis=-1)

    singular = gather("singular")
    margin = gather("margin")
    value = gather("value")
    per_inequality = gather("per_inequality")
    report.n_excluded_singular = int(singular.sum())
    report.n_kink = int(gather("kink").sum())

    usable = ~singular
    if report.n_excluded_singular:
        logger.warning(f"{condition}: {report.n_excluded_singular} singular samples excluded")

    for k in range(per_inequality.shape[0]):
        if usable.any():
            report.details[f"inequality_{k + 1}_worst_margin"] = float(per_inequality[k][usable].max())

    if case == 3:
        failures = int(gather("implication").sum())
        report.details["implication_failures"] = failures
        if failures:
            logger.error(f"{condition}: Lyapunov rate positive at {failures} points where both inequalities hold")

    considered = points.shape[0]
    if report.n_excluded_singular > defaults.inconclusive_fraction * considered or not usable.any():
        report.notes.append(
            f"{report.n_excluded_singular} of {considered} samples were singular; verdict withheld"
        )
        logger.warning(f"{condition}: inconclusive ({report.n_excluded_singular}/{considered} singular)")
        return report

    scored = np.where(usable, margin, -np.inf)
    worst = pick_worst(scored, np.where(usable, value, -np.inf))
    report.worst_margin = float(margin[worst])
    report.worst_value = float(value[worst])
    report.witness = Witness.at(points, times, worst)
    report.verdict = classify_margin(report.worst_margin, defaults.delta_strict, defaults.delta_tol)

    logger.info(
        f"{condition}: {report.verdict.value} (worst margin {report.worst_margin:.3e} "
        f"at x={report.witness.x}, t={report.witness.t:.4g})"
    )
    return report


def check_control(
    case: int,
    system: ControlledSystem,
    s_field: ScalarField,
    domain: Domain,
    plan: SamplingPlan = SamplingPlan(),
    defaults: NumericDefaults = DEFAULTS,
) -> CheckReport:
    """
    制御則の条件を閉ループ系で検証する（判定規則は check_sufficient と同じ）
    """
    return check_sufficient(
        case, system.closed_loop(), s_field, domain, plan, defaults, condition_prefix="th4"
    )


MatrixLike = Sequence[Sequence[Union[str, Expr]]]


def _expr_matrix(matrix: MatrixLike) -> List[List[Expr]]:
    return [[parse(e, 0) if isinstance(e, str) else e for e in row] for row in matrix]


def _at(matrix: List[List[Expr]], t: float) -> np.ndarray:
    return np.array([[evaluate(e, [], t) for e in row] for row in matrix])


def _rate(matrix: List[List[Expr]], t: float) -> np.ndarray:
    return np.array([[eval_dual(e, [], t, None, 1.0).deriv for e in row] for row in matrix])


def check_linear(
    a_matrix: MatrixLike,
    p_matrix: MatrixLike,
    alpha: float,
    t_samples: Sequence[float],
    defaults: NumericDefaults = DEFAULTS,
) -> CheckReport:
    """
    線形系 ẋ = A(t)x の2つの行列不等式を検証する

    M1 = 2Ṗ + AᵀP + PA + (1/α)tr(A)P < 0
    M2 = AᵀP + PA - (1/α)tr(A)P < 0

    Args:
        a_matrix: A(t) の要素（t の式）
        p_matrix: P(t) の要素（対称）
        alpha: 正の指数
        t_samples: 検証する時刻

    Returns:
        CheckReport（worst_margin は最大固有値）

    Raises:
        AsymmetricMatrixError: P(t) が対称でない
        EigenConvergenceError: 固有値計算が収束しない
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    a_exprs = _expr_matrix(a_matrix)
    p_exprs = _expr_matrix(p_matrix)
    n = len(a_exprs)
    if len(p_exprs) != n or any(len(r) != n for r in a_exprs + p_exprs):
        raise ValueError("A and P must be square matrices of the same size")

    t_samples = [float(t) for t in t_samples]
    if not t_samples:
        raise ValueError("t_samples must not be empty")

    worst = None
    all_definite = True
    sum_top = -np.inf
    tops = {"M1": -np.inf, "M2": -np.inf}
    for t in t_samples:
        a = _at(a_exprs, t)
        p = check_symmetric(_at(p_exprs, t))
        p_dot = check_symmetric(_rate(p_exprs, t))
        lyap = a.T @ p + p @ a
        trace_term = (np.trace(a) / alpha) * p
        matrices = {"M1": 2.0 * p_dot + lyap + trace_term, "M2": lyap - trace_term}
        for name, m in matrices.items():
            definite, top = is_negative_definite(check_symmetric(m), tol=defaults.delta_strict)
            all_definite = all_definite and definite
            tops[name] = max(tops[name], top)
            if worst is None or top > worst[0]:
                worst = (top, t, name)
        _, total = is_negative_definite(check_symmetric(matrices["M1"] + matrices["M2"]))
        sum_top = max(sum_top, total)

    top, t_worst, name = worst
    report = CheckReport(
        condition="linear",
        # 狭義の行列不等式なので非厳密の判定はない
        verdict=Verdict.HOLDS_STRICT if all_definite else Verdict.VIOLATED,
        worst_margin=top,
        worst_value=top,
        witness=Witness((), t_worst),
        n_sampled=len(t_samples),
        details={
            "alpha": float(alpha),
            "worst_matrix": name,
            "m1_max_eigenvalue": tops["M1"],
            "m2_max_eigenvalue": tops["M2"],
            "sum_max_eigenvalue": float(sum_top),
        },
    )
    logger.info(f"Linear check (alpha={alpha}): {report.verdict.value}, max eigenvalue {top:.6g} ({name} at t={t_worst})")
    return report
