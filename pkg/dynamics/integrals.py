"""
積分条件モジュール

劣位集合 {S <= C}（または優位集合 {S⁻¹ >= C}）上の流束密度の積分を
棄却法のモンテカルロで推定し、必要条件の符号を検証する
球面の流束と球の体積積分による発散定理の自己テストも提供する
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from core.config import DEFAULTS, NumericDefaults
from dynamics.expr import evaluate_batch
from dynamics.fields import (
    FluxForm,
    GrowthDiagnostics,
    ScalarField,
    VectorField,
    WeightKind,
    WeightSpec,
    compute_terms,
    growth_diagnostics,
)
from dynamics.results import SAMPLED_EVIDENCE_NOTE
from dynamics.sampling import Domain, map_ordered, uniform_chunks


# これより受理率が低いと棄却法が成り立たない
MIN_ACCEPTANCE = 1e-4

# 箱の面で S を調べる点数（面ごと）
FACE_SAMPLES = 256

Box = Tuple[Tuple[float, float], ...]
Integrand = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]


class SamplingError(RuntimeError):
    """棄却法の受理率が低すぎる"""


class LevelSet(str, Enum):
    SUBLEVEL = "sublevel"        # S <= C
    SUPERLEVEL = "superlevel"    # S⁻¹ >= C


class NecessaryVerdict(str, Enum):
    CONSISTENT = "consistent"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"


@dataclass
class IntegralEstimate:
    """モンテカルロ積分の推定値"""
    value: float
    std_error: float
    n_total: int
    n_accepted: int
    seed: int
    box: Box
    t_range: Tuple[float, float]
    n_singular: int = 0          # 受理したが被積分関数が定義できず 0 とした点
    clipped: bool = False        # 箱が集合を切り取っている疑い


def _volume(box: Box, t_range: Tuple[float, float]) -> float:
    t_length = t_range[1] - t_range[0]
    return float(np.prod([hi - lo for lo, hi in box])) * (t_length if t_length > 0 else 1.0)


def _accept(s_values: np.ndarray, s_bad: np.ndarray, level: float, kind: LevelSet) -> np.ndarray:
    with np.errstate(all="ignore"):
        if kind == LevelSet.SUBLEVEL:
            return ~s_bad & (s_values <= level)
        return ~s_bad & (s_values > 0) & (1.0 / s_values >= level)


def _box_clips_set(
    s_field: ScalarField,
    level: float,
    box: Box,
    t_range: Tuple[float, float],
    kind: LevelSet,
    seed: int,
) -> bool:
    """箱の各面で集合に入る点があるか（あれば箱が集合を切り取っている）"""
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    lower = np.array([lo for lo, _ in box])
    upper = np.array([hi for _, hi in box])
    n = lower.shape[0]
    for axis in range(n):
        for bound in (lower[axis], upper[axis]):
            points = rng.uniform(lower, upper, size=(FACE_SAMPLES, n))
            points[:, axis] = bound
            times = rng.uniform(t_range[0], t_range[1], size=FACE_SAMPLES)
            values, bad = evaluate_batch(s_field.body, points, times)
            if _accept(values, bad, level, kind).any():
                return True
    return False


def estimate_sublevel_integral(
    integrand: Integrand,
    s_field: ScalarField,
    level: float,
    box: Box,
    t_range: Tuple[float, float],
    n: int = DEFAULTS.integral_samples,
    seed: int = 0,
    kind: LevelSet = LevelSet.SUBLEVEL,
    epsilon: float = 0.0,
    chunk_size: int = DEFAULTS.chunk_size,
) -> IntegralEstimate:
    """
    {(x,t): S(x,t) <= C, t ∈ t_range} 上の積分を棄却法で推定する

    Args:
        integrand: (points, times) -> (値, 無効点マスク)
        s_field: 集合を定める S
        level: C (> 0)
        box: 集合を含む箱
        t_range: 時間区間（長さ0なら単一時刻での x の積分）
        n: 全サンプル数
        seed: 乱数シード
        kind: SUBLEVEL なら S <= C、SUPERLEVEL なら S⁻¹ >= C
        epsilon: 原点除外半径（優位集合で使う）

    Returns:
        IntegralEstimate（標準誤差は標本分散から）

    Raises:
        SamplingError: 受理率が MIN_ACCEPTANCE 未満
    """
    if level <= 0:
        raise ValueError(f"level C must be positive, got {level}")
    if n < 2:
        raise ValueError("at least two samples are needed for a standard error")
    box = tuple((float(lo), float(hi)) for lo, hi in box)
    lower = np.array([lo for lo, _ in box])
    upper = np.array([hi for _, hi in box])
    if s_field.dimension != lower.shape[0]:
        raise ValueError("box dimension does not match the scalar field")

    chunks = uniform_chunks(lower, upper, t_range, n, seed, chunk_size)

    def run_chunk(chunk):
        points, times = chunk
        s_values, s_bad = evaluate_batch(s_field.body, points, times)
        accepted = _accept(s_values, s_bad, level, kind)
        if epsilon > 0:
            accepted &= np.linalg.norm(points, axis=1) >= epsilon
        contribution = np.zeros(points.shape[0])
        singular = 0
        if accepted.any():
            values, bad = integrand(points[accepted], times[accepted])
            usable = ~bad & np.isfinite(values)
            singular = int((~usable).sum())
            contribution[np.flatnonzero(accepted)[usable]] = values[usable]
        return contribution, int(accepted.sum()), singular

    results = map_ordered(run_chunk, chunks)
    contribution = np.concatenate([c for c, _, _ in results])
    n_accepted = sum(a for _, a, _ in results)
    n_singular = sum(s for _, _, s in results)

    if n_accepted < MIN_ACCEPTANCE * n:
        raise SamplingError(
            f"domain too thin for rejection sampling ({n_accepted} of {n} samples accepted at C={level})"
        )

    volume = _volume(box, t_range)
    value = volume * float(contribution.mean())
    std_error = volume * float(contribution.std(ddof=1)) / math.sqrt(n)

    clipped = _box_clips_set(s_field, level, box, t_range, kind, seed)
    if clipped:
        logger.warning(f"Bounding box clips the {kind.value} set at C={level}; the estimate covers the box part only")
    if n_singular:
        logger.warning(f"{n_singular} accepted samples had an undefined integrand and contribute zero")

    logger.debug(f"Integral at C={level}: {value:.6g} ± {std_error:.2g} ({n_accepted}/{n} accepted)")
    return IntegralEstimate(
        value=value,
        std_error=std_error,
        n_total=n,
        n_accepted=n_accepted,
        seed=seed,
        box=box,
        t_range=(float(t_range[0]), float(t_range[1])),
        n_singular=n_singular,
        clipped=clipped,
    )


@dataclass
class LevelResult:
    """レベル C ごとの結果"""
    level: float
    estimate: IntegralEstimate
    verdict: NecessaryVerdict
    source_strength: float      # case 1 は -積分値、case 2 は積分値


@dataclass
class NecessaryReport:
    """積分による必要条件の検証結果"""
    condition: str                  # th1-case1 / th2-case2 など
    form: str
    weight: str
    rows: List[LevelResult]
    verdict: NecessaryVerdict
    seed: int
    sigma_multiplier: float
    growth: Optional[GrowthDiagnostics] = None
    notes: List[str] = field(default_factory=lambda: [SAMPLED_EVIDENCE_NOTE])

    @property
    def consistent(self) -> bool:
        return self.verdict == NecessaryVerdict.CONSISTENT


def _level_verdict(case: int, value: float, std_error: float, k: float) -> NecessaryVerdict:
    sign = 1.0 if case == 2 else -1.0
    signed = sign * value
    if signed - k * std_error > 0:
        return NecessaryVerdict.CONSISTENT
    if signed + k * std_error < 0:
        return NecessaryVerdict.VIOLATED
    return NecessaryVerdict.INCONCLUSIVE


def flux_integrand(
    form: FluxForm,
    f: VectorField,
    s_field: ScalarField,
    weight: WeightSpec,
    kink_tol: float = DEFAULTS.kink_tol,
) -> Integrand:
    """流束密度を被積分関数にする"""
    second_order = weight.kind == WeightKind.MU and form in (
        FluxForm.WEIGHTED_NORM,
        FluxForm.INV_WEIGHTED_NORM,
    )

    def integrand(points: np.ndarray, times: np.ndarray):
        terms = compute_terms(f, s_field, points, times, weight, second_order=second_order)
        value, _ = terms.flux_density(form, weight)
        return value, terms.singular_mask(form, weight, kink_tol)

    return integrand


def default_levels(s_field: ScalarField, box: Box, t_range: Tuple[float, float], seed: int = 0) -> List[float]:
    """箱の上での S の最大値に {0.1, 0.25, 0.5, 1.0} を掛けたレベル"""
    lower = np.array([lo for lo, _ in box])
    upper = np.array([hi for _, hi in box])
    ((points, times),) = uniform_chunks(lower, upper, t_range, 4096, seed, 4096)
    values, bad = evaluate_batch(s_field.body, points, times)
    s_max = float(np.max(values[~bad])) if (~bad).any() else 1.0
    return [fraction * s_max for fraction in (0.1, 0.25, 0.5, 1.0)]


def check_necessary(
    theorem: int,
    case: int,
    f: VectorField,
    s_field: ScalarField,
    weight: Optional[WeightSpec],
    levels: Optional[Sequence[float]],
    box: Box,
    t_range: Tuple[float, float],
    n: int = DEFAULTS.integral_samples,
    seed: int = 0,
    epsilon: float = DEFAULTS.epsilon,
    defaults: NumericDefaults = DEFAULTS,
    gamma: float = 1.0,
) -> NecessaryReport:
    """
    積分による必要条件を各レベル C で検証する

    theorem 1 は μ ≡ 1、theorem 2 は指定した重みを使う
    case 1 は {S <= C} 上で積分が負、case 2 は {S⁻¹ >= C} 上で積分が正なら consistent

    Args:
        theorem: 1 または 2
        case: 1 または 2
        weight: theorem 2 の重み（None なら S の重み）
        levels: C の一覧（None なら箱の上の S の最大値から決める）
        gamma: 明示的な μ の場合に ‖f‖ <= c0‖x‖^γ を観測する指数
    """
    if theorem not in (1, 2) or case not in (1, 2):
        raise ValueError(f"unsupported necessary condition theorem={theorem} case={case}")
    if theorem == 1:
        weight = WeightSpec.unit()
    elif weight is None:
        weight = WeightSpec.s_weight() if case == 1 else WeightSpec.inv_s_weight()

    form = FluxForm.WEIGHTED_NORM if case == 1 else FluxForm.INV_WEIGHTED_NORM
    kind = LevelSet.SUBLEVEL if case == 1 else LevelSet.SUPERLEVEL
    integrand = flux_integrand(form, f, s_field, weight, defaults.kink_tol)
    if levels is None:
        levels = default_levels(s_field, box, t_range, seed)

    condition = f"th{theorem}-case{case}"
    logger.info(f"Checking {condition} ({form.value}, weight {weight.describe()}) at C={list(levels)}")

    rows = []
    for level in levels:
        estimate = estimate_sublevel_integral(
            integrand,
            s_field,
            float(level),
            box,
            t_range,
            n=n,
            seed=seed,
            kind=kind,
            epsilon=epsilon if kind == LevelSet.SUPERLEVEL else 0.0,
            chunk_size=defaults.chunk_size,
        )
        verdict = _level_verdict(case, estimate.value, estimate.std_error, defaults.sigma_multiplier)
        strength = -estimate.value if case == 1 else estimate.value
        rows.append(LevelResult(float(level), estimate, verdict, strength))
        logger.info(f"{condition} C={level}: {estimate.value:.6g} ± {estimate.std_error:.2g} -> {verdict.value}")

    verdicts = [row.verdict for row in rows]
    if verdicts and all(v == NecessaryVerdict.CONSISTENT for v in verdicts):
        overall = NecessaryVerdict.CONSISTENT
    elif NecessaryVerdict.VIOLATED in verdicts:
        overall = NecessaryVerdict.VIOLATED
    else:
        overall = NecessaryVerdict.INCONCLUSIVE

    report = NecessaryReport(
        condition=condition,
        form=form.value,
        weight=weight.describe(),
        rows=rows,
        verdict=overall,
        seed=seed,
        sigma_multiplier=defaults.sigma_multiplier,
    )
    if overall == NecessaryVerdict.VIOLATED:
        report.notes.append("necessary condition violated: the system cannot satisfy the stability hypothesis with this S")
    if theorem == 2 and weight.kind == WeightKind.MU:
        domain = Domain(box=box, t_range=(t_range[0], max(t_range[1], t_range[0] + 1e-9)), epsilon=epsilon)
        report.growth = growth_diagnostics(f, weight.mu, domain, gamma)
    logger.info(f"{condition}: {overall.value}")
    return report


# ---------------------------------------------------------------------------
# 発散定理の自己テスト
# ---------------------------------------------------------------------------

def _sphere_area(dimension: int, radius: float) -> float:
    return 2.0 * math.pi ** (dimension / 2.0) / math.gamma(dimension / 2.0) * radius ** (dimension - 1)


def sphere_flux(
    h: VectorField,
    radius: float,
    center: Optional[Sequence[float]] = None,
    t: float = 0.0,
    n: int = 100_000,
    seed: int = 0,
) -> IntegralEstimate:
    """
    球面上の流束 ∮ h·n̂ dΓ を一様な球面サンプルで推定する
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if n < 1000:
        raise ValueError("sphere_flux needs at least 1000 samples")
    dim = h.dimension
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    normals = rng.standard_normal((n, dim))
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    points = center + radius * normals
    values, bad = h.evaluate_batch(points, np.full(n, float(t)))
    density = np.where(bad[:, None], 0.0, values * normals).sum(axis=1)

    area = _sphere_area(dim, radius)
    return IntegralEstimate(
        value=area * float(density.mean()),
        std_error=area * float(density.std(ddof=1)) / math.sqrt(n),
        n_total=n,
        n_accepted=n,
        seed=seed,
        box=tuple((float(c - radius), float(c + radius)) for c in center),
        t_range=(float(t), float(t)),
        n_singular=int(bad.sum()),
    )


def ball_integral(
    h: VectorField,
    radius: float,
    center: Optional[Sequence[float]] = None,
    t: float = 0.0,
    n: int = 100_000,
    seed: int = 0,
) -> IntegralEstimate:
    """球の内部での ∇·h の体積積分（sphere_flux と比べる）"""
    dim = h.dimension
    center = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    ball = ScalarField.parse(
        " + ".join(f"(x{i + 1} - ({float(c)!r}))^2" for i, c in enumerate(center)), dim
    )

    def integrand(points, times):
        return h.divergence_batch(points, times)

    return estimate_sublevel_integral(
        integrand,
        ball,
        radius * radius,
        tuple((float(c - radius), float(c + radius)) for c in center),
        (float(t), float(t)),
        n=n,
        seed=seed,
    )
