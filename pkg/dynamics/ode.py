"""
常微分方程式シミュレーションモジュール

ẋ = f(x,t) を RK4（固定刻み）または RKF45（埋め込み型の適応刻み）で積分し、
軌道の収束を分類する。多数の初期値はひとつのバッチとして同時に積分する
（刻み幅は軌道ごとに独立）
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from core.config import DEFAULTS, NumericDefaults
from dynamics.fields import ScalarField, VectorField
from dynamics.expr import evaluate_batch
from dynamics.results import CheckReport, Verdict
from dynamics.sampling import Domain


@dataclass(frozen=True)
class RK4:
    """古典的4段4次の固定刻み法"""
    h: float = 0.01

    @property
    def name(self) -> str:
        return "rk4"

    def params(self) -> Dict[str, float]:
        return {"h": self.h}


@dataclass(frozen=True)
class RKF45:
    """Runge-Kutta-Fehlberg 4(5) 法（4次解で進める）"""
    rtol: float = 1e-6
    atol: float = 1e-9
    h0: Optional[float] = None

    @property
    def name(self) -> str:
        return "rkf45"

    def params(self) -> Dict[str, float]:
        out = {"rtol": self.rtol, "atol": self.atol}
        if self.h0 is not None:
            out["h0"] = self.h0
        return out


Method = Union[RK4, RKF45]


class Termination(str, Enum):
    REACHED_TF = "reached_tf"
    CONVERGED_EARLY = "converged_early"
    DIVERGED = "diverged"
    STEP_UNDERFLOW = "step_underflow"
    MAX_STEPS = "max_steps"


@dataclass
class Trajectory:
    """積分結果（times は狭義単調増加、states は全て有限）"""
    times: np.ndarray           # (k,)
    states: np.ndarray          # (k, n)
    method: str
    method_params: Dict[str, float]
    termination: Termination

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def final_norm(self) -> float:
        return float(np.linalg.norm(self.states[-1]))


class ConvergenceClass(str, Enum):
    CONVERGED = "converged"
    BOUNDED_NONCONVERGENT = "bounded_nonconvergent"
    DIVERGED = "diverged"


@dataclass(frozen=True)
class ConvergenceVerdict:
    """収束の分類"""
    cls: ConvergenceClass
    target: Tuple[float, ...]
    final_norm: float
    time: float


# Fehlberg の係数
_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_A = [
    [],
    [1 / 4],
    [3 / 32, 9 / 32],
    [1932 / 2197, -7200 / 2197, 7296 / 2197],
    [439 / 216, -8.0, 3680 / 513, -845 / 4104],
    [-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40],
]
_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_B5 = np.array([16 / 135, 0.0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55])

# 1ステップあたりの刻み幅の変化の上下限
_SHRINK, _GROW = 0.2, 5.0


def _rhs(f: VectorField, points: np.ndarray, times: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    values, invalid = f.evaluate_batch(points, times)
    return values, invalid | ~np.isfinite(values).all(axis=1)


def _rk4_step(f, x, t, h):
    k1, b1 = _rhs(f, x, t)
    k2, b2 = _rhs(f, x + 0.5 * h[:, None] * k1, t + 0.5 * h)
    k3, b3 = _rhs(f, x + 0.5 * h[:, None] * k2, t + 0.5 * h)
    k4, b4 = _rhs(f, x + h[:, None] * k3, t + h)
    x_new = x + (h / 6.0)[:, None] * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x_new, b1 | b2 | b3 | b4


def _rkf45_step(f, x, t, h):
    stages = []
    bad = np.zeros(x.shape[0], dtype=bool)
    for i in range(6):
        xi = x.copy()
        for j, a in enumerate(_A[i]):
            xi = xi + (a * h)[:, None] * stages[j]
        k, b = _rhs(f, xi, t + _C[i] * h)
        stages.append(k)
        bad |= b
    k = np.stack(stages)                                   # (6, m, n)
    x4 = x + h[:, None] * np.einsum("s,smn->mn", _B4, k)
    error = h[:, None] * np.einsum("s,smn->mn", _B5 - _B4, k)
    return x4, error, bad


def integrate_batch(
    f: VectorField,
    initial_states: np.ndarray,
    t0: float,
    tf: float,
    method: Method = RKF45(),
    max_steps: int = 200_000,
    defaults: NumericDefaults = DEFAULTS,
) -> List[Trajectory]:
    """
    多数の初期値を同時に積分する

    ‖x‖ < ε_conv/10 で収束として、‖x‖ > divergence_bound または非有限で発散として早期終了する
    """
    if not tf > t0:
        raise ValueError(f"tf must be greater than t0 (got t0={t0}, tf={tf})")
    x = np.array(initial_states, dtype=float, ndmin=2)
    if x.shape[0] == 0:
        return []
    if x.shape[1] != f.dimension:
        raise ValueError(f"initial states have dimension {x.shape[1]}, field has {f.dimension}")
    if isinstance(method, RK4) and method.h <= 0:
        raise ValueError("RK4 step must be positive")
    if isinstance(method, RKF45) and (method.rtol <= 0 and method.atol <= 0):
        raise ValueError("RKF45 needs a positive tolerance")

    m = x.shape[0]
    span = tf - t0
    t = np.full(m, float(t0))
    if isinstance(method, RK4):
        h = np.full(m, method.h)
    else:
        h = np.full(m, method.h0 if method.h0 is not None else 1e-3 * span)
    steps = np.zeros(m, dtype=int)
    reason = np.full(m, None, dtype=object)
    active = np.ones(m, dtype=bool)

    norms = np.linalg.norm(x, axis=1)
    early = norms < defaults.eps_conv / 10
    reason[early] = Termination.CONVERGED_EARLY
    active &= ~early

    history = [(np.arange(m), t.copy(), x.copy())]
    min_step = 1e-12 * span

    while active.any():
        idx = np.flatnonzero(active)
        ti, xi = t[idx], x[idx]
        hi = np.minimum(h[idx], tf - ti)
        steps[idx] += 1

        if isinstance(method, RK4):
            x_new, bad = _rk4_step(f, xi, ti, hi)
            accepted = np.ones(idx.shape[0], dtype=bool)
            h_next = h[idx]
        else:
            x_new, error, bad = _rkf45_step(f, xi, ti, hi)
            scale = method.atol + method.rtol * np.maximum(np.abs(xi), np.abs(x_new))
            with np.errstate(all="ignore"):
                err = np.max(np.abs(error) / scale, axis=1)
                factor = np.where(err > 0, 0.9 * err ** -0.2, _GROW)
            factor = np.clip(np.nan_to_num(factor, nan=_SHRINK), _SHRINK, _GROW)
            accepted = (err <= 1.0) & ~bad
            h_next = hi * factor

        finite = np.isfinite(x_new).all(axis=1) & ~bad
        new_norm = np.where(finite, np.linalg.norm(np.where(finite[:, None], x_new, 0.0), axis=1), np.inf)
        blown = (~finite | (new_norm > defaults.divergence_bound)) & (accepted | isinstance(method, RK4))
        if isinstance(method, RKF45):
            blown |= ~finite & (hi <= min_step)
        keep = accepted & ~blown

        if keep.any():
            done_idx = idx[keep]
            t[done_idx] = ti[keep] + hi[keep]
            x[done_idx] = x_new[keep]
            history.append((done_idx, t[done_idx].copy(), x[done_idx].copy()))

        for sel, why in (
            (blown, Termination.DIVERGED),
            (keep & (new_norm < defaults.eps_conv / 10), Termination.CONVERGED_EARLY),
            (keep & (t[idx] >= tf - 1e-12 * span), Termination.REACHED_TF),
        ):
            hit = idx[sel & active[idx]]
            reason[hit] = why
            active[hit] = False

        if isinstance(method, RKF45):
            h[idx] = h_next
            small = active[idx] & (h[idx] < min_step)
            reason[idx[small]] = Termination.STEP_UNDERFLOW
            active[idx[small]] = False

        exhausted = active[idx] & (steps[idx] >= max_steps)
        reason[idx[exhausted]] = Termination.MAX_STEPS
        active[idx[exhausted]] = False

    owner = np.concatenate([o for o, _, _ in history])
    times = np.concatenate([tt for _, tt, _ in history])
    states = np.concatenate([xx for _, _, xx in history])
    order = np.argsort(owner, kind="stable")
    splits = np.cumsum(np.bincount(owner, minlength=m))[:-1]
    per_time = np.split(times[order], splits)
    per_state = np.split(states[order], splits)

    trajectories = [
        Trajectory(per_time[i], per_state[i], method.name, method.params(), reason[i]) for i in range(m)
    ]
    counts = {r.value: int(sum(1 for tr in trajectories if tr.termination == r)) for r in Termination}
    logger.debug(f"Integrated {m} trajectories with {method.name}: {counts}")
    return trajectories


def integrate(
    f: VectorField,
    x0: Sequence[float],
    t0: float,
    tf: float,
    method: Method = RKF45(),
    max_steps: int = 200_000,
    defaults: NumericDefaults = DEFAULTS,
) -> Trajectory:
    """
    1本の軌道を積分する

    Args:
        f: ベクトル場
        x0: 初期値
        t0, tf: 時間区間
        method: RK4(h) または RKF45(rtol, atol)
        max_steps: 試行ステップ数の上限

    Returns:
        Trajectory
    """
    return integrate_batch(f, np.asarray(x0, dtype=float)[None, :], t0, tf, method, max_steps, defaults)[0]


def classify(
    trajectory: Trajectory,
    target: Optional[Sequence[float]] = None,
    eps_conv: float = DEFAULTS.eps_conv,
    window_fraction: float = DEFAULTS.window_fraction,
    divergence_bound: float = DEFAULTS.divergence_bound,
) -> ConvergenceVerdict:
    """
    軌道の収束を分類する

    末尾の window_fraction の区間でずっと target から eps_conv 未満なら収束、
    最終ノルムが divergence_bound を超えれば（または発散で終了していれば）発散、それ以外は有界非収束
    """
    if trajectory.times.shape[0] == 0:
        raise ValueError("trajectory is empty")
    n = trajectory.states.shape[1]
    target = np.zeros(n) if target is None else np.asarray(target, dtype=float)
    final_norm = trajectory.final_norm
    t_end = float(trajectory.times[-1])

    def verdict(cls: ConvergenceClass) -> ConvergenceVerdict:
        return ConvergenceVerdict(cls, tuple(float(v) for v in target), final_norm, t_end)

    if trajectory.termination == Termination.DIVERGED or final_norm > divergence_bound:
        return verdict(ConvergenceClass.DIVERGED)

    distances = np.linalg.norm(trajectory.states - target, axis=1)
    if trajectory.termination == Termination.CONVERGED_EARLY and distances[-1] < eps_conv:
        return verdict(ConvergenceClass.CONVERGED)

    t_start = float(trajectory.times[0])
    window_start = t_end - window_fraction * (t_end - t_start)
    in_window = trajectory.times >= window_start
    if np.all(distances[in_window] < eps_conv):
        return verdict(ConvergenceClass.CONVERGED)
    return verdict(ConvergenceClass.BOUNDED_NONCONVERGENT)


@dataclass
class SweepResult:
    """初期値ごとの積分と分類"""
    x0: Tuple[float, ...]
    trajectory: Trajectory
    verdict: ConvergenceVerdict


def initial_grid(box: Sequence[Tuple[float, float]], per_axis: int) -> np.ndarray:
    """箱の上のテンソル格子（per_axis = 0 なら空）"""
    n = len(box)
    if per_axis <= 0:
        return np.empty((0, n))
    axes = [np.linspace(lo, hi, per_axis) if per_axis > 1 else np.array([0.5 * (lo + hi)]) for lo, hi in box]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def sweep(
    f: VectorField,
    initial_states: np.ndarray,
    tf: float,
    method: Method = RKF45(),
    t0: float = 0.0,
    target: Optional[Sequence[float]] = None,
    defaults: NumericDefaults = DEFAULTS,
) -> List[SweepResult]:
    """
    初期値の集合をまとめて積分・分類する（出力は入力順）
    """
    initial_states = np.array(initial_states, dtype=float, ndmin=2)
    if initial_states.shape[0] == 0:
        return []
    logger.info(f"Sweeping {initial_states.shape[0]} initial conditions to tf={tf} with {method.name}")
    trajectories = integrate_batch(f, initial_states, t0, tf, method, defaults=defaults)
    results = [
        SweepResult(
            tuple(float(v) for v in x0),
            traj,
            classify(traj, target, defaults.eps_conv, defaults.window_fraction, defaults.divergence_bound),
        )
        for x0, traj in zip(initial_states, trajectories)
    ]
    summary = {c.value: sum(1 for r in results if r.verdict.cls == c) for c in ConvergenceClass}
    logger.info(f"Sweep verdicts: {summary}")
    return results


@dataclass
class CrossValidation:
    """十分条件の判定とシミュレーションの突き合わせ"""
    applicable: bool
    level: Optional[float]
    n_checked: int
    failures: List[Tuple[float, ...]] = field(default_factory=list)

    @property
    def agrees(self) -> bool:
        return not self.failures


def _boundary_minimum(s_field: ScalarField, domain: Domain, t: float, samples_per_face: int = 512) -> float:
    rng = np.random.default_rng(0)
    lower, upper = domain.lower, domain.upper
    n = domain.dimension
    best = np.inf
    for axis in range(n):
        for bound in (lower[axis], upper[axis]):
            points = rng.uniform(lower, upper, size=(samples_per_face, n))
            points[:, axis] = bound
            values, bad = evaluate_batch(s_field.body, points, np.full(samples_per_face, t))
            if (~bad).any():
                best = min(best, float(values[~bad].min()))
    return best


def cross_validate(
    report: CheckReport,
    results: Sequence[SweepResult],
    s_field: ScalarField,
    domain: Domain,
    level: Optional[float] = None,
    t0: float = 0.0,
) -> CrossValidation:
    """
    厳密に成立した十分条件と、対応する劣位集合から出発した軌道の収束を突き合わせる

    level を省略すると箱の境界上の S の最小値（箱に収まる最大の劣位集合）を使う
    軸ゼロ述語に一致する初期値は対象外
    """
    if report.verdict != Verdict.HOLDS_STRICT:
        return CrossValidation(False, None, 0)
    if level is None:
        level = _boundary_minimum(s_field, domain, t0)

    starts = np.array([r.x0 for r in results], dtype=float).reshape(len(results), domain.dimension)
    if starts.shape[0] == 0:
        return CrossValidation(True, level, 0)
    values, bad = evaluate_batch(s_field.body, starts, np.full(starts.shape[0], t0))
    inside = ~bad & (values < level) & ~domain.predicate_mask(starts)

    failures = [
        r.x0 for r, ok in zip(results, inside) if ok and r.verdict.cls != ConvergenceClass.CONVERGED
    ]
    if failures:
        logger.warning(f"{len(failures)} trajectories inside the certified set did not converge")
    return CrossValidation(True, float(level), int(inside.sum()), failures)
