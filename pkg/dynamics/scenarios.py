"""
組み込みシナリオモジュール

5つの例題の系・証明書・パラメータ関数・検証領域・期待される判定を
実行可能なフィクスチャとして定義する。式はテンプレートで持ち、
{alpha} やパラメータ関数（{g}, {phi1} など）を構文解析の前に代入する
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from loguru import logger

from core.config import DEFAULTS
from dynamics.expr import evaluate_batch, format_number, parse
from dynamics.fields import ControlledSystem, ScalarField, VectorField, WeightKind, WeightSpec
from dynamics.ode import RK4, RKF45, Method
from dynamics.sampling import AxisZeroPredicate, Domain, SamplingPlan


class UnknownScenarioError(KeyError):
    """未知のシナリオ名・制御則名"""


Box = Tuple[Tuple[float, float], ...]


def _cube(n: int, half: float) -> Box:
    return tuple((-half, half) for _ in range(n))


@dataclass(frozen=True)
class IntegralSetup:
    """積分条件の設定"""
    box: Box
    t_range: Tuple[float, float]
    levels: Tuple[float, ...]
    epsilon: float = DEFAULTS.epsilon
    samples: int = DEFAULTS.integral_samples


@dataclass(frozen=True)
class SimulationSetup:
    """軌道シミュレーションの設定"""
    box: Box
    per_axis: int = 9
    tf: float = DEFAULTS.tf
    method: str = "rkf45"
    rtol: float = 1e-6
    atol: float = 1e-9
    h: float = 0.01
    initial_states: Tuple[Tuple[float, ...], ...] = ()

    def integrator(self) -> Method:
        if self.method == "rk4":
            return RK4(self.h)
        return RKF45(self.rtol, self.atol)


@dataclass(frozen=True)
class LinearSetup:
    """線形系の行列不等式の設定（要素は t のテンプレート）"""
    a: Tuple[Tuple[str, ...], ...]
    p: Tuple[Tuple[str, ...], ...]
    t_samples: Tuple[float, ...]


@dataclass(frozen=True)
class ExpectedVerdict:
    """
    期待される判定

    verdict は判定の値（"holds" は厳密・非厳密のどちらでもよい）
    params / control はシナリオの変種を指定する
    """
    check: str
    verdict: str
    alpha: Optional[float] = None
    params: Tuple[Tuple[str, str], ...] = ()
    control: Optional[str] = None
    note: str = ""

    def matches(self, verdict: str) -> bool:
        if self.verdict == "holds":
            return verdict in ("holds-strict", "holds-nonstrict")
        return verdict == self.verdict


@dataclass(frozen=True)
class Scenario:
    """
    検証シナリオ

    components（自律でない系）か drift / input_matrix / control（制御系）のどちらかを持つ
    """
    name: str
    dimension: int
    certificate: str
    alpha: float
    box: Box
    description: str = ""
    params: Tuple[Tuple[str, str], ...] = ()
    components: Optional[Tuple[str, ...]] = None
    drift: Optional[Tuple[str, ...]] = None
    input_matrix: Optional[Tuple[Tuple[str, ...], ...]] = None
    control: Optional[Tuple[str, ...]] = None
    control_name: Optional[str] = None
    controls: Tuple[Tuple[str, Tuple[str, ...]], ...] = ()
    weight: str = WeightKind.S.value
    mu: Optional[str] = None
    t_max: float = DEFAULTS.t_max
    epsilon: float = DEFAULTS.epsilon
    exclusions: Tuple[str, ...] = ()
    exclusion_tol: float = DEFAULTS.exclusion_tol
    sampling: SamplingPlan = SamplingPlan()
    integral: Optional[IntegralSetup] = None
    simulation: Optional[SimulationSetup] = None
    linear: Optional[LinearSetup] = None
    alpha_sweep: Tuple[float, ...] = (1.0, 2.0, 3.0, 5.0)
    expected: Tuple[ExpectedVerdict, ...] = ()
    bounds: Tuple[Tuple[str, object], ...] = ()
    notes: Tuple[str, ...] = ()

    # --- テンプレート ---

    def render(self, template: str) -> str:
        """{alpha} とパラメータ関数を代入する"""
        values = {name: value for name, value in self.params}
        try:
            return template.format(alpha=format_number(self.alpha), **values)
        except KeyError as e:
            raise ValueError(f"template {template!r} refers to unknown parameter {e}") from e

    @property
    def is_controlled(self) -> bool:
        return self.drift is not None

    def vector_field(self) -> VectorField:
        """系のベクトル場（制御系なら閉ループ）"""
        if self.is_controlled:
            return self.controlled_system().closed_loop()
        return VectorField.parse([self.render(c) for c in self.components], self.dimension)

    def controlled_system(self) -> ControlledSystem:
        if not self.is_controlled:
            raise ValueError(f"scenario {self.name} is not a controlled system")
        return ControlledSystem.parse(
            [self.render(c) for c in self.drift],
            [[self.render(g) for g in row] for row in self.input_matrix],
            [self.render(u) for u in self.control],
            self.dimension,
        )

    def certificate_field(self) -> ScalarField:
        return ScalarField.parse(self.render(self.certificate), self.dimension)

    def weight_spec(self) -> WeightSpec:
        kind = WeightKind(self.weight)
        if kind == WeightKind.MU:
            return WeightSpec.explicit(parse(self.render(self.mu), self.dimension))
        return WeightSpec(kind)

    def domain(self) -> Domain:
        return Domain(
            box=self.box,
            t_range=(0.0, self.t_max),
            epsilon=self.epsilon,
            exclusions=tuple(
                AxisZeroPredicate.parse(e, self.dimension, self.exclusion_tol) for e in self.exclusions
            ),
        )

    def plan(self, seed: Optional[int] = None) -> SamplingPlan:
        return self.sampling if seed is None else replace(self.sampling, seed=seed)

    # --- 変種 ---

    def with_params(self, overrides: Mapping[str, str]) -> "Scenario":
        known = dict(self.params)
        unknown = set(overrides) - set(known)
        if unknown:
            raise ValueError(f"scenario {self.name} has no parameters {sorted(unknown)}")
        known.update({k: str(v) for k, v in overrides.items()})
        return attach_bounds(replace(self, params=tuple(known.items())))

    def with_alpha(self, alpha: float) -> "Scenario":
        if alpha <= 0:
            raise ValueError(f"alpha must be positive, got {alpha}")
        return attach_bounds(replace(self, alpha=float(alpha)))

    def with_control(self, name: str) -> "Scenario":
        laws = dict(self.controls)
        if name not in laws:
            raise UnknownScenarioError(f"scenario {self.name} has no control law {name!r} (known: {sorted(laws)})")
        return replace(self, control=laws[name], control_name=name)

    def variant(self, entry: ExpectedVerdict) -> "Scenario":
        """期待判定の行が指定する変種"""
        scenario = self
        if entry.params:
            scenario = scenario.with_params(dict(entry.params))
        if entry.alpha is not None:
            scenario = scenario.with_alpha(entry.alpha)
        if entry.control is not None:
            scenario = scenario.with_control(entry.control)
        return scenario


# ---------------------------------------------------------------------------
# パラメータ関数の上下限
# ---------------------------------------------------------------------------

def _time_profile(scenario: Scenario, name: str, points: int = 2001) -> np.ndarray:
    expr = parse(scenario.render("{" + name + "}"), 0)
    times = np.linspace(0.0, scenario.t_max, points)
    values, bad = evaluate_batch(expr, np.empty((points, 0)), times)
    return np.where(bad, np.nan, values)


def _example1_bounds(scenario: Scenario) -> Dict[str, object]:
    phi = [_time_profile(scenario, f"phi{i}") for i in (1, 2, 3)]
    phi0 = phi[0] + phi[1] + 3.0 * phi[2]
    with np.errstate(all="ignore"):
        ratios = [np.where(p > 0, phi0 / p, np.inf) for p in phi]
    bound = 0.5 * float(np.nanmax(np.stack(ratios)))
    return {"alpha_bound": bound, "alpha_meets_bound": bool(scenario.alpha >= bound)}


def _example3_bounds(scenario: Scenario) -> Dict[str, object]:
    phi1 = _time_profile(scenario, "phi1")
    phi2 = _time_profile(scenario, "phi2")
    g1 = _time_profile(scenario, "g1")
    factor = 2.0 * scenario.alpha + 3.0
    phi2_bound = 4.0 / factor
    return {
        "min_phi2": float(np.nanmin(phi2)),
        "phi2_bound": phi2_bound,
        "phi2_bound_holds": bool(np.nanmin(phi2) > phi2_bound),
        "g1_bound_holds": bool(np.nanmax(g1 - factor * phi1) < 0),
    }


_BOUNDS = {"example1": _example1_bounds, "example3": _example3_bounds}


def attach_bounds(scenario: Scenario) -> Scenario:
    """名前に対応する上下限の診断値を付ける（対応がなければそのまま）"""
    compute = _BOUNDS.get(scenario.name)
    if compute is None:
        return scenario
    return replace(scenario, bounds=tuple(compute(scenario).items()))


# ---------------------------------------------------------------------------
# 例題
# ---------------------------------------------------------------------------

def _example1() -> Scenario:
    return Scenario(
        name="example1",
        dimension=3,
        description="3次元の非自律系。g = 1/(t+1) の減衰と φ の時間変動を持つ",
        params=(
            ("phi1", "2 + sin(2*t)"),
            ("phi2", "1.5 + cos(3*t)"),
            ("phi3", "t/(t + 1)"),
            ("g", "1/(t + 1)"),
        ),
        components=(
            "({g})*x2 - ({phi1})*x1*x3^2",
            "-x1 - ({phi2})*x2*x3^2",
            "-({phi3})*x3^3",
        ),
        certificate="(x1^2 + ({g})*x2^2 + x3^2)^{alpha}",
        alpha=1.0,
        box=_cube(3, 1.0),
        t_max=20.0,
        exclusions=("x2=0", "x3=0"),
        exclusion_tol=1e-3,
        weight=WeightKind.S.value,
        integral=IntegralSetup(
            box=((-1.1, 1.1), (-5.0, 5.0), (-1.1, 1.1)),
            t_range=(0.0, 20.0),
            levels=(0.25, 0.5, 1.0),
        ),
        simulation=SimulationSetup(
            box=_cube(3, 1.0),
            per_axis=5,
            tf=50.0,
            initial_states=((1.0, 0.0, 0.0), (0.5, 0.0, 0.0)),
        ),
        expected=(
            ExpectedVerdict("th3-case1", "holds-strict", alpha=1.0),
            ExpectedVerdict("th3-case1", "holds-strict", alpha=2.0),
            ExpectedVerdict("th3-case1", "holds-strict", alpha=3.0),
            ExpectedVerdict("th3-case1", "holds-strict", alpha=1.0, params=(("g", "1"),)),
            ExpectedVerdict("th3-case2", "violated", alpha=5.0, note="φ3(0) = 0 makes the α bound infinite"),
            ExpectedVerdict("th3-case3", "violated", alpha=5.0, note="φ3(0) = 0 makes the α bound infinite"),
            ExpectedVerdict(
                "th3-case2",
                "holds-strict",
                alpha=5.0,
                params=(("phi1", "2"), ("phi2", "2"), ("phi3", "1")),
                note="constant φ give the bound 3.5",
            ),
            ExpectedVerdict(
                "th3-case3",
                "holds-strict",
                alpha=5.0,
                params=(("phi1", "2"), ("phi2", "2"), ("phi3", "1")),
            ),
            ExpectedVerdict("th2-case1", "consistent", alpha=1.0),
            ExpectedVerdict("positivity", "holds-strict", alpha=2.0),
        ),
        notes=(
            "φ0 = φ1 + φ2 + 3φ3 is used both in the S⁻¹ expansion and in the α bound",
            "with φ3 = t/(t+1) the bound 0.5·sup φ0/φ3 is infinite because φ3(0) = 0",
            "trajectories starting with x2 = x3 = 0 and g = 1 stay on a cycle",
        ),
    )


def _example2() -> Scenario:
    return Scenario(
        name="example2",
        dimension=3,
        description="平衡点 (0,0,0) と (1,0,0) を持つ系。x1 >= 1 の半軸からの軌道は原点に収束しない",
        params=(("g", "1/(t + 1)"),),
        components=(
            "-x1 + x1^2 - (1/({g}))*x2^2 - x3^2",
            "-x2 + 2*x1*x2",
            "-x3 + 2*x1*x3",
        ),
        certificate="(({g})*x1^2 + x2^2 + ({g})*x3^2)^{alpha}",
        alpha=3.0,
        box=_cube(3, 2.0),
        t_max=20.0,
        weight=WeightKind.INV_S.value,
        integral=IntegralSetup(
            box=_cube(3, 2.0),
            t_range=(0.0, 2.0),
            levels=(1.0, 2.0),
            epsilon=0.25,
            samples=50_000,
        ),
        simulation=SimulationSetup(
            box=_cube(3, 0.5),
            per_axis=5,
            tf=50.0,
            initial_states=((1.5, 0.0, 0.0),),
        ),
        expected=(
            ExpectedVerdict("th2-case2", "consistent", alpha=3.0),
            ExpectedVerdict("th3-case2", "violated", alpha=3.0, note="∇·f = 6x1 - 3 > 0 for x1 > 0.5"),
            ExpectedVerdict("th3-case1", "violated", alpha=3.0),
            ExpectedVerdict("th3-case3", "violated", alpha=3.0),
        ),
        notes=("the drift keeps -(1/g)·x2², which is -(t+1)·x2² for g = 1/(t+1)",),
    )


def _example3() -> Scenario:
    return Scenario(
        name="example3",
        dimension=3,
        description="時間変動する係数 φ1..φ3, g1, g2 を持つ3次元系",
        params=(
            ("phi1", "2 + sin(t)"),
            ("phi2", "1.5 + cos(3*t)"),
            ("phi3", "1 + 0.5*cos(2*t)"),
            ("g1", "t/(t + 1)"),
            ("g2", "1/(t + 1)"),
        ),
        components=(
            "-4*x1*x2^2 - ({phi1})*x1^3",
            "({g1})*x1^2*x2 - ({phi2})*x2^3 - ({g2})*x2*x3^2",
            "-({phi3})*x3^3 + 8*x2^2*x3",
        ),
        certificate="((1/8)*({g1})*x1^2 + (1/2)*x2^2 + (1/16)*({g2})*x3^2)^{alpha}",
        alpha=1.0,
        box=_cube(3, 1.0),
        t_max=20.0,
        weight=WeightKind.S.value,
        integral=IntegralSetup(
            box=_cube(3, 4.0),
            t_range=(1.0, 10.0),
            levels=(0.25, 0.5),
        ),
        simulation=SimulationSetup(box=_cube(3, 1.0), per_axis=5, tf=50.0),
        expected=(
            ExpectedVerdict("th3-case1", "violated", alpha=1.0, note="g1 = t/(t+1) increases"),
            ExpectedVerdict("th3-case2", "violated", alpha=1.0),
            ExpectedVerdict("th3-case2", "violated", alpha=2.0),
            ExpectedVerdict("th3-case3", "violated", alpha=1.0),
            ExpectedVerdict("th3-case3", "violated", alpha=2.0, note="fails once g2 = 1/(t+1) is small"),
            ExpectedVerdict("positivity", "violated", alpha=1.0, note="S(·,0) vanishes on the x1 axis"),
        ),
        notes=(
            "the parameter list names φ1 twice; the third function 1 + 0.5cos(2t) is used as φ3",
            "g1 = t/(t+1) is increasing, so the certificate loses definiteness at t = 0",
        ),
    )


def _example4() -> Scenario:
    return Scenario(
        name="example4",
        dimension=2,
        description="線形系 ẋ = A(t)x と証明書 S = (xᵀP(t)x)^α",
        params=(("p", "1"),),
        components=("-x1", "-2*x2"),
        certificate="(({p})*(x1^2 + x2^2))^{alpha}",
        alpha=2.0,
        box=_cube(2, 2.0),
        t_max=10.0,
        weight=WeightKind.S.value,
        integral=IntegralSetup(box=_cube(2, 1.5), t_range=(0.0, 10.0), levels=(0.25, 0.5, 1.0)),
        simulation=SimulationSetup(box=_cube(2, 2.0), per_axis=9, tf=50.0),
        linear=LinearSetup(
            a=(("-1", "0"), ("0", "-2")),
            p=(("{p}", "0"), ("0", "{p}")),
            t_samples=tuple(float(t) for t in np.linspace(0.0, 10.0, 11)),
        ),
        expected=(
            ExpectedVerdict("linear", "holds-strict", alpha=2.0),
            ExpectedVerdict("linear", "violated", alpha=1.0),
            ExpectedVerdict("th3-case3", "holds-strict", alpha=2.0),
            ExpectedVerdict("th3-case3", "violated", alpha=1.0),
        ),
        notes=("the matrix inequalities and case 3 on f = A x must agree",),
    )


def _example5() -> Scenario:
    return Scenario(
        name="example5",
        dimension=2,
        description="制御系 ẋ = ξ + g·u。d ∈ {0, 1} と3つの制御則",
        params=(("d", "0"), ("g", "sin(t)^2")),
        drift=("({d})*x2 - x1*x2^2", "-({g})*x2"),
        input_matrix=(("0",), ("1",)),
        control=("-x2^3",),
        control_name="cubic",
        controls=(
            ("open_loop", ("0",)),
            ("cubic", ("-x2^3",)),
            ("cubic_cancel", ("-x1 - x2^3",)),
        ),
        certificate="(x1^2 + x2^2)^{alpha}",
        alpha=1.0,
        box=_cube(2, 2.0),
        t_max=10.0,
        exclusions=("x2=0",),
        exclusion_tol=1e-3,
        weight=WeightKind.S.value,
        integral=IntegralSetup(box=_cube(2, 1.5), t_range=(0.0, 10.0), levels=(0.25, 0.5, 1.0)),
        simulation=SimulationSetup(box=_cube(2, 2.0), per_axis=9, tf=100.0),
        expected=(
            ExpectedVerdict("th4-case1", "holds-strict", control="cubic", params=(("d", "0"),)),
            ExpectedVerdict("th4-case1", "holds-strict", control="cubic_cancel", params=(("d", "1"),)),
            ExpectedVerdict("th4-case1", "holds-nonstrict", control="open_loop", params=(("d", "0"),)),
            ExpectedVerdict("th4-case1", "violated", control="open_loop", params=(("d", "1"),)),
            ExpectedVerdict("th4-case3", "violated", control="cubic", params=(("d", "0"),)),
            ExpectedVerdict("th4-case3", "violated", control="cubic_cancel", params=(("d", "1"),)),
            ExpectedVerdict("th4-case3", "violated", control="open_loop", params=(("d", "1"),)),
        ),
        notes=(
            "∇·(S⁻¹f) is negative near the x1 axis whenever sin²t > 0, so case 3 fails for every law",
            "with d = 0 and u = -x2³ the x1 axis is a line of equilibria",
            "with d = 1 and u = -x1 - x2³ trajectories converge slowly, hence tf = 100",
        ),
    )


_BUILDERS = {
    "example1": _example1,
    "example2": _example2,
    "example3": _example3,
    "example4": _example4,
    "example5": _example5,
}


def names() -> List[str]:
    """組み込みシナリオ名の一覧"""
    return sorted(_BUILDERS)


def builtin(
    name: str,
    params: Optional[Mapping[str, str]] = None,
    alpha: Optional[float] = None,
    control: Optional[str] = None,
) -> Scenario:
    """
    組み込みシナリオを取得する

    Args:
        name: "example1" から "example5"
        params: パラメータ関数の上書き（例: {"g": "1"}）
        alpha: 証明書の指数
        control: 制御則の名前（example5 のみ）

    Raises:
        UnknownScenarioError: 未知の名前
    """
    builder = _BUILDERS.get(name)
    if builder is None:
        raise UnknownScenarioError(f"unknown scenario {name!r} (known: {', '.join(names())})")
    scenario = attach_bounds(builder())
    if params:
        scenario = scenario.with_params(params)
    if alpha is not None:
        scenario = scenario.with_alpha(alpha)
    if control is not None:
        scenario = scenario.with_control(control)
    logger.debug(f"Loaded scenario {scenario.name} (alpha={scenario.alpha}, control={scenario.control_name})")
    return scenario
