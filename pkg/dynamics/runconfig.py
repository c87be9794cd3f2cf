"""
実行設定モジュール

TOML 形式の実行設定を Pydantic で検証し、Scenario との相互変換を行う
未知のキーは extra="forbid" で拒否する

例:
    [system]
    dimension = 2
    components = ["-x1", "-2*x2"]

    [certificate]
    S = "(x1^2 + x2^2)^{alpha}"
    alpha = 2.0

    [domain]
    box = [[-2.0, 2.0], [-2.0, 2.0]]

    [checks]
    requests = ["th3-case3"]
"""
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import tomli_w
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from core.config import DEFAULTS, NumericDefaults
from dynamics.expr import EvaluationDomainError, ExpressionSyntaxError
from dynamics.fields import WeightKind
from dynamics.runner import parse_check
from dynamics.sampling import SamplingPlan
from dynamics.scenarios import (
    ExpectedVerdict,
    IntegralSetup,
    LinearSetup,
    Scenario,
    SimulationSetup,
    attach_bounds,
)


class ConfigError(ValueError):
    """実行設定の読み込み・検証エラー"""


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SystemSection(_Section):
    """
    [system] 系の定義

    components（ẋ = f(x, t)）か drift / input_matrix / control（制御系）のどちらか
    """
    dimension: int = Field(ge=1)
    components: Optional[List[str]] = None
    drift: Optional[List[str]] = None
    input_matrix: Optional[List[List[str]]] = None
    control: Optional[List[str]] = None
    control_name: Optional[str] = None
    controls: Dict[str, List[str]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _one_form(self) -> "SystemSection":
        controlled = self.drift is not None
        if controlled == (self.components is not None):
            raise ValueError("give either components or drift/input_matrix/control")
        if controlled and (self.input_matrix is None or self.control is None):
            raise ValueError("a controlled system needs drift, input_matrix and control")
        for name, values in (("components", self.components), ("drift", self.drift)):
            if values is not None and len(values) != self.dimension:
                raise ValueError(f"{name} has {len(values)} entries, expected {self.dimension}")
        return self


class CertificateSection(_Section):
    """[certificate] 証明書 S と重み"""
    S: str
    alpha: float = Field(default=1.0, gt=0)
    weight: WeightKind = WeightKind.S
    mu: Optional[str] = None
    alpha_sweep: List[float] = Field(default_factory=lambda: [1.0, 2.0, 3.0, 5.0])

    @model_validator(mode="after")
    def _mu_given(self) -> "CertificateSection":
        if self.weight == WeightKind.MU and not self.mu:
            raise ValueError("weight = 'mu' needs an explicit mu expression")
        return self


class DomainSection(_Section):
    """[domain] 検証領域とサンプリング"""
    box: List[Tuple[float, float]]
    epsilon: float = Field(default=DEFAULTS.epsilon, ge=0)
    exclusions: List[str] = Field(default_factory=list)
    exclusion_tol: float = Field(default=DEFAULTS.exclusion_tol, ge=0)
    t_max: float = Field(default=DEFAULTS.t_max, gt=0)
    grid_per_axis: int = Field(default=DEFAULTS.grid_per_axis, ge=0)
    grid_t: int = Field(default=DEFAULTS.grid_t, ge=0)
    samples: int = Field(default=DEFAULTS.random_samples, ge=0)
    seed: int = Field(default=0, ge=0)
    chunk_size: int = Field(default=DEFAULTS.chunk_size, ge=1)


class IntegralSection(_Section):
    """[checks.integral] 積分条件（C_list はレベルの一覧）"""
    box: List[Tuple[float, float]]
    t_range: Tuple[float, float]
    C_list: List[float] = Field(min_length=1)
    epsilon: float = Field(default=DEFAULTS.epsilon, ge=0)
    samples: int = Field(default=DEFAULTS.integral_samples, ge=1)


class ChecksSection(_Section):
    """[checks] 実行する条件"""
    requests: List[str] = Field(default_factory=list)
    integral: Optional[IntegralSection] = None


class LinearSection(_Section):
    """[linear] 線形系の A(t), P(t)"""
    a: List[List[str]]
    p: List[List[str]]
    t_samples: List[float] = Field(min_length=1)


class SimulateSection(_Section):
    """[simulate] 軌道シミュレーション"""
    box: List[Tuple[float, float]]
    grid: int = Field(default=9, ge=0)
    tf: float = Field(default=DEFAULTS.tf, gt=0)
    method: str = Field(default="rkf45", pattern="^(rk4|rkf45)$")
    rtol: float = Field(default=1e-6, gt=0)
    atol: float = Field(default=1e-9, gt=0)
    h: float = Field(default=0.01, gt=0)
    initial_states: List[List[float]] = Field(default_factory=list)


class ExpectedEntry(_Section):
    """[[expected]] 期待される判定"""
    check: str
    verdict: str
    alpha: Optional[float] = None
    params: Dict[str, str] = Field(default_factory=dict)
    control: Optional[str] = None
    note: str = ""


class RunConfig(_Section):
    """実行設定の全体"""
    name: str = "custom"
    description: str = ""
    system: SystemSection
    params: Dict[str, str] = Field(default_factory=dict)
    certificate: CertificateSection
    domain: DomainSection
    checks: ChecksSection = Field(default_factory=ChecksSection)
    linear: Optional[LinearSection] = None
    simulate: Optional[SimulateSection] = None
    defaults: Dict[str, Union[int, float]] = Field(default_factory=dict)
    expected: List[ExpectedEntry] = Field(default_factory=list)
    notes: List[str] = Field(default_factory=list)

    @model_validator(mode="after")
    def _consistent(self) -> "RunConfig":
        n = self.system.dimension
        if len(self.domain.box) != n:
            raise ValueError(f"domain.box has {len(self.domain.box)} intervals, expected {n}")
        for request in self.checks.requests:
            parse_check(request)
        unknown = set(self.defaults) - set(NumericDefaults.model_fields)
        if unknown:
            raise ValueError(f"unknown defaults {sorted(unknown)}")
        return self

    def numeric_defaults(self) -> NumericDefaults:
        """[defaults] の上書きを反映した既定値テーブル"""
        return NumericDefaults.model_validate({**DEFAULTS.model_dump(), **self.defaults})

    # --- Scenario との相互変換 ---

    def to_scenario(self) -> Scenario:
        """
        Scenario に変換し、全ての式を構文解析して確かめる

        Raises:
            ConfigError: 式の構文エラー・テンプレートの未知パラメータ
        """
        system, cert, domain = self.system, self.certificate, self.domain
        integral = None
        if self.checks.integral is not None:
            section = self.checks.integral
            integral = IntegralSetup(
                box=tuple(tuple(b) for b in section.box),
                t_range=tuple(section.t_range),
                levels=tuple(section.C_list),
                epsilon=section.epsilon,
                samples=section.samples,
            )
        simulation = None
        if self.simulate is not None:
            sim = self.simulate
            simulation = SimulationSetup(
                box=tuple(tuple(b) for b in sim.box),
                per_axis=sim.grid,
                tf=sim.tf,
                method=sim.method,
                rtol=sim.rtol,
                atol=sim.atol,
                h=sim.h,
                initial_states=tuple(tuple(x) for x in sim.initial_states),
            )
        linear = None
        if self.linear is not None:
            linear = LinearSetup(
                a=tuple(tuple(row) for row in self.linear.a),
                p=tuple(tuple(row) for row in self.linear.p),
                t_samples=tuple(self.linear.t_samples),
            )
        scenario = Scenario(
            name=self.name,
            dimension=system.dimension,
            certificate=cert.S,
            alpha=cert.alpha,
            box=tuple(tuple(b) for b in domain.box),
            description=self.description,
            params=tuple(self.params.items()),
            components=tuple(system.components) if system.components is not None else None,
            drift=tuple(system.drift) if system.drift is not None else None,
            input_matrix=(
                tuple(tuple(row) for row in system.input_matrix) if system.input_matrix is not None else None
            ),
            control=tuple(system.control) if system.control is not None else None,
            control_name=system.control_name,
            controls=tuple((k, tuple(v)) for k, v in system.controls.items()),
            weight=cert.weight.value,
            mu=cert.mu,
            t_max=domain.t_max,
            epsilon=domain.epsilon,
            exclusions=tuple(domain.exclusions),
            exclusion_tol=domain.exclusion_tol,
            sampling=SamplingPlan(
                grid_per_axis=domain.grid_per_axis,
                grid_t=domain.grid_t,
                random_samples=domain.samples,
                seed=domain.seed,
                chunk_size=domain.chunk_size,
            ),
            integral=integral,
            simulation=simulation,
            linear=linear,
            alpha_sweep=tuple(cert.alpha_sweep),
            expected=tuple(
                ExpectedVerdict(
                    check=e.check,
                    verdict=e.verdict,
                    alpha=e.alpha,
                    params=tuple(e.params.items()),
                    control=e.control,
                    note=e.note,
                )
                for e in self.expected
            ),
            notes=tuple(self.notes),
        )
        try:
            scenario.vector_field()
            scenario.certificate_field()
            if scenario.weight == WeightKind.MU.value:
                scenario.weight_spec()
            scenario.domain()
        except (ExpressionSyntaxError, EvaluationDomainError, ValueError) as e:
            raise ConfigError(f"scenario {self.name}: {e}") from e
        return attach_bounds(scenario)

    @classmethod
    def from_scenario(cls, scenario: Scenario, requests: Optional[List[str]] = None) -> "RunConfig":
        """Scenario を実行設定に変換する（書き出し用）"""
        plan = scenario.sampling
        system = {"dimension": scenario.dimension}
        if scenario.is_controlled:
            system.update(
                drift=list(scenario.drift),
                input_matrix=[list(row) for row in scenario.input_matrix],
                control=list(scenario.control),
                control_name=scenario.control_name,
                controls={k: list(v) for k, v in scenario.controls},
            )
        else:
            system["components"] = list(scenario.components)
        data = {
            "name": scenario.name,
            "description": scenario.description,
            "system": system,
            "params": dict(scenario.params),
            "certificate": {
                "S": scenario.certificate,
                "alpha": scenario.alpha,
                "weight": scenario.weight,
                "mu": scenario.mu,
                "alpha_sweep": list(scenario.alpha_sweep),
            },
            "domain": {
                "box": [list(b) for b in scenario.box],
                "epsilon": scenario.epsilon,
                "exclusions": list(scenario.exclusions),
                "exclusion_tol": scenario.exclusion_tol,
                "t_max": scenario.t_max,
                "grid_per_axis": plan.grid_per_axis,
                "grid_t": plan.grid_t,
                "samples": plan.random_samples,
                "seed": plan.seed,
                "chunk_size": plan.chunk_size,
            },
            "checks": {"requests": list(requests or [])},
            "expected": [
                {
                    "check": e.check,
                    "verdict": e.verdict,
                    "alpha": e.alpha,
                    "params": dict(e.params),
                    "control": e.control,
                    "note": e.note,
                }
                for e in scenario.expected
            ],
            "notes": list(scenario.notes),
        }
        if scenario.integral is not None:
            data["checks"]["integral"] = {
                "box": [list(b) for b in scenario.integral.box],
                "t_range": list(scenario.integral.t_range),
                "C_list": list(scenario.integral.levels),
                "epsilon": scenario.integral.epsilon,
                "samples": scenario.integral.samples,
            }
        if scenario.simulation is not None:
            sim = scenario.simulation
            data["simulate"] = {
                "box": [list(b) for b in sim.box],
                "grid": sim.per_axis,
                "tf": sim.tf,
                "method": sim.method,
                "rtol": sim.rtol,
                "atol": sim.atol,
                "h": sim.h,
                "initial_states": [list(x) for x in sim.initial_states],
            }
        if scenario.linear is not None:
            data["linear"] = {
                "a": [list(row) for row in scenario.linear.a],
                "p": [list(row) for row in scenario.linear.p],
                "t_samples": list(scenario.linear.t_samples),
            }
        return cls.model_validate(data)

    def to_toml(self) -> str:
        """TOML 文字列にする（None の項目は書かない）"""
        return tomli_w.dumps(self.model_dump(mode="json", exclude_none=True))


def loads(text: str) -> RunConfig:
    """
    TOML 文字列から実行設定を読み込む

    Raises:
        ConfigError: TOML の構文エラー・スキーマ違反
    """
    try:
        return RunConfig.model_validate(tomllib.loads(text))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"invalid TOML: {e}") from e
    except ValidationError as e:
        raise ConfigError(f"invalid run config:\n{e}") from e


def load(path: Union[str, Path]) -> RunConfig:
    """
    TOML ファイルから実行設定を読み込む

    Raises:
        ConfigError: 読み込み失敗・構文エラー・スキーマ違反
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    config = loads(text)
    logger.info(f"Loaded run config {path} (scenario {config.name})")
    return config


def export_scenario(scenario: Scenario, requests: Optional[List[str]] = None) -> str:
    """Scenario を TOML 文字列として書き出す"""
    return RunConfig.from_scenario(scenario, requests).to_toml()
