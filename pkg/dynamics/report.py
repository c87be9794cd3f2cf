"""
レポートモジュール

検証結果を版付きの JSON スキーマ（Pydantic）に変換し、読み戻して要約表を作る
同じ設定と seed なら JSON はバイト単位で一致する（時刻などは含めない）
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

from dynamics.integrals import NecessaryReport, NecessaryVerdict
from dynamics.results import CheckReport, Verdict


SCHEMA_VERSION = 1

Scalar = Union[bool, int, float, str, None]


def _finite(value: Optional[float]) -> Optional[float]:
    """JSON に書けない inf / NaN は null にする"""
    if value is None:
        return None
    value = float(value)
    return value if math.isfinite(value) else None


def _clean(mapping: Dict[str, object]) -> Dict[str, Scalar]:
    out = {}
    for key, value in mapping.items():
        if isinstance(value, float):
            value = _finite(value)
        out[key] = value
    return out


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WitnessModel(_Model):
    x: List[float]
    t: float


class CheckModel(_Model):
    """十分条件・制御条件・線形条件・正値性の結果"""
    condition: str
    verdict: Verdict
    worst_margin: Optional[float] = None
    worst_value: Optional[float] = None
    witness: Optional[WitnessModel] = None
    n_sampled: int = 0
    n_excluded_predicate: int = 0
    n_excluded_origin: int = 0
    n_excluded_singular: int = 0
    n_kink: int = 0
    seed: Optional[int] = None
    details: Dict[str, Scalar] = Field(default_factory=dict)
    notes: List[str] = Field(default_factory=list)

    @classmethod
    def from_report(cls, report: CheckReport) -> "CheckModel":
        return cls(
            condition=report.condition,
            verdict=report.verdict,
            worst_margin=_finite(report.worst_margin),
            worst_value=_finite(report.worst_value),
            witness=(
                WitnessModel(x=list(report.witness.x), t=report.witness.t) if report.witness else None
            ),
            n_sampled=report.n_sampled,
            n_excluded_predicate=report.n_excluded_predicate,
            n_excluded_origin=report.n_excluded_origin,
            n_excluded_singular=report.n_excluded_singular,
            n_kink=report.n_kink,
            seed=report.seed,
            details=_clean(report.details),
            notes=list(report.notes),
        )


class LevelModel(_Model):
    """積分条件のレベル C ごとの行"""
    level: float
    value: Optional[float]
    std_error: Optional[float]
    n_total: int
    n_accepted: int
    n_singular: int
    clipped: bool
    seed: int
    box: List[Tuple[float, float]]
    t_range: Tuple[float, float]
    verdict: NecessaryVerdict
    source_strength: Optional[float]


class NecessaryModel(_Model):
    """積分による必要条件の結果"""
    condition: str
    form: str
    weight: str
    verdict: NecessaryVerdict
    seed: int
    sigma_multiplier: float
    rows: List[LevelModel]
    growth: Optional[Dict[str, Scalar]] = None
    notes: List[str] = Field(default_factory=list)

    @classmethod
    def from_report(cls, report: NecessaryReport) -> "NecessaryModel":
        rows = [
            LevelModel(
                level=row.level,
                value=_finite(row.estimate.value),
                std_error=_finite(row.estimate.std_error),
                n_total=row.estimate.n_total,
                n_accepted=row.estimate.n_accepted,
                n_singular=row.estimate.n_singular,
                clipped=row.estimate.clipped,
                seed=row.estimate.seed,
                box=[tuple(b) for b in row.estimate.box],
                t_range=row.estimate.t_range,
                verdict=row.verdict,
                source_strength=_finite(row.source_strength),
            )
            for row in report.rows
        ]
        growth = None
        if report.growth is not None:
            g = report.growth
            growth = _clean(
                {
                    "gamma": g.gamma,
                    "c0": g.c0,
                    "c1": g.c1,
                    "c2": g.c2,
                    "n_samples": g.n_samples,
                    "mu_nonpositive": g.mu_nonpositive,
                }
            )
        return cls(
            condition=report.condition,
            form=report.form,
            weight=report.weight,
            verdict=report.verdict,
            seed=report.seed,
            sigma_multiplier=report.sigma_multiplier,
            rows=rows,
            growth=growth,
            notes=list(report.notes),
        )


class ReportDocument(_Model):
    """
    レポート全体（schema_version で版を管理）
    """
    schema_version: int = SCHEMA_VERSION
    scenario: str
    alpha: float
    seed: int
    control: Optional[str] = None
    parameters: Dict[str, str] = Field(default_factory=dict)
    bounds: Dict[str, Scalar] = Field(default_factory=dict)
    checks: List[CheckModel] = Field(default_factory=list)
    necessary: List[NecessaryModel] = Field(default_factory=list)

    @field_validator("bounds")
    @classmethod
    def _finite_bounds(cls, value: Dict[str, Scalar]) -> Dict[str, Scalar]:
        return _clean(value)

    def add(self, report: Union[CheckReport, NecessaryReport]):
        if isinstance(report, NecessaryReport):
            self.necessary.append(NecessaryModel.from_report(report))
        else:
            self.checks.append(CheckModel.from_report(report))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def load(cls, path: Path) -> "ReportDocument":
        """
        JSON レポートを読み込む

        Raises:
            OSError: 読めない
            ValueError: スキーマ違反・版の不一致
        """
        document = cls.model_validate_json(Path(path).read_text(encoding="utf-8"))
        if document.schema_version != SCHEMA_VERSION:
            raise ValueError(
                f"report schema version {document.schema_version} is not supported (expected {SCHEMA_VERSION})"
            )
        return document

    def verdicts(self) -> List[str]:
        return [c.verdict.value for c in self.checks] + [n.verdict.value for n in self.necessary]


def exit_code(verdicts: Sequence[str]) -> int:
    """
    判定の一覧から終了コードを決める

    0: 全て成立（非厳密も含む）/ consistent
    1: どれかが violated
    2: 残りに inconclusive がある
    """
    if "violated" in verdicts:
        return 1
    if "inconclusive" in verdicts:
        return 2
    return 0


_LABELS = {
    "holds-strict": "HOLDS (strict)",
    "holds-nonstrict": "HOLDS (non-strict)",
    "violated": "VIOLATED",
    "inconclusive": "INCONCLUSIVE",
    "consistent": "CONSISTENT",
}


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.4e}"


def render_summary(document: ReportDocument) -> str:
    """人が読むための要約表"""
    lines = [
        f"scenario {document.scenario}  alpha={document.alpha:g}  seed={document.seed}"
        + (f"  control={document.control}" if document.control else ""),
    ]
    if document.parameters:
        lines.append("parameters: " + ", ".join(f"{k}={v}" for k, v in document.parameters.items()))
    lines.append("")
    lines.append(f"{'condition':<12} {'verdict':<20} {'worst margin':>14} {'worst value':>14}  witness")
    for check in document.checks:
        witness = ""
        if check.witness is not None:
            coords = ", ".join(f"{v:.4g}" for v in check.witness.x)
            witness = f"x=({coords}) t={check.witness.t:.4g}"
        lines.append(
            f"{check.condition:<12} {_LABELS[check.verdict.value]:<20} "
            f"{_fmt(check.worst_margin):>14} {_fmt(check.worst_value):>14}  {witness}"
        )
        excluded = check.n_excluded_predicate + check.n_excluded_origin + check.n_excluded_singular
        if excluded:
            lines.append(
                f"{'':<12} excluded: predicate {check.n_excluded_predicate}, "
                f"origin {check.n_excluded_origin}, singular {check.n_excluded_singular} of {check.n_sampled}"
            )

    for nec in document.necessary:
        lines.append("")
        lines.append(f"{nec.condition:<12} {_LABELS[nec.verdict.value]:<20} form={nec.form} weight={nec.weight}")
        for row in nec.rows:
            lines.append(
                f"{'':<4}C={row.level:<8g} integral {_fmt(row.value)} ± {_fmt(row.std_error)}  "
                f"source strength Σ={_fmt(row.source_strength)}  {_LABELS[row.verdict.value]}"
            )
    lines.append("")
    lines.append("all verdicts are sampled evidence, not proofs")
    return "\n".join(lines) + "\n"
