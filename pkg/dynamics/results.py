"""
検証結果モジュール
条件チェックの判定と、判定を裏付けるサンプル点の記録
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np


# 全レポートに付ける注記
SAMPLED_EVIDENCE_NOTE = "sampled evidence, not a proof"


class Verdict(str, Enum):
    """条件チェックの判定"""
    HOLDS_STRICT = "holds-strict"
    HOLDS_NONSTRICT = "holds-nonstrict"
    VIOLATED = "violated"
    INCONCLUSIVE = "inconclusive"

    @property
    def holds(self) -> bool:
        return self in (Verdict.HOLDS_STRICT, Verdict.HOLDS_NONSTRICT)


@dataclass(frozen=True)
class Witness:
    """判定を決めたサンプル点"""
    x: Tuple[float, ...]
    t: float

    @classmethod
    def at(cls, points: np.ndarray, times: np.ndarray, index: int) -> "Witness":
        return cls(tuple(float(v) for v in points[index]), float(times[index]))


@dataclass
class CheckReport:
    """
    条件チェックの結果

    worst_margin は正規化マージン（値 / 各項の絶対値の和）の最大値
    worst_value はその点での生の値（左辺 - 右辺）
    linear チェックでは worst_margin が最大固有値そのもの
    """
    condition: str                       # th3-case1 / th4-case3 / linear / positivity など
    verdict: Verdict
    worst_margin: Optional[float] = None
    worst_value: Optional[float] = None
    witness: Optional[Witness] = None
    n_sampled: int = 0
    n_excluded_predicate: int = 0        # 軸ゼロ述語で除外
    n_excluded_origin: int = 0           # 原点近傍で除外
    n_excluded_singular: int = 0         # S=0、定義域外、|∇S|≈0 で除外
    n_kink: int = 0                      # abs の折れ点
    seed: Optional[int] = None
    details: Dict[str, object] = field(default_factory=dict)
    notes: List[str] = field(default_factory=lambda: [SAMPLED_EVIDENCE_NOTE])

    @property
    def holds(self) -> bool:
        return self.verdict.holds


def classify_margin(worst_margin: float, delta_strict: float, delta_tol: float) -> Verdict:
    """
    最悪マージンから判定を決める

    Args:
        worst_margin: 正規化マージンの最大値
        delta_strict: 厳密判定の帯幅（マージン <= -delta_strict で厳密に成立）
        delta_tol: 非厳密判定の許容幅（マージン <= delta_tol で成立）
    """
    if worst_margin <= -delta_strict:
        return Verdict.HOLDS_STRICT
    if worst_margin <= delta_tol:
        return Verdict.HOLDS_NONSTRICT
    return Verdict.VIOLATED


def normalized_margin(value: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """値を各項の絶対値の和で割る（和が0なら0）"""
    value = np.asarray(value, dtype=float)
    scale = np.asarray(scale, dtype=float)
    out = np.zeros_like(value)
    np.divide(value, scale, out=out, where=scale > 0)
    return out


def pick_worst(margin: np.ndarray, value: np.ndarray) -> int:
    """
    最悪の（マージン最大の）サンプルの添字

    マージンが同じなら生の値が大きい方を選ぶ
    """
    order = np.lexsort((value, margin))
    return int(order[-1])
