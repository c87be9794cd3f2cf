"""
サンプリングモジュール
検証領域（箱・原点除外・軸ゼロ述語・時間区間）とサンプル点の生成、チャンク単位の並列処理
"""
from __future__ import annotations

import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from loguru import logger

from core.config import DEFAULTS, worker_count


T = TypeVar("T")


@dataclass(frozen=True)
class AxisZeroPredicate:
    """
    軸ゼロ述語（例: "x2=0 & x3=0"）

    指定した全ての軸で |x_i| <= tolerance の点に一致する
    """
    axes: Tuple[int, ...]     # 1始まり
    tolerance: float = DEFAULTS.exclusion_tol

    @classmethod
    def parse(cls, text: str, dimension: int, tolerance: float = DEFAULTS.exclusion_tol) -> "AxisZeroPredicate":
        """
        "x2=0", "x2 = 0 & x3 = 0", "x2=0 and x3=0" の形式を解釈する

        Raises:
            ValueError: 形式が正しくない場合
        """
        parts = re.split(r"\s*(?:&|\band\b)\s*", text.strip())
        axes = []
        for part in parts:
            match = re.fullmatch(r"x([1-9]\d*)\s*=\s*0", part.strip())
            if match is None:
                raise ValueError(f"invalid exclusion predicate {text!r}: expected terms like 'x2=0'")
            axis = int(match.group(1))
            if axis > dimension:
                raise ValueError(f"exclusion predicate {text!r} refers to x{axis} beyond dimension {dimension}")
            axes.append(axis)
        return cls(tuple(sorted(set(axes))), tolerance)

    def matches(self, points: np.ndarray) -> np.ndarray:
        cols = [np.abs(points[:, a - 1]) <= self.tolerance for a in self.axes]
        return np.logical_and.reduce(cols)

    def describe(self) -> str:
        return " & ".join(f"x{a}=0" for a in self.axes)


@dataclass(frozen=True)
class Domain:
    """
    検証領域

    box: 各軸の [lo, hi]
    epsilon: 原点除外半径
    exclusions: 軸ゼロ述語（いずれかに一致した点を除外）
    t_range: 時間区間（"全ての t >= 0" を [0, T_max] で近似）
    """
    box: Tuple[Tuple[float, float], ...]
    t_range: Tuple[float, float] = (0.0, DEFAULTS.t_max)
    epsilon: float = DEFAULTS.epsilon
    exclusions: Tuple[AxisZeroPredicate, ...] = ()

    def __post_init__(self):
        if not self.box:
            raise ValueError("domain box must have at least one axis")
        for lo, hi in self.box:
            if not lo < hi:
                raise ValueError(f"invalid box axis [{lo}, {hi}]: lo must be < hi")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        reach = max(math.hypot(*[max(abs(lo), abs(hi)) for lo, hi in self.box]), 0.0)
        if self.epsilon >= reach:
            raise ValueError(f"epsilon {self.epsilon} leaves nothing of the box to sample")
        t0, t1 = self.t_range
        if t1 < t0 or t1 <= 0:
            raise ValueError(f"invalid time range [{t0}, {t1}]")

    @property
    def dimension(self) -> int:
        return len(self.box)

    @property
    def lower(self) -> np.ndarray:
        return np.array([lo for lo, _ in self.box])

    @property
    def upper(self) -> np.ndarray:
        return np.array([hi for _, hi in self.box])

    @classmethod
    def cube(cls, dimension: int, half_width: float, **kwargs) -> "Domain":
        return cls(box=tuple((-half_width, half_width) for _ in range(dimension)), **kwargs)

    def predicate_mask(self, points: np.ndarray) -> np.ndarray:
        mask = np.zeros(points.shape[0], dtype=bool)
        for predicate in self.exclusions:
            mask |= predicate.matches(points)
        return mask

    def origin_mask(self, points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points, axis=1) < self.epsilon


@dataclass(frozen=True)
class SamplingPlan:
    """
    サンプリング計画

    テンソル格子（構造的な違反を拾う）と一様乱数点（格子外の違反を拾う）の併用
    """
    grid_per_axis: int = DEFAULTS.grid_per_axis
    grid_t: int = DEFAULTS.grid_t
    random_samples: int = DEFAULTS.random_samples
    seed: int = 0
    chunk_size: int = DEFAULTS.chunk_size

    def __post_init__(self):
        if self.grid_per_axis < 0 or self.grid_t < 0 or self.random_samples < 0:
            raise ValueError("sample counts must be non-negative")
        if self.grid_per_axis == 1:
            raise ValueError("grid_per_axis must be 0 (no grid) or at least 2")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")


@dataclass
class SampleSet:
    """生成したサンプル点と除外マスク"""
    points: np.ndarray          # (m, n)
    times: np.ndarray           # (m,)
    origin: np.ndarray          # 原点近傍
    predicate: np.ndarray       # 軸ゼロ述語に一致

    @property
    def size(self) -> int:
        return int(self.times.shape[0])

    @property
    def active(self) -> np.ndarray:
        return ~(self.origin | self.predicate)


def _grid(domain: Domain, plan: SamplingPlan) -> Tuple[np.ndarray, np.ndarray]:
    n = domain.dimension
    if plan.grid_per_axis == 0 or plan.grid_t == 0:
        return np.empty((0, n)), np.empty(0)
    axes = [np.linspace(lo, hi, plan.grid_per_axis) for lo, hi in domain.box]
    t0, t1 = domain.t_range
    t_axis = np.linspace(t0, t1, plan.grid_t) if plan.grid_t > 1 else np.array([t0])
    mesh = np.meshgrid(*axes, t_axis, indexing="ij")
    flat = np.stack([m.ravel() for m in mesh], axis=1)
    return flat[:, :n], flat[:, n]


def chunk_bounds(total: int, chunk_size: int) -> List[Tuple[int, int]]:
    """[0, total) を chunk_size ごとの区間に分ける"""
    return [(start, min(start + chunk_size, total)) for start in range(0, total, chunk_size)]


def uniform_chunks(
    lower: np.ndarray,
    upper: np.ndarray,
    t_range: Tuple[float, float],
    total: int,
    seed: int,
    chunk_size: int,
) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    箱 × 時間区間の一様乱数点をチャンクごとに生成する

    チャンクごとに SeedSequence の子ストリームを使うので、
    ワーカー数に関係なく同じ seed なら同じ点列になる
    """
    bounds = chunk_bounds(total, chunk_size)
    streams = np.random.SeedSequence(seed).spawn(len(bounds))
    chunks = []
    for (start, stop), stream in zip(bounds, streams):
        rng = np.random.default_rng(stream)
        count = stop - start
        points = rng.uniform(lower, upper, size=(count, lower.shape[0]))
        times = rng.uniform(t_range[0], t_range[1], size=count)
        chunks.append((points, times))
    return chunks


def draw_samples(domain: Domain, plan: SamplingPlan) -> SampleSet:
    """
    格子点と乱数点を生成し、除外マスクを付ける
    """
    grid_points, grid_times = _grid(domain, plan)
    random = uniform_chunks(
        domain.lower, domain.upper, domain.t_range, plan.random_samples, plan.seed, plan.chunk_size
    )
    points = np.concatenate([grid_points] + [p for p, _ in random], axis=0)
    times = np.concatenate([grid_times] + [t for _, t in random], axis=0)

    samples = SampleSet(points, times, domain.origin_mask(points), domain.predicate_mask(points))
    logger.debug(
        f"Drew {samples.size} samples ({grid_times.shape[0]} grid, {plan.random_samples} random, seed={plan.seed})"
    )
    return samples


def map_ordered(func: Callable[..., T], items: Sequence, workers: Optional[int] = None) -> List[T]:
    """
    items の各要素に func を適用し、入力順に結果を返す

    DIVCHECK_THREADS でワーカー数の上限を設定できる
    """
    if workers is None:
        workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(func, items))
