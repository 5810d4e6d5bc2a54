#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
泊松点场模块
功能：在长方体窗口上采样齐次泊松点过程，统计球/立方体/格点单元内的点数，
并对关联不等式做蒙特卡洛检验
"""

import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from functools import cached_property
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from lab_errors import ConfigurationError, DomainError, OutOfWindowError
from replicates import Estimate, ReplicatePool, replicate_rng

logger = logging.getLogger(__name__)

BALL = "ball"
CUBE = "cube"
_SHAPES = (BALL, CUBE)

# 整数格点半径比较的相对容差
_LATTICE_RTOL = 1e-12


@dataclass(frozen=True)
class Box:
    """轴对齐长方体 [lower, upper]"""
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != 3 or len(hi) != 3:
            raise DomainError(f"窗口必须是三维的: {self.lower}, {self.upper}")
        if any(h - l <= 0 for l, h in zip(lo, hi)):
            raise DomainError(f"退化窗口（边长 ≤ 0）: {lo} - {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, half_width: float, center: Sequence[float] = (0.0, 0.0, 0.0)) -> "Box":
        c = np.asarray(center, dtype=float)
        return cls(tuple(c - half_width), tuple(c + half_width))

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def sides(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, points) -> np.ndarray:
        """闭区域包含判断，points 形状 (n,3)"""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= self.lo) & (p <= self.hi), axis=1)

    def contains_cell(self, center, radius: float) -> bool:
        """半径 radius 的球或立方体（半宽）是否整体落在窗口内"""
        c = np.asarray(center, dtype=float)
        return bool(np.all(c - radius >= self.lo) and np.all(c + radius <= self.hi))

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True, eq=False)
class PoissonField:
    """泊松点场的一次实现"""
    points: np.ndarray
    window: Box
    intensity: float
    seed: int
    stream: int = 0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if pts.size and not np.all(self.window.contains(pts)):
            raise DomainError("点场中存在窗口外的点")

    @property
    def count(self) -> int:
        return int(self.points.shape[0])

    @cached_property
    def tree(self) -> Optional[cKDTree]:
        """按需构建的空间索引，空场返回 None"""
        if self.count == 0:
            return None
        return cKDTree(self.points)

    def require_inside(self, center, radius: float, what: str = "单元"):
        if not self.window.contains_cell(center, radius):
            raise OutOfWindowError(
                f"{what} (中心 {np.asarray(center).tolist()}, 半径 {radius}) 超出采样窗口 "
                f"{self.window.lower}-{self.window.upper}")


def sample_field(window: Box, intensity: float, seed: int, stream: int = 0) -> PoissonField:
    """在 window 上以强度 intensity 采样泊松点场"""
    if intensity < 0 or not math.isfinite(intensity):
        raise DomainError(f"强度必须非负且有限: {intensity}")
    rng = replicate_rng(seed, stream)
    n = int(rng.poisson(intensity * window.volume))
    points = window.lo + window.sides * rng.random((n, 3))
    return PoissonField(points=points, window=window, intensity=float(intensity),
                        seed=int(seed), stream=int(stream))


def planted_field(m: int, window: Box, center: Sequence[float] = (0.0, 0.0, 0.0)) -> PoissonField:
    """在 center 处放置 m 个重合点的确定性点场（强度 0）"""
    if m < 0:
        raise DomainError(f"点数必须非负: {m}")
    points = np.tile(np.asarray(center, dtype=float), (m, 1))
    return PoissonField(points=points, window=window, intensity=0.0, seed=0)


def _check_shape(shape: str):
    if shape not in _SHAPES:
        raise ConfigurationError(f"未知单元形状: {shape}", key="cell_shape")


def count_in_cell(field: PoissonField, center, radius: float, shape: str = BALL) -> int:
    """闭单元内的点数"""
    _check_shape(shape)
    if radius <= 0:
        raise DomainError(f"单元半径必须为正: {radius}")
    field.require_inside(center, radius)
    if field.tree is None:
        return 0
    p = 2 if shape == BALL else np.inf
    return int(field.tree.query_ball_point(np.asarray(center, dtype=float), radius,
                                           p=p, return_length=True))


def count_in_cells(field: PoissonField, centers, radius: float, shape: str = BALL) -> np.ndarray:
    """批量计数，centers 形状 (n,3)"""
    _check_shape(shape)
    c = np.atleast_2d(np.asarray(centers, dtype=float))
    if not (np.all(c - radius >= field.window.lo) and np.all(c + radius <= field.window.hi)):
        raise OutOfWindowError(f"格点单元超出采样窗口 {field.window.lower}-{field.window.upper}")
    if field.tree is None:
        return np.zeros(len(c), dtype=int)
    p = 2 if shape == BALL else np.inf
    return np.asarray(field.tree.query_ball_point(c, radius, p=p, return_length=True), dtype=int)


def lattice_offsets(radius_in_cells: float) -> np.ndarray:
    """满足 |k| ≤ radius_in_cells 的全部整数向量 k ∈ ℤ³"""
    if radius_in_cells < 0:
        return np.zeros((0, 3), dtype=int)
    m = int(math.floor(radius_in_cells * (1 + _LATTICE_RTOL)))
    ax = np.arange(-m, m + 1)
    k = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    norm2 = np.einsum("ij,ij->i", k, k)
    return k[norm2 <= radius_in_cells ** 2 * (1 + _LATTICE_RTOL)]


def lattice_point_count(radius_in_cells: float) -> int:
    """闭球内 ℤ³ 格点数（逐列累加，不展开三维网格）"""
    if radius_in_cells < 0:
        return 0
    r2 = radius_in_cells ** 2 * (1 + _LATTICE_RTOL)
    m = int(math.floor(math.sqrt(r2)))
    ax = np.arange(-m, m + 1)
    x, y = np.meshgrid(ax, ax, indexing="ij")
    rest = r2 - (x * x + y * y)
    rest = rest[rest >= 0]
    return int(np.sum(2 * np.floor(np.sqrt(rest)).astype(np.int64) + 1))


@dataclass(frozen=True)
class LatticeSpec:
    """格点单元族：中心取 spacing·ℤ³ ∩ B(0, region_radius)"""
    spacing: float
    cell_radius: float
    region_radius: float
    cell_shape: str = BALL

    def __post_init__(self):
        if self.spacing <= 0 or self.cell_radius <= 0 or self.region_radius < 0:
            raise DomainError(
                f"格点参数不合法: spacing={self.spacing}, cell_radius={self.cell_radius}, "
                f"region_radius={self.region_radius}")
        _check_shape(self.cell_shape)

    @property
    def disjoint(self) -> bool:
        return self.spacing > 2 * self.cell_radius

    @property
    def num_cells(self) -> int:
        return lattice_point_count(self.region_radius / self.spacing)

    @property
    def cell_volume(self) -> float:
        if self.cell_shape == BALL:
            return 4.0 * math.pi * self.cell_radius ** 3 / 3.0
        return (2.0 * self.cell_radius) ** 3

    def centers(self) -> np.ndarray:
        return self.spacing * lattice_offsets(self.region_radius / self.spacing).astype(float)


def max_count_over_lattice(field: PoissonField, lattice: LatticeSpec) -> int:
    """全部格点单元计数的最大值"""
    counts = count_in_cells(field, lattice.centers(), lattice.cell_radius, lattice.cell_shape)
    return int(counts.max()) if counts.size else 0


def exact_max_count_cdf(num_cells: int, cell_volume: float, k: int) -> float:
    """互不相交单元的最大计数分布 P(max ≤ k) = P(Poisson(v) ≤ k)^n"""
    if k < 0:
        raise DomainError(f"k 必须非负: {k}")
    if num_cells < 1 or cell_volume <= 0:
        raise DomainError(f"需要 num_cells ≥ 1 且 cell_volume > 0: {num_cells}, {cell_volume}")
    return float(stats.poisson.cdf(k, cell_volume) ** num_cells)


# ==================== 关联不等式 ====================

AT_LEAST = ">="
AT_MOST = "<="


@dataclass
class AssociationResult:
    """关联不等式检验结果"""
    joint: Estimate
    product: float
    marginals: List[float] = dc_field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.joint.mean + 3.0 * self.joint.stderr >= self.product

    def to_dict(self) -> dict:
        return {"joint": self.joint.to_dict(), "product": self.product,
                "marginals": list(self.marginals), "passed": self.passed}


def _normalize_direction(direction: str) -> str:
    aliases = {">=": AT_LEAST, "≥": AT_LEAST, "ge": AT_LEAST,
               "<=": AT_MOST, "≤": AT_MOST, "le": AT_MOST}
    if direction not in aliases:
        raise ConfigurationError(f"未知方向: {direction}", key="direction")
    return aliases[direction]


def marginal_probability(mean: float, threshold: float, direction: str) -> float:
    """单个泊松计数满足阈值条件的精确概率"""
    if _normalize_direction(direction) == AT_LEAST:
        return float(stats.poisson.sf(math.ceil(threshold) - 1, mean))
    return float(stats.poisson.cdf(math.floor(threshold), mean))


def _counts_in_boxes(points: np.ndarray, cells: Sequence[Box]) -> np.ndarray:
    return np.array([int(np.count_nonzero(c.contains(points))) if len(points) else 0
                     for c in cells])


def check_association(window: Box, intensity: float, cells: Sequence[Box],
                      thresholds: Sequence[float], direction: str, replicates: int,
                      seed: int, threads: Optional[int] = None) -> AssociationResult:
    """蒙特卡洛估计联合概率并与边缘概率乘积比较"""
    direction = _normalize_direction(direction)
    if replicates < 100:
        raise DomainError(f"重复次数 {replicates} < 100，标准误无意义")
    if len(cells) != len(thresholds):
        raise DomainError(f"单元数 {len(cells)} 与阈值数 {len(thresholds)} 不一致")
    for c in cells:
        if not window.contains_box(c):
            raise OutOfWindowError(f"单元 {c.lower}-{c.upper} 超出窗口")

    thr = np.asarray(thresholds, dtype=float)
    marginals = [marginal_probability(intensity * c.volume, t, direction) for c, t in zip(cells, thr)]
    product = float(np.prod(marginals))

    def _task(lo, hi):
        hits = np.empty(hi - lo, dtype=float)
        for j, i in enumerate(range(lo, hi)):
            f = sample_field(window, intensity, seed, stream=i)
            counts = _counts_in_boxes(f.points, cells)
            ok = counts >= np.ceil(thr) if direction == AT_LEAST else counts <= np.floor(thr)
            hits[j] = float(np.all(ok))
        return hits

    samples = ReplicatePool(threads).run_batches(_task, replicates, batch=2000, label="关联检验")
    joint = Estimate.from_samples(samples, seed)
    logger.info(f"关联检验: 联合概率={joint.mean:.6f}±{joint.stderr:.2e}, 乘积={product:.6f}")
    return AssociationResult(joint=joint, product=product, marginals=marginals)


# ==================== 读写 ====================

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def dump_field(field: PoissonField, path: str):
    """写出 JSON，坐标保留 17 位有效数字"""
    rows = ",\n    ".join("[" + ", ".join(_fmt(v) for v in p) + "]" for p in field.points)
    window = ('{"lower": [' + ", ".join(_fmt(v) for v in field.window.lower) + '], "upper": ['
              + ", ".join(_fmt(v) for v in field.window.upper) + ']}')
    text = ('{\n  "window": ' + window + ',\n  "intensity": ' + _fmt(field.intensity)
            + ',\n  "seed": ' + str(int(field.seed)) + ',\n  "stream": ' + str(int(field.stream))
            + ',\n  "points": [' + ("\n    " + rows + "\n  " if rows else "") + ']\n}\n')
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    logger.info(f"点场已写出: {path} ({field.count} 个点)")


def load_field(path: str) -> PoissonField:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    window = Box(tuple(data["window"]["lower"]), tuple(data["window"]["upper"]))
    return PoissonField(points=np.asarray(data["points"], dtype=float).reshape(-1, 3),
                        window=window, intensity=float(data["intensity"]),
                        seed=int(data["seed"]), stream=int(data.get("stream", 0)))
