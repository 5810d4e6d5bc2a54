#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
布朗运动路径模块
功能：离散布朗路径与布朗桥采样、球/立方体首出时、Dirichlet 生存概率级数，
以及桥式出界下界的蒙特卡洛检验
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from config import config
from lab_errors import ConfigurationError, DomainError, NumericalError
from poisson_field import Box
from replicates import Estimate, ReplicatePool, replicate_rng, stderr_of_difference

logger = logging.getLogger(__name__)

# 最大级数项数
_SERIES_MAX_TERMS = 10 ** 6


@dataclass(frozen=True)
class Ball:
    """以原点为中心的闭球"""
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise DomainError(f"球半径必须为正: {self.radius}")

    def inside(self, positions) -> np.ndarray:
        p = np.asarray(positions, dtype=float)
        return np.einsum("...i,...i->...", p, p) <= self.radius ** 2

    def survival_probability(self, t: float) -> float:
        return ball_survival_probability(self.radius, t)


@dataclass(frozen=True)
class Cube:
    """以原点为中心、半宽 half_width 的闭立方体（最大范数球）"""
    half_width: float

    def __post_init__(self):
        if self.half_width <= 0:
            raise DomainError(f"立方体半宽必须为正: {self.half_width}")

    def inside(self, positions) -> np.ndarray:
        return np.max(np.abs(np.asarray(positions, dtype=float)), axis=-1) <= self.half_width

    def survival_probability(self, t: float) -> float:
        return cube_survival_probability(self.half_width, t)


Domain = Union[Ball, Cube]


def make_domain(kind: str, size: float) -> Domain:
    if kind == "ball":
        return Ball(size)
    if kind in ("box", "cube"):
        return Cube(size)
    raise ConfigurationError(f"未知区域类型: {kind}", key="domain")


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """离散时间布朗路径"""
    start: np.ndarray
    dt: float
    steps: int
    seed: int
    times: np.ndarray
    positions: np.ndarray

    @property
    def t(self) -> float:
        return float(self.times[-1])

    @property
    def end(self) -> np.ndarray:
        return self.positions[-1]


def time_grid(t: float, dt: float) -> np.ndarray:
    """步数 ceil(t/dt)，最后一步截短使终点恰为 t"""
    if not dt > 0:
        raise DomainError(f"时间步长必须为正: {dt}")
    if not t > 0:
        raise DomainError(f"时间范围必须为正: {t}")
    if dt > t:
        raise DomainError(f"时间步长 {dt} 大于时间范围 {t}")
    steps = max(1, math.ceil(t / dt * (1 - 1e-12)))
    times = np.minimum(np.arange(steps + 1) * dt, t)
    times[-1] = t
    return times


def _increments(rng: np.random.Generator, times: np.ndarray) -> np.ndarray:
    scale = np.sqrt(np.diff(times))[:, None]
    return rng.standard_normal((len(times) - 1, 3)) * scale


def sample_path(start, t: float, dt: float, seed: int, stream: int = 0) -> BrownianPath:
    times = time_grid(t, dt)
    start = np.asarray(start, dtype=float).reshape(3)
    rng = replicate_rng(seed, stream)
    positions = np.vstack([start, start + np.cumsum(_increments(rng, times), axis=0)])
    return BrownianPath(start=start, dt=float(dt), steps=len(times) - 1, seed=int(seed),
                        times=times, positions=positions)


def sample_paths(start, t: float, dt: float, seed: int, n: int, first_index: int = 0):
    """批量采样，第 j 条路径使用第 first_index+j 个随机流；返回 (times, positions[n, steps+1, 3])"""
    times = time_grid(t, dt)
    start = np.asarray(start, dtype=float).reshape(3)
    out = np.empty((n, len(times), 3))
    out[:, 0, :] = start
    for j in range(n):
        rng = replicate_rng(seed, first_index + j)
        out[j, 1:, :] = start + np.cumsum(_increments(rng, times), axis=0)
    return times, out


def bridge_from_paths(times: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """B⁰_s = B_s − (s/t)B_t − (1 − s/t)B_0，终点恰为零"""
    frac = (times / times[-1])[:, None]
    start = positions[..., :1, :]
    rel = positions - start
    bridge = rel - frac * rel[..., -1:, :]
    bridge[..., -1, :] = 0.0
    return bridge


def sample_bridge(dt: float, seed: int, stream: int = 0) -> BrownianPath:
    """[0,1] 上的三维布朗桥"""
    path = sample_path(np.zeros(3), 1.0, dt, seed, stream)
    bridge = bridge_from_paths(path.times, path.positions)
    return BrownianPath(start=np.zeros(3), dt=float(dt), steps=path.steps, seed=int(seed),
                        times=path.times, positions=bridge)


def first_exit_index(positions: np.ndarray, domain: Domain) -> np.ndarray:
    """每条路径首次落在闭区域外的网格序号，未出界记 −1"""
    outside = ~domain.inside(positions)
    idx = np.argmax(outside, axis=-1)
    return np.where(outside.any(axis=-1), idx, -1)


def first_exit(path: BrownianPath, domain: Domain) -> Optional[float]:
    idx = int(first_exit_index(path.positions, domain))
    return None if idx < 0 else float(path.times[idx])


# ==================== 生存概率级数 ====================

def _alternating_series(term, tol: float) -> float:
    total = 0.0
    for n in range(_SERIES_MAX_TERMS):
        v = term(n)
        total += v
        if abs(v) < tol:
            return total
    raise NumericalError("生存概率级数未收敛", iterations=_SERIES_MAX_TERMS)


def ball_survival_probability(radius: float, t: float, tol: Optional[float] = None) -> float:
    """P_0(T_R > t) = 2 Σ_{n≥1} (−1)^{n+1} exp(−n²π²t / (2R²))"""
    if radius <= 0 or t <= 0:
        raise DomainError(f"需要 R > 0, t > 0: R={radius}, t={t}")
    tol = config.SERIES_TOL if tol is None else tol
    c = math.pi ** 2 * t / (2.0 * radius ** 2)
    term = lambda k: 2.0 * (-1) ** k * math.exp(-c * (k + 1) ** 2)
    return _alternating_series(term, tol)


def interval_survival_probability(half_width: float, t: float, tol: Optional[float] = None) -> float:
    """一维 P_0(max_{s≤t}|W_s| < a) = (4/π) Σ_k (−1)^k/(2k+1) exp(−(2k+1)²π²t / (8a²))"""
    if half_width <= 0 or t <= 0:
        raise DomainError(f"需要 a > 0, t > 0: a={half_width}, t={t}")
    tol = config.SERIES_TOL if tol is None else tol
    c = math.pi ** 2 * t / (8.0 * half_width ** 2)
    term = lambda k: 4.0 / math.pi * (-1) ** k / (2 * k + 1) * math.exp(-c * (2 * k + 1) ** 2)
    return _alternating_series(term, tol)


def cube_survival_probability(half_width: float, t: float, tol: Optional[float] = None) -> float:
    return interval_survival_probability(half_width, t, tol) ** 3


# ==================== 蒙特卡洛 ====================

def survival_estimate(domain: Domain, t: float, dt: float, replicates: int, seed: int,
                      threads: Optional[int] = None) -> Estimate:
    """网格出界判定下的生存概率估计"""

    def _task(lo, hi):
        _, pos = sample_paths(np.zeros(3), t, dt, seed, hi - lo, first_index=lo)
        return (first_exit_index(pos, domain) < 0).astype(float)

    samples = ReplicatePool(threads).run_batches(_task, replicates, label="生存概率")
    return Estimate.from_samples(samples, seed)


def bridge_max_probability(level: float, dt: float, replicates: int, seed: int,
                           threads: Optional[int] = None) -> Estimate:
    """P(max_{s≤1} |B⁰_s| ≤ level)"""
    ball = Ball(level)

    def _task(lo, hi):
        times, pos = sample_paths(np.zeros(3), 1.0, dt, seed, hi - lo, first_index=lo)
        return np.all(ball.inside(bridge_from_paths(times, pos)), axis=-1).astype(float)

    samples = ReplicatePool(threads).run_batches(_task, replicates, label="布朗桥")
    return Estimate.from_samples(samples, seed)


@dataclass
class ExitCheckResult:
    """出界下界检验：lhs 与 rhs 两侧估计"""
    lhs: Estimate
    rhs: Estimate
    R: float
    t: float
    dt: float

    @property
    def combined_stderr(self) -> float:
        return stderr_of_difference(self.lhs, self.rhs)

    @property
    def passed(self) -> bool:
        return self.lhs.mean + 3.0 * self.combined_stderr >= self.rhs.mean

    def to_dict(self) -> dict:
        return {"R": self.R, "t": self.t, "dt": self.dt, "lhs": self.lhs.to_dict(),
                "rhs": self.rhs.to_dict(), "passed": self.passed}


def exit_lower_bound_check(R: float, t: float, target_set: Box, replicates: int, seed: int,
                           dt: float = 1e-3, threads: Optional[int] = None) -> ExitCheckResult:
    """比较 P(B_t∈A, max|B_s|≤2R) 与 P(B_t∈A∩B(0,R))·P(max|B⁰|≤R t^{-1/2})

    桥取自同一路径 (B_{st} − sB_t)/√t，它与 B_t 独立，因此乘积两因子可共用样本。
    """
    if R <= 0 or t <= 0:
        raise DomainError(f"需要 R > 0, t > 0: R={R}, t={t}")
    if replicates < 1000:
        raise DomainError(f"重复次数 {replicates} < 1000，拒绝检验")
    dt = min(dt, t)
    big, small = Ball(2.0 * R), Ball(R)

    def _task(lo, hi):
        times, pos = sample_paths(np.zeros(3), t, dt, seed, hi - lo, first_index=lo)
        end = pos[:, -1, :]
        in_a = target_set.contains(end)
        stay = np.all(big.inside(pos), axis=-1)
        in_ab = in_a & small.inside(end)
        bridge_ok = np.all(small.inside(bridge_from_paths(times, pos)), axis=-1)
        return np.stack([in_a & stay, in_ab, bridge_ok], axis=1).astype(float)

    samples = ReplicatePool(threads).run_batches(_task, replicates, label="出界下界")
    lhs = Estimate.from_samples(samples[:, 0], seed)
    p1 = Estimate.from_samples(samples[:, 1], seed)
    p2 = Estimate.from_samples(samples[:, 2], seed)
    rhs_stderr = math.sqrt((p2.mean * p1.stderr) ** 2 + (p1.mean * p2.stderr) ** 2)
    rhs = Estimate(mean=p1.mean * p2.mean, stderr=rhs_stderr, n=replicates, seed=seed)
    result = ExitCheckResult(lhs=lhs, rhs=rhs, R=R, t=t, dt=dt)
    logger.info(f"出界下界 R={R}, t={t}: lhs={lhs.mean:.5f}, rhs={rhs.mean:.5f}, 通过={result.passed}")
    return result
