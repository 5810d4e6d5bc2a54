#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
截断与重整化泊松势
功能：截断轮廓 α、截断核 L_a、截断场 V̄_{a,ε}、局部奇异部分 V_{a,ε}、
补偿常数 C_a 与重整化势 V̄ 的求值，以及截断场的精确矩母函数
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate
from scipy.spatial import cKDTree

from config import config
from lab_errors import ConfigurationError, DomainError, NumericalError, OutOfWindowError
from poisson_field import Box, PoissonField, sample_field
from replicates import Estimate, ReplicatePool, replicate_rng

logger = logging.getLogger(__name__)

DIM = 3
DROP = "drop"
GAUSSIAN_SURROGATE = "gaussian_surrogate"
_TAIL_POLICIES = (DROP, GAUSSIAN_SURROGATE)

# 逐块求值的查询点数
_CHUNK = 20000


class CutoffProfile:
    """光滑截断轮廓：[0,1] 上为 1，[3,∞) 上为 0，中间用对称 smoothstep 过渡"""

    inner = 1.0
    outer = 3.0

    @staticmethod
    def _x(lam):
        return (np.asarray(lam, dtype=float) - 1.0) / 2.0

    def value(self, lam):
        lam = np.asarray(lam, dtype=float)
        x = np.clip(self._x(lam), 0.0, 1.0)
        s = x * x * (3.0 - 2.0 * x)
        out = 1.0 - s
        return out if out.ndim else float(out)

    def derivative(self, lam):
        x = self._x(lam)
        d = np.where((x > 0.0) & (x < 1.0), -3.0 * x * (1.0 - x), 0.0)
        return d if d.ndim else float(d)

    __call__ = value

    @property
    def integral(self) -> float:
        """∫₀^∞ α(u) du"""
        return 2.0


PROFILE = CutoffProfile()


@dataclass(frozen=True)
class TruncationScheme:
    """截断方案：半径 a、强度尺度 ε、核指数 p、求值窗口半径 ρ 与远场处理方式"""
    a: float
    epsilon: float = 1.0
    p: float = 2.0
    tail_radius: Optional[float] = None
    tail_policy: str = DROP

    def __post_init__(self):
        if not self.a > 0:
            raise ConfigurationError(f"截断半径 a 必须为正: {self.a}", key="a")
        if not 0 < self.epsilon <= 1:
            raise ConfigurationError(f"epsilon 必须在 (0,1] 内: {self.epsilon}", key="epsilon")
        if not DIM / 2 < self.p < DIM:
            raise ConfigurationError(f"核指数需满足 3/2 < p < 3: {self.p}", key="p")
        if self.tail_radius is None:
            object.__setattr__(self, "tail_radius", 4.0 * self.a)
        if self.tail_radius < 3 * self.a:
            raise ConfigurationError(
                f"tail_radius={self.tail_radius} 小于 3a={3 * self.a}", key="tail_radius")
        if self.tail_policy not in _TAIL_POLICIES:
            raise ConfigurationError(f"未知远场策略: {self.tail_policy}", key="tail_policy")

    @property
    def tail_std(self) -> float:
        """被舍弃远场的标准差 √(ε∫_{|y|>ρ} L_a²)"""
        rho = self.tail_radius
        return math.sqrt(self.epsilon * 4.0 * math.pi * rho ** (3 - 2 * self.p) / (2 * self.p - 3))

    def to_dict(self) -> dict:
        return {"a": self.a, "epsilon": self.epsilon, "p": self.p,
                "tail_radius": self.tail_radius, "tail_policy": self.tail_policy}


@dataclass
class PotentialValue:
    """窗口化求值结果"""
    value: float
    tail_std: float


# ==================== 求积 ====================

def radial_quad(func: Callable[[float], float], lo: float, hi: float,
                epsabs: Optional[float] = None, epsrel: float = 1.49e-8) -> float:
    """自适应求积，QUADPACK 给出警告时抛 NumericalError"""
    epsabs = config.QUAD_EPSABS if epsabs is None else epsabs
    if hi <= lo:
        return 0.0
    res = integrate.quad(func, lo, hi, epsabs=epsabs, epsrel=epsrel,
                         limit=config.QUAD_LIMIT, full_output=1)
    if len(res) > 3:
        value, abserr, info, message = res[:4]
        raise NumericalError(f"径向求积未收敛 [{lo}, {hi}]", residual=abserr,
                             iterations=int(info.get("last", 0)), detail=str(message))
    return float(res[0])


def psi(lam):
    """Ψ(λ) = e^λ − 1 − λ，小自变量用级数避免相消"""
    lam = np.asarray(lam, dtype=float)
    small = np.abs(lam) < 1e-3
    series = lam * lam * (0.5 + lam * (1.0 / 6.0 + lam / 24.0))
    out = np.where(small, series, np.expm1(np.where(small, 0.0, lam)) - lam)
    return out if out.ndim else float(out)


# ==================== 核与常数 ====================

def kernel_radial(r, a: float, p: float = 2.0):
    """L_a 的径向形式 (1 − α(r/a)) / r^p，r ≤ a 时为 0"""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > a, (1.0 - PROFILE.value(r / a)) / r ** p, 0.0)
    return out if out.ndim else float(out)


def kernel_La(x, scheme: TruncationScheme) -> float:
    return kernel_radial(float(np.linalg.norm(np.asarray(x, dtype=float))), scheme.a, scheme.p)


def singular_radial(r, a: float, p: float = 2.0):
    """α(r/a) / r^p，r = 0 时为 +∞"""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(r > 0, PROFILE.value(r / a) / r ** p, np.inf)
    return out if out.ndim else float(out)


@lru_cache(maxsize=256)
def compensator_Ca(a: float, p: float = 2.0) -> float:
    """C_a = ∫ α(|x|/a)/|x|^p dx = 4π a^{3−p} ∫₀^∞ α(u) u^{2−p} du"""
    if a <= 0:
        raise DomainError(f"截断半径必须为正: {a}")
    f = lambda u: PROFILE.value(u) * u ** (2.0 - p)
    inner = radial_quad(f, 0.0, 1.0) + radial_quad(f, 1.0, 3.0)
    return 4.0 * math.pi * a ** (3.0 - p) * inner


@lru_cache(maxsize=256)
def window_kernel_integral(a: float, p: float, rho: float) -> float:
    """∫_{|y|≤ρ} L_a(y) dy 的径向求积"""
    f = lambda r: (1.0 - PROFILE.value(r / a)) * r ** (2.0 - p)
    total = radial_quad(f, a, min(3.0 * a, rho))
    if rho > 3.0 * a:
        total += radial_quad(lambda r: r ** (2.0 - p), 3.0 * a, rho)
    return 4.0 * math.pi * total


# ==================== 点场求值 ====================

def _as_points(xs) -> np.ndarray:
    return np.atleast_2d(np.asarray(xs, dtype=float)).reshape(-1, 3)


def _require_window(field: PoissonField, xs: np.ndarray, radius: float):
    lo, hi = field.window.lo, field.window.hi
    if not (np.all(xs - radius >= lo) and np.all(xs + radius <= hi)):
        bad = xs[~(np.all(xs - radius >= lo, axis=1) & np.all(xs + radius <= hi, axis=1))][0]
        raise OutOfWindowError(
            f"求值球 (中心 {bad.tolist()}, 半径 {radius}) 超出采样窗口 "
            f"{field.window.lower}-{field.window.upper}")


def _pair_sum(field: PoissonField, xs: np.ndarray, radius: float,
              radial: Callable[[np.ndarray], np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Σ_{0<|y−x|≤radius} radial(|y−x|) 与重合点个数"""
    sums = np.zeros(len(xs))
    hits = np.zeros(len(xs), dtype=int)
    if field.tree is None or len(xs) == 0:
        return sums, hits
    for lo in range(0, len(xs), _CHUNK):
        block = xs[lo:lo + _CHUNK]
        hits[lo:lo + len(block)] = field.tree.query_ball_point(block, 0.0, return_length=True)
        pairs = cKDTree(block).sparse_distance_matrix(field.tree, radius, output_type="ndarray")
        if len(pairs) == 0:
            continue
        d = pairs["v"]
        keep = d > 0
        sums[lo:lo + len(block)] = np.bincount(pairs["i"][keep], weights=radial(d[keep]),
                                               minlength=len(block))
    return sums, hits


def _surrogate(scheme: TruncationScheme, n: int, rng: Optional[np.random.Generator],
               field: PoissonField) -> np.ndarray:
    if scheme.tail_policy != GAUSSIAN_SURROGATE:
        return np.zeros(n)
    if rng is None:
        rng = replicate_rng(field.seed, field.stream, sub=1)
    return rng.normal(0.0, scheme.tail_std, size=n)


def truncated_values(field: PoissonField, xs, scheme: TruncationScheme,
                     rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """批量求 V̄_{a,ε}(x)"""
    xs = _as_points(xs)
    _require_window(field, xs, scheme.tail_radius)
    a, p = scheme.a, scheme.p
    sums, _ = _pair_sum(field, xs, scheme.tail_radius, lambda d: kernel_radial(d, a, p))
    comp = scheme.epsilon * window_kernel_integral(a, p, scheme.tail_radius)
    return sums - comp + _surrogate(scheme, len(xs), rng, field)


def singular_values(field: PoissonField, xs, scheme: TruncationScheme) -> np.ndarray:
    """批量求 V_{a,ε}(x)，点与 x 重合时为 +∞"""
    xs = _as_points(xs)
    _require_window(field, xs, 3.0 * scheme.a)
    a, p = scheme.a, scheme.p
    sums, hits = _pair_sum(field, xs, 3.0 * scheme.a, lambda d: singular_radial(d, a, p))
    return np.where(hits > 0, np.inf, sums)


def renormalized_values(field: PoissonField, xs, scheme: TruncationScheme,
                        rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """批量求 V̄(x) = V̄_{a,ε} + V_{a,ε} − εC_a"""
    trunc = truncated_values(field, xs, scheme, rng)
    sing = singular_values(field, xs, scheme)
    return trunc + sing - scheme.epsilon * compensator_Ca(scheme.a, scheme.p)


def eval_singular_local(field: PoissonField, x, scheme: TruncationScheme) -> float:
    return float(singular_values(field, x, scheme)[0])


def eval_truncated_field(field: PoissonField, x, scheme: TruncationScheme,
                         rng: Optional[np.random.Generator] = None) -> PotentialValue:
    value = float(truncated_values(field, x, scheme, rng)[0])
    return PotentialValue(value=value, tail_std=scheme.tail_std)


def eval_renormalized(field: PoissonField, x, scheme: TruncationScheme,
                      rng: Optional[np.random.Generator] = None) -> PotentialValue:
    value = float(renormalized_values(field, x, scheme, rng)[0])
    return PotentialValue(value=value, tail_std=scheme.tail_std)


# ==================== 矩母函数 ====================

def truncated_mgf_exact(theta: float, scheme: TruncationScheme, sign: int = 1,
                        upper: Optional[float] = None) -> float:
    """E exp{±θ V̄_{a,ε}(0)} = exp{ε·4π ∫₀^∞ Ψ(±θ L_a(r)) r² dr}

    upper 给定时只积分到 upper（对应 drop 策略下的窗口化场）。
    """
    if sign not in (1, -1):
        raise DomainError(f"sign 只能是 ±1: {sign}")
    if theta == 0:
        return 1.0
    a, p = scheme.a, scheme.p
    f = lambda r: psi(sign * theta * kernel_radial(r, a, p)) * r * r
    eps = config.QUAD_EPSREL_MGF
    hi = math.inf if upper is None else upper
    total = radial_quad(f, a, min(3.0 * a, hi), epsabs=0.0, epsrel=eps)
    if hi > 3.0 * a:
        total += radial_quad(f, 3.0 * a, hi, epsabs=0.0, epsrel=eps)
    return math.exp(scheme.epsilon * 4.0 * math.pi * total)


def mgf_monte_carlo(theta: float, scheme: TruncationScheme, replicates: int, seed: int,
                    threads: Optional[int] = None):
    """exp{θ V̄_{a,ε}(0)} 的蒙特卡洛估计（场强度取 ε）"""
    rho = scheme.tail_radius
    window = Box.cube(rho * (1.0 + 1e-9))

    def _task(lo, hi):
        out = np.empty(hi - lo)
        for j, i in enumerate(range(lo, hi)):
            f = sample_field(window, scheme.epsilon, seed, stream=i)
            rng = replicate_rng(seed, i, sub=1) if scheme.tail_policy == GAUSSIAN_SURROGATE else None
            v = truncated_values(f, np.zeros((1, 3)), scheme, rng)[0]
            out[j] = math.exp(theta * v)
        return out

    samples = ReplicatePool(threads).run_batches(_task, replicates, batch=2000, label="MGF 检验")
    est = Estimate.from_samples(samples, seed)
    logger.info(f"MGF 检验 θ={theta}, a={scheme.a}, ε={scheme.epsilon}: "
                f"MC={est.mean:.6f}±{est.stderr:.2e}")
    return est


# ==================== 上确界衰减探针 ====================

def sup_field_decay_probe(a: float, R_list: Sequence[float], replicates: int, seed: int,
                          x_density: float = 0.05, min_points: int = 200,
                          intensity: float = 1.0, tail_radius: Optional[float] = None,
                          threads: Optional[int] = None) -> List[Tuple[float, np.ndarray]]:
    """对每个 R 返回 (R, 各重复试验的 sup_{|x|≤R}|V̄_{a,1}(x)| / log R)"""
    R_list = [float(R) for R in R_list]
    if any(b <= a_ for a_, b in zip(R_list, R_list[1:])):
        raise DomainError(f"R_list 必须严格递增: {R_list}")
    if R_list[0] <= 1:
        raise DomainError("R 必须大于 1（log R > 0）")
    scheme = TruncationScheme(a=a, epsilon=1.0, tail_radius=tail_radius)
    window = Box.cube(R_list[-1] + scheme.tail_radius)

    def _one(i):
        f = sample_field(window, intensity, seed, stream=i)
        rng = replicate_rng(seed, i, sub=1)
        row = []
        for R in R_list:
            n = max(min_points, int(x_density * 4.0 * math.pi * R ** 3 / 3.0))
            u = rng.normal(size=(n, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            xs = u * R * rng.random((n, 1)) ** (1.0 / 3.0)
            row.append(np.max(np.abs(truncated_values(f, xs, scheme))) / math.log(R))
        return row

    rows = np.asarray(ReplicatePool(threads).map(_one, range(replicates)))
    logger.info(f"上确界探针完成: R={R_list}, 平均比值={rows.mean(axis=0).round(4).tolist()}")
    return [(R, rows[:, j]) for j, R in enumerate(R_list)]
