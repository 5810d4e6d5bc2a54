#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Hardy 不等式模块
功能：径向剖面上的 Hardy 比值、g_M 近最优族、H(θ) 在 θ=1/8 处的二分、
尺度恒等式，以及正则化泛函 H_{r,δ}(θ) 的一维径向约化求解
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from lab_errors import DomainError
from spectral import DirichletProblem, principal_eigenvalue, radial_grid, radial_principal_eigenvalue

logger = logging.getLogger(__name__)

HARDY_CONSTANT = 4.0
CRITICAL_THETA = 0.125
# r³ 在 2M 处不溢出的上限
MAX_LOG_M = 230.0

# 三点 Gauss-Legendre（对 4 次多项式精确）
_GL_X, _GL_W = np.polynomial.legendre.leggauss(3)


def _segment_integrals(grid: np.ndarray, values: np.ndarray):
    """分段线性 g 的精确积分：∫g²dr, ∫g′²r²dr, ∫g²r²dr"""
    r0, r1 = grid[:-1], grid[1:]
    a, b = values[:-1], values[1:]
    dr = r1 - r0
    g2 = np.sum(dr * (a * a + a * b + b * b) / 3.0)
    gp2 = np.sum((b - a) ** 2 * (r1 * r1 + r1 * r0 + r0 * r0) / (3.0 * dr))
    mid, half = (r0 + r1) / 2.0, dr / 2.0
    g2r2 = 0.0
    for x, w in zip(_GL_X, _GL_W):
        r = mid + half * x
        g = a + (b - a) * (r - r0) / dr
        g2r2 = g2r2 + np.sum(w * half * g * g * r * r)
    return float(g2), float(gp2), float(g2r2)


class RadialProfile:
    """径向函数 g(r)，分段线性，r_max 处为零，构造时归一化 ∫4πg²r²dr = 1"""

    def __init__(self, grid, values, normalize: bool = True):
        grid = np.asarray(grid, dtype=float)
        values = np.asarray(values, dtype=float).copy()
        if grid.ndim != 1 or grid.shape != values.shape or len(grid) < 3:
            raise DomainError("网格与取值须为等长一维数组（至少 3 点）")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise DomainError("网格须从 0 开始严格递增")
        if not np.all(np.isfinite(values)):
            raise DomainError("剖面取值须有限")
        scale = np.max(np.abs(values))
        if scale == 0:
            raise DomainError("剖面恒为零")
        if abs(values[-1]) > 1e-12 * scale:
            raise DomainError(f"剖面须在 r_max={grid[-1]} 处为零: g={values[-1]}")
        values[-1] = 0.0
        self.grid = grid
        self.values = values
        if normalize:
            norm = 4.0 * math.pi * _segment_integrals(grid, values)[2]
            self.values = values / math.sqrt(norm)
        self.norm = 4.0 * math.pi * _segment_integrals(self.grid, self.values)[2]

    @classmethod
    def from_function(cls, func, r_max: float, n: int = 2001) -> "RadialProfile":
        grid = np.linspace(0.0, r_max, n)
        values = np.asarray(func(grid), dtype=float)
        values[-1] = 0.0
        return cls(grid, values)

    def rescale(self, a: float) -> "RadialProfile":
        """g(x) → a^{3/2} g(ax)"""
        if a <= 0:
            raise DomainError(f"尺度因子须为正: {a}")
        return RadialProfile(self.grid / a, self.values * a ** 1.5, normalize=False)

    def integrals(self):
        """(∫g²/|x|², ∫|∇g|²)"""
        g2, gp2, _ = _segment_integrals(self.grid, self.values)
        return 4.0 * math.pi * g2, 4.0 * math.pi * gp2


def hardy_ratio(profile: RadialProfile) -> float:
    """∫g²/|x|² ÷ ∫|∇g|²"""
    num, den = profile.integrals()
    if den <= 0:
        raise DomainError("梯度积分为零（常数剖面）")
    return num / den


# ==================== g_M 族 ====================

def _check_M(M: float):
    if not M > 1:
        raise DomainError(f"需要 M > 1: {M}")
    if math.log(M) > MAX_LOG_M:
        raise DomainError(f"log M={math.log(M):.1f} 超过 {MAX_LOG_M}，r³ 将溢出")


def g_M(r, M: float):
    """四段式：M^{1/2} | r^{-1/2} | (2M−r)/M^{3/2} | 0"""
    _check_M(M)
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.select(
            [r <= 1.0 / M, r <= M, r <= 2.0 * M],
            [math.sqrt(M), 1.0 / np.sqrt(np.maximum(r, 1.0 / M)), (2.0 * M - r) / M ** 1.5],
            default=0.0)
    return out if out.ndim else float(out)


def g_M_grid(M: float, grid_n: int = 100000, per_decade: int = 100) -> np.ndarray:
    """0 加上 [M^{-1}/10, 2M] 上的几何网格，含分段点 M^{-1}, M, 2M"""
    _check_M(M)
    lo, hi = 0.1 / M, 2.0 * M
    decades = math.log10(hi / lo)
    n = max(int(grid_n), int(math.ceil(per_decade * decades)) + 1)
    geo = np.geomspace(lo, hi, n)
    return np.unique(np.concatenate([[0.0], geo, [1.0 / M, M, 2.0 * M]]))


def g_M_profile(M: float, grid_n: int = 100000) -> RadialProfile:
    grid = g_M_grid(M, grid_n)
    return RadialProfile(grid, g_M(grid, M))


def gM_closed_form(log_M: float) -> float:
    """精确积分给出的比值 4 − 8(7/3 + ½log M)^{-1}"""
    return HARDY_CONSTANT - 8.0 / (7.0 / 3.0 + 0.5 * log_M)


def gM_printed_form(log_M: float) -> float:
    """常数取 28 的形式 4 − 28(7/3 + ½log M)^{-1}，仅供对照"""
    return HARDY_CONSTANT - 28.0 / (7.0 / 3.0 + 0.5 * log_M)


@dataclass
class GMRatio:
    M: float
    quadrature: float
    closed_form: float
    printed_form: float

    @property
    def relative_error(self) -> float:
        return abs(self.quadrature - self.closed_form) / self.closed_form

    def to_dict(self) -> dict:
        return {"log_M": math.log(self.M), "quadrature": self.quadrature,
                "closed_form": self.closed_form, "printed_form": self.printed_form,
                "relative_error": self.relative_error}


def hardy_ratio_gM(M: float, grid_n: int = 100000) -> GMRatio:
    log_M = math.log(M)
    quad = hardy_ratio(g_M_profile(M, grid_n))
    result = GMRatio(M=M, quadrature=quad, closed_form=gM_closed_form(log_M),
                     printed_form=gM_printed_form(log_M))
    logger.info(f"g_M 比值 log M={log_M:.2f}: 求积={quad:.8f}, 闭式={result.closed_form:.8f}")
    return result


def near_optimal_log_M(eps: float) -> float:
    """使 g_M 比值 > 4 − eps 的最小 log M"""
    if not 0 < eps < HARDY_CONSTANT:
        raise DomainError(f"eps 须在 (0, 4) 内: {eps}")
    return max(0.0, 2.0 * (8.0 / eps - 7.0 / 3.0))


# ==================== H(θ) ====================

def H_dichotomy(theta: float) -> str:
    if theta <= 0:
        raise DomainError(f"需要 θ > 0: {theta}")
    return "zero" if theta <= CRITICAL_THETA else "infinite"


def H_functional(theta: float, r: float, delta: float, grid_n: int = 4000,
                 nodes: Optional[np.ndarray] = None) -> float:
    """½u″ + θu/(ρ+δ)² 在 (0,r) 上 Dirichlet 问题的最大特征值（u = ρg）

    nodes 给定时直接使用该网格（首末点须为 0 与 r）。
    """
    if r <= 0 or delta < 0:
        raise DomainError(f"需要 r > 0, δ ≥ 0: r={r}, δ={delta}")
    if theta > CRITICAL_THETA and delta == 0:
        raise DomainError(f"θ={theta} > 1/8 且 δ=0 时上确界为无穷")
    if nodes is None:
        nodes = radial_grid(r, delta, grid_n)
    elif nodes[0] != 0.0 or not math.isclose(nodes[-1], r):
        raise DomainError("自定义网格须覆盖 [0, r]")
    inner = nodes[1:-1]
    value = radial_principal_eigenvalue(nodes, theta / (inner + delta) ** 2)
    logger.debug(f"H_{{r,δ}}(θ): θ={theta}, r={r}, δ={delta}, 节点={len(inner)} -> {value:.8g}")
    return value


@dataclass
class HValidation:
    radial: float
    ball_mask: float

    @property
    def relative_gap(self) -> float:
        return abs(self.radial - self.ball_mask) / abs(self.radial)


def validate_H_functional_3d(theta: float, r: float, delta: float, grid_n: int = 63,
                             radial_grid_n: int = 4000) -> HValidation:
    """一维径向值与三维球掩码特征值的对照"""
    if delta <= 0:
        raise DomainError("三维对照需要 δ > 0")
    problem = DirichletProblem.from_function(
        r, grid_n, lambda xs: theta / (np.linalg.norm(xs, axis=1) + delta) ** 2)
    ball = DirichletProblem.ball(r, grid_n, problem.potential)
    value_3d = principal_eigenvalue(ball).eigenvalue
    value_1d = H_functional(theta, r, delta, radial_grid_n)
    logger.info(f"H 对照 θ={theta}, r={r}, δ={delta}: 径向={value_1d:.6f}, 三维={value_3d:.6f}")
    return HValidation(radial=value_1d, ball_mask=value_3d)


# ==================== 尺度恒等式 ====================

def hardy_functional(profile: RadialProfile, theta: float) -> float:
    """θ∫g²/|x|² − ½∫|∇g|²"""
    num, den = profile.integrals()
    return theta * num - 0.5 * den


def vanishing_theta(profile: RadialProfile) -> float:
    """使泛函为零的 θ"""
    return 0.5 / hardy_ratio(profile)


@dataclass
class ScalingCheck:
    value: float
    scaled_value: float
    a: float

    def to_dict(self) -> dict:
        return {"a": self.a, "value": self.value, "scaled_value": self.scaled_value}


def scaling_identity_check(profile: RadialProfile, a: float, theta: Optional[float] = None) -> ScalingCheck:
    """g → a^{3/2}g(a·) 时泛函按 a² 缩放"""
    if a <= 0:
        raise DomainError(f"尺度因子须为正: {a}")
    theta = CRITICAL_THETA if theta is None else theta
    value = hardy_functional(profile, theta)
    scaled = hardy_functional(profile.rescale(a), theta)
    return ScalingCheck(value=value, scaled_value=scaled, a=a)
