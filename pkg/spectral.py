#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Dirichlet 主特征值模块
功能：在立方体（或球形掩码）网格上计算 ½Δ_h + ζ 的最大特征值 λ_ζ(D)，
矩阵无关算子 + 移位反迭代（共轭梯度求解），并提供特征值尺度计算
"""

import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, cg, eigsh

from config import config
from lab_errors import DomainError, NumericalError, OutOfWindowError
from poisson_field import Box, PoissonField, planted_field
from potential import TruncationScheme, renormalized_values

logger = logging.getLogger(__name__)


def grid_nodes(box_half_width: float, grid_n: int) -> np.ndarray:
    """每个坐标轴上的内部节点"""
    h = 2.0 * box_half_width / (grid_n + 1)
    return -box_half_width + h * np.arange(1, grid_n + 1)


@dataclass(eq=False)
class DirichletProblem:
    """Q_R 上零边界条件的离散特征值问题"""
    box_half_width: float
    grid_n: int
    potential: np.ndarray
    solver_tol: float = None
    max_iter: int = None
    mask: Optional[np.ndarray] = None
    clamp_value: Optional[float] = None

    def __post_init__(self):
        if self.box_half_width <= 0:
            raise DomainError(f"盒子半宽必须为正: {self.box_half_width}")
        if self.grid_n < 3:
            raise DomainError(f"grid_n 必须 ≥ 3: {self.grid_n}")
        self.solver_tol = config.EIGEN_TOL if self.solver_tol is None else self.solver_tol
        self.max_iter = config.EIGEN_MAX_ITER if self.max_iter is None else self.max_iter
        n = self.grid_n
        pot = np.asarray(self.potential, dtype=float)
        if pot.ndim == 0:
            pot = np.full((n, n, n), float(pot))
        if pot.shape != (n, n, n):
            raise DomainError(f"势的形状 {pot.shape} 与网格 {(n, n, n)} 不符")
        if self.clamp_value is not None:
            pot = np.clip(np.nan_to_num(pot, nan=0.0, posinf=self.clamp_value,
                                        neginf=-self.clamp_value),
                          -self.clamp_value, self.clamp_value)
        if not np.all(np.isfinite(pot)):
            raise DomainError("势在某些节点上非有限，需先截断（clamp_value）")
        self.potential = pot
        if self.mask is None:
            self.mask = np.ones((n, n, n), dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
            if self.mask.shape != (n, n, n):
                raise DomainError(f"掩码形状 {self.mask.shape} 与网格不符")
        if self.mask.sum() < 3:
            raise DomainError("掩码内至少需要三个节点")

    @property
    def h(self) -> float:
        return 2.0 * self.box_half_width / (self.grid_n + 1)

    @property
    def axis(self) -> np.ndarray:
        return grid_nodes(self.box_half_width, self.grid_n)

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def from_function(cls, box_half_width: float, grid_n: int, zeta: Callable, **kwargs):
        """ζ(xs) 在全部节点上取值，xs 形状 (m,3)"""
        ax = grid_nodes(box_half_width, grid_n)
        xs = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
        pot = np.asarray(zeta(xs), dtype=float).reshape(grid_n, grid_n, grid_n)
        return cls(box_half_width, grid_n, pot, **kwargs)

    @classmethod
    def ball(cls, radius: float, grid_n: int, potential, **kwargs):
        """B(0,R) 上的问题：立方体 Q_R 网格加球形节点掩码"""
        return cls(radius, grid_n, potential, mask=ball_mask(radius, grid_n), **kwargs)

    def laplacian_half(self, u: np.ndarray) -> np.ndarray:
        """½Δ_h u，7 点格式，网格外取零"""
        out = -6.0 * u
        out[1:, :, :] += u[:-1, :, :]
        out[:-1, :, :] += u[1:, :, :]
        out[:, 1:, :] += u[:, :-1, :]
        out[:, :-1, :] += u[:, 1:, :]
        out[:, :, 1:] += u[:, :, :-1]
        out[:, :, :-1] += u[:, :, 1:]
        return out * (0.5 / self.h ** 2)

    def _embed(self, v: np.ndarray) -> np.ndarray:
        u = np.zeros(self.mask.shape)
        u[self.mask] = v
        return u

    def apply(self, v: np.ndarray) -> np.ndarray:
        """(½Δ_h + ζ) v，v 为掩码内节点上的向量"""
        v = np.asarray(v, dtype=float).ravel()
        u = self._embed(v)
        return (self.laplacian_half(u) + self.potential * u)[self.mask]

    def operator(self) -> LinearOperator:
        m = self.size
        return LinearOperator((m, m), matvec=self.apply, dtype=float)

    def dense_matrix(self) -> np.ndarray:
        """仅用于小网格的稠密矩阵"""
        m = self.size
        if m > 4000:
            raise DomainError(f"节点数 {m} 过大，不构造稠密矩阵")
        return np.column_stack([self.apply(e) for e in np.eye(m)])

    def dirichlet_energy(self, u: np.ndarray) -> float:
        """½∫|∇g|²：前向差分，边界外为零"""
        p = np.pad(u, 1)
        total = 0.0
        for ax in range(3):
            total += np.sum(np.diff(p, axis=ax) ** 2)
        return 0.5 * total * self.h

    def to_dict(self) -> dict:
        return {"box_half_width": self.box_half_width, "grid_n": self.grid_n, "h": self.h,
                "solver_tol": self.solver_tol, "max_iter": self.max_iter,
                "masked_nodes": self.size, "clamp_value": self.clamp_value}


def ball_mask(radius: float, grid_n: int) -> np.ndarray:
    ax = grid_nodes(radius, grid_n)
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    return x * x + y * y + z * z < radius ** 2


@dataclass
class EigenResult:
    """主特征值结果"""
    eigenvalue: float
    eigenvector_norm_check: float
    iterations: int
    residual: float
    rayleigh_gap: float
    h: float
    box_half_width: float
    eigenvector: np.ndarray = dc_field(repr=False, default=None)

    @property
    def dims(self):
        return list(self.eigenvector.shape) if self.eigenvector is not None else []

    def to_dict(self) -> dict:
        return {"lambda": self.eigenvalue, "eigenvector_norm_check": self.eigenvector_norm_check,
                "iterations": self.iterations, "residual": self.residual,
                "rayleigh_gap": self.rayleigh_gap, "h": self.h, "R": self.box_half_width}


def _warm_start(problem: DirichletProblem):
    op = problem.operator()
    v0 = np.ones(problem.size)
    try:
        vals, vecs = eigsh(op, k=1, which="LA", v0=v0, tol=1e-10,
                           ncv=min(problem.size, 40), maxiter=problem.size * 20)
    except ArpackNoConvergence as exc:
        if len(exc.eigenvalues) == 0:
            raise NumericalError("Lanczos 预热未收敛") from exc
        vals, vecs = exc.eigenvalues, exc.eigenvectors
    v = vecs[:, 0]
    if v.sum() < 0:
        v = -v
    return float(vals[0]), v / np.linalg.norm(v)


def principal_eigenvalue(problem: DirichletProblem) -> EigenResult:
    """最大特征值：Lanczos 预热后做移位反迭代直至残差 < solver_tol"""
    op = problem.operator()
    mu, v = _warm_start(problem)
    Av = op.matvec(v)
    residual = float(np.linalg.norm(Av - mu * v))
    scale = max(1.0, abs(mu))
    shift_gap = max(10.0 * residual, 0.1 * scale)
    iterations = 0
    tol = problem.solver_tol
    while residual >= tol:
        if iterations >= problem.max_iter:
            raise NumericalError("移位反迭代未收敛", residual=residual, iterations=iterations)
        sigma = mu + shift_gap
        shifted = LinearOperator(op.shape, matvec=lambda x, s=sigma: s * x - op.matvec(x),
                                 dtype=float)
        x0 = v / (sigma - mu)
        w, info = cg(shifted, v, x0=x0, rtol=tol * 1e-2, atol=0.0, maxiter=config.CG_MAX_ITER)
        if info < 0:
            raise NumericalError("共轭梯度求解失败", residual=residual, iterations=iterations)
        if info > 0:
            # 未收敛的解仍是可用的迭代方向，最后一步则不再容忍
            if iterations + 1 >= problem.max_iter:
                raise NumericalError("共轭梯度未收敛", residual=residual, iterations=iterations + 1)
            logger.warning(f"共轭梯度 {info} 步未收敛 (反迭代第 {iterations + 1} 步, 残差 {residual:.2e})")
        iterations += 1
        v = w / np.linalg.norm(w)
        Av = op.matvec(v)
        mu = float(v @ Av)
        residual = float(np.linalg.norm(Av - mu * v))
        logger.debug(f"反迭代第 {iterations} 步: λ={mu:.12g}, 残差={residual:.3e}")

    h3 = problem.h ** 3
    g = problem._embed(v / math.sqrt(h3))
    norm_check = abs(float(np.sum(g * g) * h3) - 1.0)
    rayleigh = float(np.sum(problem.potential * g * g) * h3) - problem.dirichlet_energy(g)
    logger.info(f"主特征值 λ={mu:.10g} (网格 {problem.grid_n}³, 迭代 {iterations}, 残差 {residual:.2e})")
    return EigenResult(eigenvalue=mu, eigenvector_norm_check=norm_check, iterations=iterations,
                       residual=residual, rayleigh_gap=abs(rayleigh - mu), h=problem.h,
                       box_half_width=problem.box_half_width, eigenvector=g)


def eigenvalue_of_field(field: PoissonField, theta: float, R: float, grid_n: int,
                        scheme: TruncationScheme, clamp: float, **kwargs) -> float:
    """ζ = clamp(θ·V̄, ±clamp) 在 Q_R 上的主特征值

    场点恰好落在格点上时该节点取到 clamp，特征值随 clamp 线性增长而与 θ 无关；
    点簇的临界性判别用 planted_clamp_sweep。
    """
    if clamp <= 0:
        raise DomainError(f"截断值必须为正: {clamp}")
    reach = R + scheme.tail_radius
    if not field.window.contains_cell(np.zeros(3), reach):
        raise OutOfWindowError(f"窗口需覆盖 Q_{{R+ρ}}，R+ρ={reach}，窗口 "
                               f"{field.window.lower}-{field.window.upper}")

    def zeta(xs):
        with np.errstate(invalid="ignore"):
            return np.clip(theta * renormalized_values(field, xs, scheme), -clamp, clamp)

    problem = DirichletProblem.from_function(R, grid_n, zeta, clamp_value=clamp, **kwargs)
    return principal_eigenvalue(problem).eigenvalue


def free_box_eigenvalue(box_half_width: float) -> float:
    """连续情形 ζ ≡ 0：−(3/2)(π/2R)²"""
    return -1.5 * (math.pi / (2.0 * box_half_width)) ** 2


# ==================== 径向约化 ====================

def radial_grid(r: float, delta: float, grid_n: int) -> np.ndarray:
    """(0, r] 上几何加细（靠近 0 与 δ）并叠加均匀节点"""
    rho_min = 1e-2 * min(delta, r) if delta > 0 else 1e-4 * r
    n_geo = max(3, int(0.75 * grid_n))
    n_uni = max(3, grid_n - n_geo)
    nodes = np.concatenate([[0.0], np.geomspace(rho_min, r, n_geo), np.linspace(0.0, r, n_uni)])
    return np.unique(nodes)


def radial_principal_eigenvalue(nodes: np.ndarray, q_inner: np.ndarray) -> float:
    """½u″ + q(ρ)u 在 (0, nodes[-1]) 上零边界的最大特征值（u = ρg，线性元 + 集中质量）

    对径向势 q，这就是 B(0, nodes[-1]) 上 ½Δ + q 的主特征值。
    """
    nodes = np.asarray(nodes, dtype=float)
    q_inner = np.asarray(q_inner, dtype=float)
    if nodes.ndim != 1 or len(nodes) < 4 or nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0):
        raise DomainError("径向网格须从 0 开始严格递增且至少 4 点")
    if q_inner.shape != (len(nodes) - 2,):
        raise DomainError(f"势取值个数 {q_inner.shape} 与内部节点数 {len(nodes) - 2} 不符")
    if not np.all(np.isfinite(q_inner)):
        raise DomainError("径向势须有限，需先截断")
    h = np.diff(nodes)
    mass = 0.5 * (h[:-1] + h[1:])
    # 线性有限元刚度矩阵 ∫φ_i′φ_j′
    k_diag = 1.0 / h[:-1] + 1.0 / h[1:]
    k_off = -1.0 / h[1:-1]
    s = 1.0 / np.sqrt(mass)
    d = (-0.5 * k_diag + q_inner * mass) * s * s
    e = -0.5 * k_off * s[:-1] * s[1:]
    n = len(d)
    # 几何网格上 ‖T‖ 很大，默认容差 eps·‖T‖ 太粗，二分法需给绝对容差
    vals = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(n - 1, n - 1),
                            lapack_driver="stebz", tol=config.RADIAL_EIG_ABSTOL)
    return float(vals[-1])


@dataclass
class ClampSweep:
    """原点放置点簇时，球上主特征值随截断值的变化"""
    theta: float
    m: int
    R: float
    clamps: List[float]
    eigenvalues: List[float]

    def rows(self) -> List[dict]:
        return [{"clamp": c, "lambda": lam} for c, lam in zip(self.clamps, self.eigenvalues)]

    def to_dict(self) -> dict:
        return {"theta": self.theta, "m": self.m, "R": self.R, "rows": self.rows()}


def planted_clamp_sweep(theta: float, m: int, R: float, clamps: Sequence[float],
                        scheme: Optional[TruncationScheme] = None,
                        grid_n: int = 4000) -> ClampSweep:
    """原点处 m 个重合点，ζ = clamp(θ·V̄, ±Λ) 在 B(0,R) 上的主特征值随 Λ 的扫描

    p=2 时 V̄ 在原点附近为 m/|x|²，θm ≤ 1/8 时特征值随 Λ 收敛，θm > 1/8 时按 Λ 线性增长。
    径向约化的网格在截断半径 √(θm/Λ) 附近加细，能分辨这两种情形；
    三维格点上（grid_n 为奇数时原点是格点）单个节点取到 Λ，任何 θ 都线性增长。
    """
    if theta < 0 or R <= 0:
        raise DomainError(f"需要 θ ≥ 0, R > 0: θ={theta}, R={R}")
    if m < 1:
        raise DomainError(f"点数必须 ≥ 1: {m}")
    clamps = [float(c) for c in clamps]
    if not clamps or min(clamps) <= 0:
        raise DomainError(f"截断值必须为正: {clamps}")
    scheme = scheme or TruncationScheme(a=1.0)
    field = planted_field(m, Box.cube(R + scheme.tail_radius + 1.0))
    eigenvalues = []
    for clamp in clamps:
        core = math.sqrt(theta * m / clamp) if theta > 0 else R
        nodes = radial_grid(R, min(core, R), grid_n)
        inner = nodes[1:-1]
        xs = np.column_stack([inner, np.zeros_like(inner), np.zeros_like(inner)])
        q = np.clip(theta * renormalized_values(field, xs, scheme), -clamp, clamp)
        eigenvalues.append(radial_principal_eigenvalue(nodes, q))
        logger.info(f"点簇截断扫描 θ={theta}, m={m}, Λ={clamp:.3g}: λ={eigenvalues[-1]:.8g}")
    return ClampSweep(theta=theta, m=m, R=R, clamps=clamps, eigenvalues=eigenvalues)


# ==================== 尺度 ====================

def _check_scale_args(t: float, k: int):
    if k < 2:
        raise DomainError(f"k 必须 ≥ 2: {k}")
    if t <= math.e:
        raise DomainError(f"需要 t > e: {t}")


def _box_scale(t: float, k: int, l, sign: int) -> float:
    _check_scale_args(t, k)
    lt = float(l(t))
    if k == 2:
        return t ** 3 * lt ** (sign * 2.0 / 3.0)
    return t ** (k / (k - 2.0)) * lt ** (sign * 2.0 / (3.0 * (k - 2)))


def scale_R_k(t: float, k: int, l) -> float:
    """R_k(t) = t^{k/(k−2)} l(t)^{2/(3(k−2))}，k=2 时 t³ l(t)^{2/3}"""
    return _box_scale(t, k, l, +1)


def scale_S_k(t: float, k: int, l) -> float:
    """S_k(t) = t^{k/(k−2)} l(t)^{−2/(3(k−2))}，k=2 时 t³ l(t)^{−2/3}"""
    return _box_scale(t, k, l, -1)


def eigenvalue_normalization(t: float, k: int, l, side: str = "R") -> float:
    """λ_{θV̄}(Q_{R_k(t)}) 或 λ_{θV̄}(Q_{S_k(t)}) 的增长尺度 t^{2/(k−1)} l(t)^{±2/(3(k−1))}"""
    _check_scale_args(t, k)
    if side not in ("R", "S"):
        raise DomainError(f"side 只能是 R 或 S: {side}")
    sign = 1 if side == "R" else -1
    return t ** (2.0 / (k - 1)) * float(l(t)) ** (sign * 2.0 / (3.0 * (k - 1)))


# ==================== 读写 ====================

def dump_eigenvector(result: EigenResult, path: str):
    """写出 float64 行优先二进制与 JSON 头 (dims, h, R)"""
    if result.eigenvector is None:
        raise DomainError("结果不含特征向量")
    np.ascontiguousarray(result.eigenvector, dtype="<f8").tofile(path)
    header = {"dims": result.dims, "h": result.h, "R": result.box_half_width,
              "dtype": "float64", "order": "C", "lambda": result.eigenvalue}
    with open(path + ".json", "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2)
    logger.info(f"特征向量已写出: {path}")


def load_eigenvector(path: str) -> np.ndarray:
    with open(path + ".json", "r", encoding="utf-8") as fh:
        header = json.load(fh)
    return np.fromfile(path, dtype="<f8").reshape(header["dims"])
