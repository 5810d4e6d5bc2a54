#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Feynman-Kac 蒙特卡洛模块
功能：淬火指数矩 E_x exp{θ∫₀ᵗ V̄(B_s)ds} 的估计（可带生存指示），截断值扫描、
增长指数拟合，以及与主特征值的两种下界一致性检验
"""

import logging
import math
from dataclasses import dataclass, field as dc_field, replace
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid

from brownian import Ball, Domain, bridge_max_probability, first_exit_index, sample_paths
from config import config
from lab_errors import ConfigurationError, DomainError, OutOfWindowError
from poisson_field import PoissonField
from potential import DROP, TruncationScheme, renormalized_values
from replicates import Estimate, ReplicatePool, replicate_rng, stderr_of_difference
from spectral import DirichletProblem, ball_mask, principal_eigenvalue

logger = logging.getLogger(__name__)

__all__ = ["Estimate", "FKConfig", "PlantedCluster", "quenched_moment", "anderson_moment",
           "cap_sweep", "growth_rate", "fk_eigen_consistency", "fk_bridge_consistency"]


@dataclass
class FKConfig:
    """Feynman-Kac 估计配置"""
    theta: float
    t: float
    dt: float
    cap: float
    n_paths: int
    start: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    scheme: Optional[TruncationScheme] = None
    domain: Optional[Domain] = None
    kappa: float = 0.5  # 扩散系数，½ 对应标准布朗运动
    seed: int = None

    def __post_init__(self):
        if self.t <= 0 or self.dt <= 0:
            raise DomainError(f"需要 t > 0, dt > 0: t={self.t}, dt={self.dt}")
        if self.dt > self.t:
            raise DomainError(f"dt={self.dt} 大于 t={self.t}")
        if self.cap <= 0:
            raise DomainError(f"截断值 cap 必须为正: {self.cap}")
        if self.n_paths < 1:
            raise DomainError(f"路径数必须 ≥ 1: {self.n_paths}")
        if self.kappa <= 0:
            raise DomainError(f"kappa 必须为正: {self.kappa}")
        self.start = tuple(float(v) for v in self.start)
        self.seed = config.DEFAULT_SEED if self.seed is None else int(self.seed)

    def effective(self) -> Tuple[float, float, float]:
        """时间变换 s → 2κs 后的 (θ, t, dt)"""
        c = 2.0 * self.kappa
        return self.theta / c, self.t * c, self.dt * c

    def row(self, est: Estimate, cap: Optional[float] = None) -> dict:
        return {"theta": self.theta, "t": self.t, "dt": self.dt,
                "cap": self.cap if cap is None else cap, "n_paths": self.n_paths,
                "seed": self.seed, "mean": est.mean, "stderr": est.stderr, "flag": est.flag}


@dataclass(frozen=True)
class PlantedCluster:
    """中心处 m 个重合点产生的纯奇异势 m/|x−c|^p"""
    m: int
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    p: float = 2.0

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        d = np.linalg.norm(np.asarray(xs, dtype=float) - np.asarray(self.center), axis=-1)
        with np.errstate(divide="ignore"):
            return np.where(d > 0, self.m / d ** self.p, np.inf)


class _FieldPotential:
    """点场的重整化势

    6σ 包络之外仍可能有少数路径；求值前按实际路径的最大位移再查一次窗口，
    出界时在任何求值之前抛 OutOfWindowError。
    """

    def __init__(self, field: PoissonField, scheme: TruncationScheme):
        if scheme.tail_policy != DROP:
            logger.info("路径积分中远场按 drop 处理")
            scheme = replace(scheme, tail_policy=DROP)
        self.field = field
        self.scheme = scheme

    def check_envelope(self, start, t_eff: float):
        reach = config.FK_ENVELOPE_SIGMAS * math.sqrt(t_eff) + self.scheme.tail_radius
        if not self.field.window.contains_cell(np.asarray(start), reach):
            raise OutOfWindowError(
                f"路径包络 start±{reach:.3f} 超出点场窗口 "
                f"{self.field.window.lower}-{self.field.window.upper}")

    def check_paths(self, cfg: "FKConfig", t_eff: float, dt_eff: float, threads: Optional[int]):
        """重放全部路径（同一随机流），按实际最大位移检查窗口"""
        start = np.asarray(cfg.start, dtype=float)

        def _task(lo, hi):
            _, pos = sample_paths(start, t_eff, dt_eff, cfg.seed, hi - lo, first_index=lo)
            return np.max(np.abs(pos - start), axis=(1, 2))

        disp = ReplicatePool(threads).run_batches(_task, cfg.n_paths, label="路径预检")
        reach = float(disp.max()) + self.scheme.tail_radius
        if not self.field.window.contains_cell(start, reach):
            raise OutOfWindowError(
                f"路径实际最大位移 {float(disp.max()):.3f} 加求值半径超出点场窗口 "
                f"{self.field.window.lower}-{self.field.window.upper}")
        logger.debug(f"路径预检通过: 最大位移 {float(disp.max()):.3f}")

    def __call__(self, xs: np.ndarray) -> np.ndarray:
        return renormalized_values(self.field, xs, self.scheme)


PotentialSource = Union[PoissonField, PlantedCluster, Callable[[np.ndarray], np.ndarray]]


def _resolve_potential(source: PotentialSource, cfg: FKConfig, t_eff: float):
    if isinstance(source, PoissonField):
        if cfg.scheme is None:
            raise ConfigurationError("点场势需要截断方案 scheme", key="scheme")
        pot = _FieldPotential(source, cfg.scheme)
        pot.check_envelope(cfg.start, t_eff)
        return pot
    if callable(source):
        return source
    raise ConfigurationError(f"无法识别的势来源: {type(source).__name__}")


def _path_integrals(potential, cfg: FKConfig, caps: Sequence[float], lo: int, hi: int,
                    theta_eff: float, t_eff: float, dt_eff: float) -> np.ndarray:
    """第 lo..hi-1 条路径在各截断值下的权重，形状 (hi−lo, len(caps))"""
    times, pos = sample_paths(cfg.start, t_eff, dt_eff, cfg.seed, hi - lo, first_index=lo)
    n, m, _ = pos.shape
    out = np.empty((n, len(caps)))
    if theta_eff == 0:
        out[:] = 1.0
    else:
        values = np.asarray(potential(pos.reshape(-1, 3)), dtype=float).reshape(n, m)
        for j, cap in enumerate(caps):
            clamped = np.clip(np.nan_to_num(values, nan=0.0, posinf=cap, neginf=-cap), -cap, cap)
            expo = theta_eff * trapezoid(clamped, times, axis=1)
            with np.errstate(over="ignore"):
                out[:, j] = np.where(expo > config.EXP_OVERFLOW, np.inf, np.exp(expo))
    if cfg.domain is not None:
        alive = first_exit_index(pos, cfg.domain) < 0
        out[~alive, :] = 0.0
    return out


def _run(source: PotentialSource, cfg: FKConfig, caps: Sequence[float],
         threads: Optional[int]) -> List[Estimate]:
    theta_eff, t_eff, dt_eff = cfg.effective()
    potential = _resolve_potential(source, cfg, t_eff)
    if isinstance(potential, _FieldPotential) and theta_eff != 0:
        potential.check_paths(cfg, t_eff, dt_eff, threads)
    samples = ReplicatePool(threads).run_batches(
        lambda lo, hi: _path_integrals(potential, cfg, caps, lo, hi, theta_eff, t_eff, dt_eff),
        cfg.n_paths, label="Feynman-Kac")
    return [Estimate.from_samples(samples[:, j], cfg.seed) for j in range(len(caps))]


def quenched_moment(field: PotentialSource, cfg: FKConfig,
                    threads: Optional[int] = None) -> Estimate:
    """E_start exp{θ∫₀ᵗ clamp(V̄(B_s))ds}，设置 domain 时出界路径贡献 0"""
    est = _run(field, cfg, [cfg.cap], threads)[0]
    if est.is_overflow:
        logger.warning(f"指数矩溢出: θ={cfg.theta}, t={cfg.t}, cap={cfg.cap}")
    else:
        logger.info(f"淬火矩 θ={cfg.theta}, t={cfg.t}: {est.mean:.6g}±{est.stderr:.2e}")
    return est


def anderson_moment(field: PotentialSource, cfg: FKConfig,
                    threads: Optional[int] = None) -> Estimate:
    """∂u = κΔu + θV̄u 的解 u_θ(t,x)，经时间变换归结为系数 θ/(2κ)、时长 2κt 的淬火矩"""
    theta_eff, t_eff, _ = cfg.effective()
    logger.info(f"Anderson 模型 κ={cfg.kappa}: 等效 θ={theta_eff:.6g}, 等效 t={t_eff:.6g}")
    return quenched_moment(field, cfg, threads)


@dataclass
class CapSweepResult:
    """截断值扫描结果"""
    caps: List[float]
    estimates: List[Estimate]
    ratios: List[float] = dc_field(default_factory=list)

    def rows(self, cfg: FKConfig) -> List[dict]:
        return [cfg.row(e, cap=c) for c, e in zip(self.caps, self.estimates)]


def cap_sweep(field_spec: PotentialSource, theta: float, t: float, caps: Sequence[float],
              cfg: FKConfig, threads: Optional[int] = None) -> CapSweepResult:
    """同一批路径在递增截断值 Λ 下的估计，比值 r_j = mean_{j+1}/mean_j"""
    caps = [float(c) for c in caps]
    if len(caps) < 1 or any(b <= a for a, b in zip(caps, caps[1:])):
        raise DomainError(f"caps 必须严格递增: {caps}")
    run_cfg = replace(cfg, theta=theta, t=t, cap=caps[-1])
    estimates = _run(field_spec, run_cfg, caps, threads)
    ratios = []
    for a, b in zip(estimates, estimates[1:]):
        ratios.append(b.mean / a.mean if a.mean > 0 and math.isfinite(b.mean) else math.inf)
    logger.info(f"截断扫描 θ={theta}: 均值={[round(e.mean, 6) for e in estimates]}, 比值={ratios}")
    return CapSweepResult(caps=caps, estimates=estimates, ratios=ratios)


@dataclass
class GrowthFit:
    """log(log M) 对 log t 的最小二乘拟合"""
    exponent: float
    intercept: float
    residual: float


def growth_rate(log_moments: Sequence[Tuple[float, float]]) -> GrowthFit:
    pts = np.asarray(log_moments, dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise DomainError("至少需要 3 个 (t, log M) 点")
    t, lm = pts[:, 0], pts[:, 1]
    if np.any(np.diff(t) <= 0) or np.any(t <= 0):
        raise DomainError("t 必须为正且严格递增")
    if np.any(lm <= 0):
        raise DomainError("log 矩必须为正")
    x, y = np.log(t), np.log(lm)
    slope, intercept = np.polyfit(x, y, 1)
    residual = float(np.max(np.abs(y - (slope * x + intercept))))
    return GrowthFit(exponent=float(slope), intercept=float(intercept), residual=residual)


# ==================== 与特征值的一致性 ====================

def _ball_samples(radius: float, n_axis: int = 41) -> np.ndarray:
    ax = np.linspace(-radius, radius, n_axis)
    xs = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return xs[np.einsum("ij,ij->i", xs, xs) <= radius ** 2]


def _sup_on_ball(zeta: Callable, radius: float) -> Tuple[float, float]:
    vals = np.asarray(zeta(_ball_samples(radius)), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise DomainError(f"ζ 在 B(0,{radius}) 上无界，拒绝检验")
    return float(vals.max()), float(vals.min())


@dataclass
class ConsistencyResult:
    """蒙特卡洛一侧与特征值下界"""
    mc: Estimate
    bound: float
    eigenvalue: float
    K: float

    @property
    def passed(self) -> bool:
        return self.mc.mean + 3.0 * self.mc.stderr >= self.bound

    def to_dict(self) -> dict:
        return {"mc": self.mc.to_dict(), "bound": self.bound, "lambda": self.eigenvalue,
                "K": self.K, "passed": self.passed}


def _ball_eigenvalue(zeta: Callable, R: float, grid_n: int) -> float:
    problem = DirichletProblem.from_function(R, grid_n, zeta, mask=ball_mask(R, grid_n))
    return principal_eigenvalue(problem).eigenvalue


def fk_eigen_consistency(zeta: Callable, R: float, t: float, t0: float, cfg: FKConfig,
                         grid_n: int = 31, threads: Optional[int] = None) -> ConsistencyResult:
    """∫_{B(0,R)} E_x[exp∫₀ᵗζ; T_R ≥ t]dx ≥ (2πt₀)^{3/2} e^{−t₀K} exp{(t+t₀)λ_ζ(B(0,R))}"""
    if not 0 < t0 < t:
        raise DomainError(f"需要 0 < t0 < t: t0={t0}, t={t}")
    K, _ = _sup_on_ball(zeta, 2.0 * R)
    lam = _ball_eigenvalue(zeta, R, grid_n)
    bound = (2.0 * math.pi * t0) ** 1.5 * math.exp(-t0 * K + (t + t0) * lam)
    ball = Ball(R)
    vol = 4.0 * math.pi * R ** 3 / 3.0
    dt = min(cfg.dt, t)

    def _task(lo, hi):
        out = np.empty(hi - lo)
        for j, i in enumerate(range(lo, hi)):
            rng = replicate_rng(cfg.seed, i, sub=2)
            u = rng.normal(size=3)
            x = u / np.linalg.norm(u) * R * rng.random() ** (1.0 / 3.0)
            times, pos = sample_paths(x, t, dt, cfg.seed, 1, first_index=i)
            if first_exit_index(pos[0], ball) >= 0:
                out[j] = 0.0
                continue
            vals = np.asarray(zeta(pos[0]), dtype=float)
            out[j] = math.exp(trapezoid(vals, times))
        return out

    samples = ReplicatePool(threads).run_batches(_task, cfg.n_paths, label="FK-特征值一致性")
    est = Estimate.from_samples(samples, cfg.seed)
    mc = Estimate(mean=est.mean * vol, stderr=est.stderr * vol, n=est.n, seed=est.seed, flag=est.flag)
    result = ConsistencyResult(mc=mc, bound=bound, eigenvalue=lam, K=K)
    logger.info(f"FK-特征值一致性: MC={mc.mean:.6g}±{mc.stderr:.2e}, 下界={bound:.6g}, λ={lam:.6g}")
    return result


def fk_bridge_consistency(zeta: Callable, R: float, t: float, t0: float, cfg: FKConfig,
                          grid_n: int = 31, threads: Optional[int] = None) -> ConsistencyResult:
    """E_0[exp∫₀ᵗζ; T_{2R} ≥ t] ≥ P(max|B⁰| ≤ R t₀^{-1/2}) e^{−2t₀K − R²/(2t₀)} e^{tλ_ζ(B(0,R))}

    K 取 B(0,2R) 上 |ζ| 的上确界。
    """
    if not 0 < t0 < t:
        raise DomainError(f"需要 0 < t0 < t: t0={t0}, t={t}")
    sup, inf = _sup_on_ball(zeta, 2.0 * R)
    K = max(sup, -inf)
    lam = _ball_eigenvalue(zeta, R, grid_n)
    dt = min(cfg.dt, t)
    bridge = bridge_max_probability(R / math.sqrt(t0), min(cfg.dt, 1.0), cfg.n_paths,
                                    cfg.seed + 1, threads)
    factor = math.exp(-2.0 * t0 * K - R * R / (2.0 * t0) + t * lam)
    big = Ball(2.0 * R)

    def _task(lo, hi):
        times, pos = sample_paths(np.zeros(3), t, dt, cfg.seed, hi - lo, first_index=lo)
        n, m, _ = pos.shape
        vals = np.asarray(zeta(pos.reshape(-1, 3)), dtype=float).reshape(n, m)
        weight = np.exp(trapezoid(vals, times, axis=1))
        return np.where(first_exit_index(pos, big) < 0, weight, 0.0)

    samples = ReplicatePool(threads).run_batches(_task, cfg.n_paths, label="FK-桥一致性")
    mc = Estimate.from_samples(samples, cfg.seed)
    bound = Estimate(mean=bridge.mean * factor, stderr=bridge.stderr * factor, n=bridge.n, seed=bridge.seed)
    # 右侧含蒙特卡洛因子，合并两侧标准误后再比较
    mc_combined = Estimate(mean=mc.mean, stderr=stderr_of_difference(mc, bound),
                           n=mc.n, seed=mc.seed, flag=mc.flag)
    logger.info(f"FK-桥一致性: MC={mc.mean:.6g}±{mc.stderr:.2e}, 下界={bound.mean:.6g}")
    return ConsistencyResult(mc=mc_combined, bound=bound.mean, eigenvalue=lam, K=K)
