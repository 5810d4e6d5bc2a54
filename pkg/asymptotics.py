#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
渐近速率模块
功能：慢变函数族、k 与 Anderson 指标 i、limsup/liminf 积分判别、
预测归一化与 0/∞ 分支，以及泊松极值的有限 n 尺度实验
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, stats

from config import config
from lab_errors import ConfigurationError, DomainError
from poisson_field import lattice_point_count
from replicates import Estimate, ReplicatePool, replicate_rng

logger = logging.getLogger(__name__)

CONST = "const"
LOG_POW = "log_pow"
LOGLOG_POW = "loglog_pow"
LOG_LOGLOG_POW = "log_times_loglog_pow"
CUSTOM_TABLE = "custom_table"

LIMSUP = "limsup"
LIMINF = "liminf"

ZERO = "zero"
INFINITE = "infinite"
INCONCLUSIVE = "inconclusive"

CONVERGENT = "convergent"
DIVERGENT = "divergent"

# 慢变函数的有效定义域 t ≥ e²
T_MIN = math.e ** 2
_K_RTOL = 1e-12
# 拟合主指数与 1 的差在此之内时按 1 处理，改由 log log 指数判别
_UNIT_EXPONENT_TOL = 1e-3


# ==================== 慢变函数 ====================

@dataclass(frozen=True, eq=False)
class SlowlyVaryingSpec:
    """慢变函数 l(t)：内置族或 (t, l) 表格"""
    family: str
    a: float = 1.0
    table_t: Optional[np.ndarray] = None
    table_l: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.family not in (CONST, LOG_POW, LOGLOG_POW, LOG_LOGLOG_POW, CUSTOM_TABLE):
            raise ConfigurationError(f"未知慢变函数族: {self.family}", key="l")
        if self.family == CONST and not self.a > 0:
            raise ConfigurationError(f"常数慢变函数须为正: {self.a}", key="l")
        if self.family == CUSTOM_TABLE:
            t = np.asarray(self.table_t, dtype=float)
            l = np.asarray(self.table_l, dtype=float)
            if t.ndim != 1 or t.shape != l.shape or len(t) < 4:
                raise ConfigurationError("慢变函数表格须为等长一维列（至少 4 行）", key="l")
            if t[0] < T_MIN * (1 - 1e-12) or np.any(np.diff(t) <= 0):
                raise ConfigurationError("表格 t 须从 e² 起严格递增", key="l")
            if np.any(~np.isfinite(l)) or np.any(l <= 0):
                raise ConfigurationError("表格 l 须有限且为正", key="l")
            object.__setattr__(self, "table_t", t)
            object.__setattr__(self, "table_l", l)

    # 构造
    @classmethod
    def const(cls, c: float = 1.0) -> "SlowlyVaryingSpec":
        return cls(CONST, c)

    @classmethod
    def log_pow(cls, a: float) -> "SlowlyVaryingSpec":
        return cls(LOG_POW, a)

    @classmethod
    def loglog_pow(cls, a: float) -> "SlowlyVaryingSpec":
        return cls(LOGLOG_POW, a)

    @classmethod
    def log_times_loglog_pow(cls, a: float) -> "SlowlyVaryingSpec":
        return cls(LOG_LOGLOG_POW, a)

    @classmethod
    def from_table(cls, t, l) -> "SlowlyVaryingSpec":
        return cls(CUSTOM_TABLE, 0.0, np.asarray(t, dtype=float), np.asarray(l, dtype=float))

    @classmethod
    def from_csv(cls, path: str) -> "SlowlyVaryingSpec":
        """读取含 t, l 两列的 CSV"""
        try:
            df = pd.read_csv(path, comment="#")
        except (OSError, pd.errors.ParserError) as e:
            raise ConfigurationError(f"无法读取慢变函数表格 {path}: {e}", key="l") from e
        if not {"t", "l"} <= set(df.columns):
            raise ConfigurationError(f"表格 {path} 须含 t 与 l 两列", key="l")
        return cls.from_table(df["t"].to_numpy(), df["l"].to_numpy())

    @property
    def horizon(self) -> float:
        return float(self.table_t[-1]) if self.family == CUSTOM_TABLE else math.inf

    @property
    def label(self) -> str:
        names = {CONST: "const", LOG_POW: "logpow", LOGLOG_POW: "loglogpow",
                 LOG_LOGLOG_POW: "logxloglogpow"}
        if self.family == CUSTOM_TABLE:
            return f"table[{len(self.table_t)}]"
        return f"{names[self.family]}:{self.a:g}"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < T_MIN * (1 - 1e-12)):
            raise DomainError(f"慢变函数仅在 t ≥ e² 上求值: min t={float(np.min(t))}")
        if self.family == CONST:
            out = np.full_like(t, self.a)
        elif self.family == LOG_POW:
            out = np.log(t) ** self.a
        elif self.family == LOGLOG_POW:
            out = np.log(np.log(t)) ** self.a
        elif self.family == LOG_LOGLOG_POW:
            out = np.log(t) * np.log(np.log(t)) ** self.a
        else:
            if np.any(t > self.horizon * (1 + 1e-12)):
                raise DomainError(f"超出表格范围 t ≤ {self.horizon:g}")
            out = np.exp(np.interp(np.log(t), np.log(self.table_t), np.log(self.table_l)))
        return out if out.ndim else float(out)

    def to_dict(self) -> dict:
        return {"family": self.family, "a": self.a, "label": self.label}


def parse_slowly_varying(text: str) -> SlowlyVaryingSpec:
    """解析 const[:c]、logpow:a、loglogpow:a、logxloglogpow:a、table:PATH"""
    text = text.strip()
    name, _, arg = text.partition(":")
    if name == "table":
        if not arg:
            raise ConfigurationError("table 需要文件路径", key="l")
        return SlowlyVaryingSpec.from_csv(arg)
    builders = {"const": SlowlyVaryingSpec.const, "logpow": SlowlyVaryingSpec.log_pow,
                "loglogpow": SlowlyVaryingSpec.loglog_pow,
                "logxloglogpow": SlowlyVaryingSpec.log_times_loglog_pow}
    if name not in builders:
        raise ConfigurationError(f"无法解析慢变函数: {text!r}", key="l")
    if not arg:
        if name != "const":
            raise ConfigurationError(f"{name} 需要指数参数，如 {name}:2", key="l")
        return SlowlyVaryingSpec.const()
    try:
        value = float(arg)
    except ValueError as e:
        raise ConfigurationError(f"慢变函数参数不是数: {arg!r}", key="l") from e
    return builders[name](value)


# ==================== k 与 i ====================

def k_of_theta(theta: float) -> int:
    """k = ⌊(8θ)^{-1}⌋，θ ∈ (0, 1/16)"""
    if not 0 < theta < 1.0 / 16.0:
        raise DomainError(f"需要 0 < θ < 1/16: θ={theta}")
    return int(math.floor(1.0 / (8.0 * theta) * (1 + _K_RTOL)))


def anderson_index(theta: float, kappa: float) -> int:
    """i = ⌊κ/(4θ)⌋，θ ∈ (0, κ/8)"""
    if kappa <= 0:
        raise DomainError(f"扩散系数须为正: κ={kappa}")
    if not 0 < theta < kappa / 8.0:
        raise DomainError(f"需要 0 < θ < κ/8 = {kappa / 8.0}: θ={theta}")
    return int(math.floor(kappa / (4.0 * theta) * (1 + _K_RTOL)))


def moment_finiteness(theta: float, kappa: float = 0.5) -> str:
    """矩 E exp{θ∫V̄} 的有限性：θ < κ/8 有限，θ > κ/8 无穷，等号处记 critical"""
    if kappa <= 0:
        raise DomainError(f"扩散系数须为正: κ={kappa}")
    if theta < 0:
        raise DomainError(f"θ 须非负: {theta}")
    threshold = kappa / 8.0
    if math.isclose(theta, threshold, rel_tol=1e-12):
        return "critical"
    return "finite" if theta < threshold else "infinite"


# ==================== 积分判别 ====================

@dataclass
class IntegralTestResult:
    """积分判别结论：verdict 描述积分，branch 描述对应极限"""
    verdict: str
    branch: str
    method: str
    exponent: Optional[float] = None
    partial_integral: Optional[float] = None
    log_exponent: Optional[float] = None

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "branch": self.branch, "method": self.method,
                "exponent": self.exponent, "log_exponent": self.log_exponent,
                "partial_integral": self.partial_integral}


def _tail_exponent(x: np.ndarray, y: np.ndarray) -> float:
    """表格后半段上 log y 对 x 的最小二乘斜率"""
    half = len(x) // 2
    slope, _ = np.polyfit(x[half:], np.log(y[half:]), 1)
    return float(slope)


def _log_power_fit(u: np.ndarray, y: np.ndarray):
    """全表最小二乘 log y = b·log u + c·log log u + const，返回 (b, c)"""
    X = np.column_stack([np.log(u), np.log(np.log(u)), np.ones_like(u)])
    coef, *_ = np.linalg.lstsq(X, np.log(y), rcond=None)
    return float(coef[0]), float(coef[1])


def _numeric_limsup(l: SlowlyVaryingSpec) -> IntegralTestResult:
    # u = log t 代换后 ∫du / l(e^u)，与 ∫du / (u^b (log u)^c) 比较
    u = np.log(l.table_t)
    b, c = _log_power_fit(u, l.table_l)
    partial, _ = integrate.quad(lambda s: 1.0 / l(math.exp(s)), u[0], u[-1], limit=200)
    margin = config.TAIL_EXPONENT_MARGIN
    if abs(b - 1.0) <= _UNIT_EXPONENT_TOL:
        b, exponent = 1.0, c
    else:
        exponent = b
    if exponent > 1 + margin:
        verdict, branch = CONVERGENT, ZERO
    elif exponent < 1 - margin:
        verdict, branch = DIVERGENT, INFINITE
    else:
        verdict, branch = INCONCLUSIVE, INCONCLUSIVE
    return IntegralTestResult(verdict, branch, "numeric", b, float(partial), log_exponent=c)


def _numeric_liminf(l: SlowlyVaryingSpec) -> IntegralTestResult:
    # ∫exp{−c·l(e^u)}du：l 与 c₀·log u 比较
    u = np.log(l.table_t)
    b = _tail_exponent(np.log(np.log(u)), l.table_l)
    partial, _ = integrate.quad(lambda s: math.exp(-l(math.exp(s))), u[0], u[-1], limit=200)
    margin = config.TAIL_EXPONENT_MARGIN
    if b < 1 - margin:
        verdict, branch = DIVERGENT, ZERO
    elif b > 1 + margin:
        verdict, branch = CONVERGENT, INFINITE
    else:
        verdict, branch = INCONCLUSIVE, INCONCLUSIVE
    return IntegralTestResult(verdict, branch, "numeric", b, float(partial))


def limsup_integral_test(l: SlowlyVaryingSpec) -> IntegralTestResult:
    """∫₁^∞ dt/(t·l(t))：收敛 → zero，发散 → infinite"""
    if l.family == CUSTOM_TABLE:
        return _numeric_limsup(l)
    if l.family in (CONST, LOGLOG_POW):
        convergent = False
    else:
        # log_pow 与 log_times_loglog_pow 的临界指数都是 1
        convergent = l.a > 1
    if convergent:
        return IntegralTestResult(CONVERGENT, ZERO, "symbolic")
    return IntegralTestResult(DIVERGENT, INFINITE, "symbolic")


def liminf_integral_test(l: SlowlyVaryingSpec) -> IntegralTestResult:
    """∫₁^∞ t^{-1}exp{−c·l(t)}dt：某个 c 发散 → zero，对一切 c 收敛 → infinite"""
    if l.family == CUSTOM_TABLE:
        return _numeric_liminf(l)
    if l.family == CONST:
        divergent = True
    elif l.family == LOGLOG_POW:
        divergent = l.a <= 1
    elif l.family == LOG_POW:
        divergent = l.a <= 0
    else:
        # log t·(log log t)^a 比任意 c₀·log log t 增长快
        divergent = False
    if divergent:
        return IntegralTestResult(DIVERGENT, ZERO, "symbolic")
    return IntegralTestResult(CONVERGENT, INFINITE, "symbolic")


# ==================== 速率结论 ====================

@dataclass
class RateVerdict:
    k: int
    time_exponent: float
    l_exponent: float
    branch: str
    theta: float
    side: str = LIMSUP
    kappa: Optional[float] = None
    test: Optional[IntegralTestResult] = None

    def to_dict(self) -> dict:
        out = {"theta": self.theta, "k": self.k, "time_exponent": self.time_exponent,
               "l_exponent": self.l_exponent, "branch": self.branch, "side": self.side}
        if self.kappa is not None:
            out["kappa"] = self.kappa
        if self.test is not None:
            out["integral_test"] = self.test.to_dict()
        return out


def _check_side(side: str):
    if side not in (LIMSUP, LIMINF):
        raise ConfigurationError(f"side 只能是 limsup 或 liminf: {side}", key="side")


def _index(theta: float, kappa: Optional[float]) -> int:
    return k_of_theta(theta) if kappa is None else anderson_index(theta, kappa)


def predicted_normalization(theta: float, l: SlowlyVaryingSpec, t: float, side: str = LIMSUP,
                            kappa: Optional[float] = None) -> float:
    """t^{(k+1)/(k−1)} l(t)^{±2/(3(k−1))}，limsup 取 +，liminf 取 −"""
    _check_side(side)
    k = _index(theta, kappa)
    if t < T_MIN:
        raise DomainError(f"需要 t ≥ e²: {t}")
    sign = 1.0 if side == LIMSUP else -1.0
    return t ** ((k + 1.0) / (k - 1.0)) * float(l(t)) ** (sign * 2.0 / (3.0 * (k - 1)))


def rate_verdict(theta: float, l: SlowlyVaryingSpec, side: str = LIMSUP,
                 kappa: Optional[float] = None) -> RateVerdict:
    """k（给定 κ 时为 i）、两个指数与对应积分判别的分支"""
    _check_side(side)
    k = _index(theta, kappa)
    test = limsup_integral_test(l) if side == LIMSUP else liminf_integral_test(l)
    verdict = RateVerdict(k=k, time_exponent=(k + 1.0) / (k - 1.0), l_exponent=2.0 / (3.0 * (k - 1)),
                          branch=test.branch, theta=theta, side=side, kappa=kappa, test=test)
    logger.info(f"速率结论 θ={theta}, l={l.label}, {side}: k={k}, 分支={test.branch} ({test.method})")
    return verdict


# ==================== 极值尺度实验 ====================

def _exceedance_exact(num_cells: int, cell_volume: float, threshold: int) -> float:
    """P(max ≥ threshold) = 1 − (1 − P(Poisson(v) ≥ threshold))^N，小概率时无舍入损失"""
    q = float(stats.poisson.sf(threshold - 1, cell_volume))
    return float(-np.expm1(num_cells * np.log1p(-q)))


def _uniform_lattice_points(rng: np.random.Generator, radius_in_cells: float, k: int) -> np.ndarray:
    """|z| ≤ radius_in_cells 的格点中均匀抽取 k 个（立方体拒绝采样）"""
    m = int(math.floor(radius_in_cells))
    r2 = radius_in_cells ** 2 * (1 + 1e-12)
    out = np.empty((0, 3), dtype=np.int64)
    while len(out) < k:
        need = k - len(out)
        z = rng.integers(-m, m + 1, size=(2 * need + 16, 3))
        z = z[np.einsum("ij,ij->i", z, z) <= r2]
        out = np.vstack([out, z[:need]])
    return out


def _uniform_in_ball(rng: np.random.Generator, k: int, radius: float) -> np.ndarray:
    direction = rng.standard_normal((k, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    return direction * (radius * rng.random(k) ** (1.0 / 3.0))[:, None]


@dataclass
class ExtremeScalingResult:
    table: pd.DataFrame
    slope: float
    exact_slope: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "exact_slope": self.exact_slope,
                "rows": self.table.to_dict(orient="records")}


def _log2_slope(ns: np.ndarray, ps: np.ndarray) -> float:
    ok = ps > 0
    if ok.sum() < 2:
        return math.nan
    slope, _ = np.polyfit(ns[ok], np.log2(ps[ok]), 1)
    return float(slope)


def extreme_scaling_experiment(n_range: Sequence[int], delta: float, r: float, replicates: int,
                               seed: int, threshold: int = 3,
                               threads: Optional[int] = None) -> ExtremeScalingResult:
    """格点 2rℤ³∩B(0, δ4^n − r) 上的球 B(2^{-n}z, 2^{-n}δ) 中单位强度泊松点的最大计数

    每个 n 直接在缩放后的几何中模拟：并集上的点数 ~ Poisson(N·v)，每点均匀落入某个单元，
    再按坐标就近归格重新计数。
    """
    if delta <= 0 or r <= 0:
        raise DomainError(f"需要 δ > 0, r > 0: δ={delta}, r={r}")
    if r <= delta:
        raise ConfigurationError(f"单元重叠：格距 2r={2 * r} 不大于直径 2δ={2 * delta}", key="r")
    if replicates < 1:
        raise DomainError(f"重复次数必须 ≥ 1: {replicates}")
    pool = ReplicatePool(threads)
    rows = []
    for n in n_range:
        scale = 2.0 ** (-n)
        radius_in_cells = (delta * 4.0 ** n - r) / (2.0 * r)
        if radius_in_cells < 0:
            raise DomainError(f"n={n} 时区域为空：δ·4^n ≤ r")
        num_cells = lattice_point_count(radius_in_cells)
        cell_radius = delta * scale
        spacing = 2.0 * r * scale
        v = 4.0 / 3.0 * math.pi * cell_radius ** 3

        def _task(lo, hi, n=n, radius_in_cells=radius_in_cells, num_cells=num_cells,
                  cell_radius=cell_radius, spacing=spacing, v=v):
            hits = np.zeros(hi - lo)
            for j, i in enumerate(range(lo, hi)):
                rng = replicate_rng(seed, i, sub=n)
                k = int(rng.poisson(num_cells * v))
                if k < threshold:
                    continue
                z = _uniform_lattice_points(rng, radius_in_cells, k)
                pos = z * spacing + _uniform_in_ball(rng, k, cell_radius)
                cell = np.rint(pos / spacing).astype(np.int64)
                _, counts = np.unique(cell, axis=0, return_counts=True)
                hits[j] = float(counts.max() >= threshold)
            return hits

        samples = pool.run_batches(_task, replicates, batch=max(1, replicates // (4 * pool.threads)),
                                   label=f"极值 n={n}")
        est = Estimate.from_samples(samples, seed)
        p_exact = _exceedance_exact(num_cells, v, threshold)
        rows.append({"n": int(n), "num_cells": int(num_cells), "cell_volume": v,
                     "p_emp": est.mean, "stderr": math.sqrt(p_exact * (1 - p_exact) / replicates),
                     "p_exact": p_exact, "p_any_exact": float(-np.expm1(-num_cells * v))})
        logger.info(f"极值 n={n}: 单元数={num_cells}, P_emp={est.mean:.3e}, P_exact={p_exact:.3e}")
    table = pd.DataFrame(rows)
    ns = table["n"].to_numpy(dtype=float)
    return ExtremeScalingResult(table=table, slope=_log2_slope(ns, table["p_emp"].to_numpy()),
                                exact_slope=_log2_slope(ns, table["p_exact"].to_numpy()))
