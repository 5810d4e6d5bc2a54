#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
重复试验调度器
功能：为每个重复试验派生独立的计数器型随机流，按批次并行执行并按序号合并结果，
保证串行与多线程运行逐位一致
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Callable, List, Optional, Sequence, TypeVar

import numpy as np

from config import config
from lab_errors import DomainError

logger = logging.getLogger(__name__)

T = TypeVar("T")


def replicate_rng(seed: int, index: int = 0, sub: Optional[int] = None) -> np.random.Generator:
    """第 index 个重复试验的随机流（Philox + spawn_key），sub 区分同一试验内的辅助流"""
    if seed < 0:
        raise DomainError(f"种子必须非负: {seed}")
    key = (int(index),) if sub is None else (int(index), int(sub))
    ss = np.random.SeedSequence(int(seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class Estimate:
    """蒙特卡洛估计结果"""
    mean: float
    stderr: float
    n: int
    seed: int
    flag: str = "ok"  # 'ok' 或 'overflow'

    @classmethod
    def from_samples(cls, samples, seed: int) -> "Estimate":
        x = np.asarray(samples, dtype=float).ravel()
        n = x.size
        if n == 0:
            raise DomainError("样本为空，无法构造估计")
        if np.any(np.isposinf(x)):
            return cls(mean=math.inf, stderr=math.inf, n=n, seed=seed, flag="overflow")
        mean = float(np.mean(x))
        stderr = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
        return cls(mean=mean, stderr=stderr, n=n, seed=seed)

    @classmethod
    def exact(cls, value: float, n: int, seed: int) -> "Estimate":
        return cls(mean=float(value), stderr=0.0, n=n, seed=seed)

    @property
    def is_overflow(self) -> bool:
        return self.flag == "overflow"

    def to_dict(self) -> dict:
        return asdict(self)


def batch_bounds(n: int, batch: int) -> List[tuple]:
    """把 [0, n) 切成连续批次"""
    if n < 1:
        raise DomainError(f"重复次数必须 ≥ 1: {n}")
    batch = max(1, int(batch))
    return [(lo, min(lo + batch, n)) for lo in range(0, n, batch)]


class ReplicatePool:
    """重复试验线程池"""

    def __init__(self, threads: Optional[int] = None):
        self.threads = max(1, int(threads or config.THREADS))

    def map(self, func: Callable[..., T], items: Sequence) -> List[T]:
        """按输入顺序返回结果"""
        items = list(items)
        if self.threads == 1 or len(items) <= 1:
            return [func(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as executor:
            return list(executor.map(func, items))

    def run_batches(self, task: Callable[[int, int], np.ndarray], n: int,
                    batch: Optional[int] = None, label: str = "") -> np.ndarray:
        """task(lo, hi) 返回第 lo..hi-1 个重复试验的样本数组，结果按序号拼接"""
        bounds = batch_bounds(n, batch or config.FK_BATCH_PATHS)
        total = len(bounds)

        def _run(item):
            i, (lo, hi) = item
            out = task(lo, hi)
            if total >= 10 and (i + 1) % max(1, total // 10) == 0:
                logger.info(f"{label} 进度: {i + 1}/{total} 批")
            return out

        parts = self.map(_run, enumerate(bounds))
        return np.concatenate([np.asarray(p) for p in parts], axis=0)


def stderr_of_difference(*estimates: Estimate) -> float:
    """独立估计量之差/和的合成标准误"""
    return math.sqrt(sum(e.stderr ** 2 for e in estimates))
