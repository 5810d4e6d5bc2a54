#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
临界泊松势数值实验室配置模块
集中管理求积容差、线程数、日志与输出目录等参数
"""

import os
import logging
from dotenv import load_dotenv

# 加载环境变量
load_dotenv()

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    raw = os.getenv(name)
    if raw is None or raw.strip() == "":
        return default
    try:
        return int(raw)
    except ValueError:
        logger.warning(f"环境变量 {name}={raw!r} 不是整数，使用默认值 {default}")
        return default


class LabConfig:
    """配置类"""

    def __init__(self):
        # ==================== 并行与随机数 ====================
        self.THREADS = max(1, _env_int('CRITICAL_LAB_THREADS', os.cpu_count() or 1))
        self.DEFAULT_SEED = _env_int('CRITICAL_LAB_SEED', 20240601)
        self.FK_BATCH_PATHS = 512  # 每批路径数（批内向量化）

        # ==================== 求积与级数 ====================
        self.QUAD_EPSABS = 1e-10  # 径向求积绝对容差
        self.QUAD_EPSREL_MGF = 1e-8  # MGF 求积相对容差
        self.QUAD_LIMIT = 10 ** 6  # 自适应细分上限
        self.SERIES_TOL = 1e-12  # 生存概率级数截断项大小

        # ==================== 特征值求解 ====================
        self.EIGEN_TOL = 1e-8  # 残差容差
        self.EIGEN_MAX_ITER = 200  # 反迭代最大步数
        self.CG_MAX_ITER = 20000  # 单次线性求解最大步数
        self.RADIAL_EIG_ABSTOL = 1e-12  # 径向三对角二分法的绝对容差

        # ==================== Feynman-Kac ====================
        self.FK_ENVELOPE_SIGMAS = 6.0  # 路径包络宽度（标准差倍数）
        self.EXP_OVERFLOW = 700.0  # 指数超过此值视为爆破

        # ==================== 渐近分析 ====================
        self.TAIL_EXPONENT_MARGIN = 0.2  # 自定义表格积分检验的指数裕度

        # ==================== 输出 ====================
        self.OUTPUT_DIR = os.getenv('CRITICAL_LAB_OUTPUT_DIR', 'lab_output')
        self.CSV_FLOAT_FORMAT = '%.17g'

        # ==================== 日志配置 ====================
        self.LOG_LEVEL = os.getenv('CRITICAL_LAB_LOG_LEVEL', 'INFO')
        self.LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
        self.LOG_FILE = os.getenv('CRITICAL_LAB_LOG_FILE', 'critical_lab.log')

    def as_dict(self) -> dict:
        """导出全部大写配置项（写入实验记录）"""
        return {k: v for k, v in vars(self).items() if k.isupper()}

    def print_config(self):
        """打印配置信息"""
        logger.info("=" * 50)
        logger.info("实验室配置信息:")
        logger.info(f"线程数: {self.THREADS}")
        logger.info(f"默认种子: {self.DEFAULT_SEED}")
        logger.info(f"求积容差: abs={self.QUAD_EPSABS}, MGF rel={self.QUAD_EPSREL_MGF}, 细分上限={self.QUAD_LIMIT}")
        logger.info(f"特征值: tol={self.EIGEN_TOL}, 最大迭代={self.EIGEN_MAX_ITER}")
        logger.info(f"输出目录: {self.OUTPUT_DIR}")
        logger.info("=" * 50)


# 创建全局配置实例
config = LabConfig()
