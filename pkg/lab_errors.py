#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验室异常定义
功能：统一各模块抛出的异常类型，命令行入口据此映射退出码
"""

from typing import Optional


class LabError(Exception):
    """所有实验室异常的基类"""


class DomainError(LabError, ValueError):
    """参数不满足前置条件（命令行退出码 1）"""


class OutOfWindowError(DomainError):
    """计数单元或求值球超出已采样窗口"""


class ConfigurationError(DomainError):
    """配置键、截断方案或命令行参数不合法"""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class NumericalError(LabError, RuntimeError):
    """数值求积或特征值求解未收敛（命令行退出码 2）"""

    def __init__(self, message: str, residual: Optional[float] = None,
                 iterations: Optional[int] = None, detail: str = ""):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.detail = detail

    def __str__(self):
        parts = [super().__str__()]
        if self.residual is not None:
            parts.append(f"残差={self.residual:.3e}")
        if self.iterations is not None:
            parts.append(f"迭代={self.iterations}")
        if self.detail:
            parts.append(self.detail)
        return " | ".join(parts)


# 命令行退出码
EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_NUMERICAL = 2


def exit_code_for(exc: BaseException) -> int:
    """异常 -> 退出码"""
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, (DomainError, ValueError)):
        return EXIT_DOMAIN
    raise exc
