#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
pytest 公共配置
功能：把仓库根目录加入导入路径，并用 --runslow 开关控制耗时的蒙特卡洛验收测试
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="运行标记为 slow 的测试")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: 耗时较长的蒙特卡洛验收测试")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="需要 --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
