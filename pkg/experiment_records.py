#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
实验记录模块
功能：把每次运行的结果连同完整解析后的配置与种子写成 JSON 或 CSV，
浮点数按 17 位有效数字输出，同一种子重复运行得到逐字节相同的文件
"""

import json
import logging
import math
import os
from dataclasses import dataclass, field as dc_field, is_dataclass, asdict
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from config import config
from lab_errors import ConfigurationError

logger = logging.getLogger(__name__)

JSON = "json"
CSV = "csv"

# 不影响结果的运行期配置，不写入记录
_RUNTIME_ONLY = ("THREADS", "LOG_LEVEL", "LOG_FORMAT", "LOG_FILE", "OUTPUT_DIR")


def recorded_config() -> Dict[str, Any]:
    return {k: v for k, v in config.as_dict().items() if k not in _RUNTIME_ONLY}


def to_jsonable(value: Any) -> Any:
    """numpy 标量/数组、数据类与非有限浮点转为可序列化对象"""
    if hasattr(value, "to_dict") and callable(value.to_dict) and not isinstance(value, pd.DataFrame):
        return to_jsonable(value.to_dict())
    if is_dataclass(value) and not isinstance(value, type):
        return to_jsonable(asdict(value))
    if isinstance(value, pd.DataFrame):
        return to_jsonable(value.to_dict(orient="records"))
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        return to_jsonable(value.item())
    if isinstance(value, float) and not math.isfinite(value):
        # 严格 JSON 不含 Infinity/NaN
        return str(value)
    return value


@dataclass
class ExperimentRecord:
    """一次运行：子命令、解析后的参数、种子与结果"""
    subcommand: str
    params: Dict[str, Any]
    seed: int
    result: Any = None
    lab_config: Dict[str, Any] = dc_field(default_factory=recorded_config)

    def header(self) -> Dict[str, Any]:
        return {"subcommand": self.subcommand, "seed": self.seed,
                "params": to_jsonable(self.params), "config": to_jsonable(self.lab_config)}

    def to_dict(self) -> dict:
        out = self.header()
        out["result"] = to_jsonable(self.result)
        return out


def _rows_frame(rows: Union[pd.DataFrame, List[dict]]) -> pd.DataFrame:
    if isinstance(rows, pd.DataFrame):
        return rows
    if not rows:
        raise ConfigurationError("CSV 输出需要至少一行结果", key="format")
    return pd.DataFrame([{k: v for k, v in to_jsonable(r).items()} for r in rows])


def render_json(record: ExperimentRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n"


def render_csv(record: ExperimentRecord, rows: Union[pd.DataFrame, List[dict]]) -> str:
    """'#' 开头的头部行记录配置与种子，其后为表格"""
    lines = [f"# {key}: {json.dumps(value, ensure_ascii=False, sort_keys=True)}"
             for key, value in record.header().items()]
    body = _rows_frame(rows).to_csv(index=False, float_format=config.CSV_FLOAT_FORMAT,
                                    lineterminator="\n")
    return "\n".join(lines) + "\n" + body


class ExperimentRecorder:
    """实验结果写出器"""

    def __init__(self, out_dir: Optional[str] = None):
        self.out_dir = out_dir or config.OUTPUT_DIR

    def _path(self, name: str, fmt: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        return os.path.join(self.out_dir, f"{name}.{fmt}")

    def save(self, record: ExperimentRecord, fmt: str = JSON,
             rows: Union[pd.DataFrame, List[dict], None] = None, name: Optional[str] = None) -> str:
        """写出记录，返回文件路径"""
        if fmt not in (JSON, CSV):
            raise ConfigurationError(f"未知输出格式: {fmt}", key="format")
        name = name or f"{record.subcommand}_seed{record.seed}"
        path = self._path(name, fmt)
        if fmt == JSON:
            text = render_json(record)
        else:
            text = render_csv(record, rows if rows is not None else [record.result])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        logger.info(f"实验记录已保存: {path}")
        return path


def load_json_record(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_csv_record(path: str):
    """返回 (头部字典, 表格)"""
    header = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].strip().partition(": ")
            header[key] = json.loads(value)
    return header, pd.read_csv(path, comment="#")
