import math

import numpy as np
import pandas as pd
import pytest

from experiment_records import (CSV, JSON, ExperimentRecord, ExperimentRecorder, load_csv_record,
                                load_json_record, recorded_config, to_jsonable)
from lab_errors import ConfigurationError
from replicates import Estimate


def make_record(result=None):
    return ExperimentRecord(subcommand="demo", params={"theta": 0.1, "point": (0.0, 1.0, 2.0)},
                            seed=7, result=result if result is not None else {"value": 0.1})


def test_to_jsonable_handles_numpy_and_non_finite():
    out = to_jsonable({"a": np.float64(1.5), "b": np.arange(3), "c": math.inf, "d": (1, np.int64(2))})
    assert out == {"a": 1.5, "b": [0, 1, 2], "c": "inf", "d": [1, 2]}
    assert to_jsonable(Estimate.exact(2.0, n=10, seed=1)) == Estimate.exact(2.0, n=10, seed=1).to_dict()


def test_runtime_settings_are_not_recorded():
    cfg = recorded_config()
    assert "THREADS" not in cfg
    assert "OUTPUT_DIR" not in cfg
    assert "DEFAULT_SEED" in cfg


def test_json_record_roundtrip(tmp_path):
    path = ExperimentRecorder(str(tmp_path)).save(make_record(), JSON)
    assert path.endswith("demo_seed7.json")
    data = load_json_record(path)
    assert data["seed"] == 7
    assert data["params"]["point"] == [0.0, 1.0, 2.0]
    assert data["result"]["value"] == 0.1
    assert "config" in data


def test_csv_header_and_float_precision(tmp_path):
    rows = [{"x": 0.1, "y": 1}, {"x": 0.25, "y": 2}]
    path = ExperimentRecorder(str(tmp_path)).save(make_record(), CSV, rows=rows)
    text = open(path, encoding="utf-8").read()
    assert text.startswith("# ")
    assert "0.10000000000000001" in text
    header, table = load_csv_record(path)
    assert header["seed"] == 7
    assert header["subcommand"] == "demo"
    assert table["y"].tolist() == [1, 2]
    assert table["x"].iloc[0] == 0.1


def test_csv_accepts_dataframe(tmp_path):
    frame = pd.DataFrame({"n": [1, 2], "p": [0.5, 0.75]})
    path = ExperimentRecorder(str(tmp_path)).save(make_record(), CSV, rows=frame)
    _, table = load_csv_record(path)
    pd.testing.assert_frame_equal(table, frame)


def test_same_record_gives_identical_bytes(tmp_path):
    recorder = ExperimentRecorder(str(tmp_path))
    for fmt in (JSON, CSV):
        first = open(recorder.save(make_record(), fmt), "rb").read()
        second = open(recorder.save(make_record(), fmt), "rb").read()
        assert first == second


def test_invalid_format_and_empty_rows(tmp_path):
    recorder = ExperimentRecorder(str(tmp_path))
    with pytest.raises(ConfigurationError) as err:
        recorder.save(make_record(), "xml")
    assert err.value.key == "format"
    with pytest.raises(ConfigurationError):
        recorder.save(make_record(), CSV, rows=[])
