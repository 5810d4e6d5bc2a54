from config import LabConfig
from lab_errors import (ConfigurationError, DomainError, LabError, NumericalError,
                        OutOfWindowError)


def test_env_overrides(monkeypatch):
    monkeypatch.setenv("CRITICAL_LAB_THREADS", "3")
    monkeypatch.setenv("CRITICAL_LAB_SEED", "42")
    cfg = LabConfig()
    assert cfg.THREADS == 3
    assert cfg.DEFAULT_SEED == 42


def test_invalid_env_falls_back(monkeypatch):
    monkeypatch.setenv("CRITICAL_LAB_SEED", "abc")
    monkeypatch.setenv("CRITICAL_LAB_THREADS", "0")
    cfg = LabConfig()
    assert cfg.DEFAULT_SEED == 20240601
    # 线程数至少为 1
    assert cfg.THREADS == 1


def test_as_dict_only_uppercase():
    d = LabConfig().as_dict()
    assert d["CSV_FLOAT_FORMAT"] == "%.17g"
    assert all(k.isupper() for k in d)


def test_error_hierarchy():
    assert issubclass(OutOfWindowError, DomainError)
    assert issubclass(ConfigurationError, ValueError)
    assert issubclass(NumericalError, LabError)
    err = NumericalError("特征值未收敛", residual=1e-3, iterations=200)
    assert "残差=" in str(err)
    assert "迭代=200" in str(err)
    assert ConfigurationError("坏键", key="a").key == "a"
