import math

import numpy as np
import pytest

from brownian import Ball, Cube, cube_survival_probability
from config import config
import feynman_kac
from feynman_kac import (FKConfig, PlantedCluster, anderson_moment, cap_sweep, fk_bridge_consistency,
                         fk_eigen_consistency, growth_rate, quenched_moment)
from lab_errors import ConfigurationError, DomainError, OutOfWindowError
from poisson_field import Box, sample_field
from potential import TruncationScheme


def constant(c):
    return lambda xs: np.full(len(xs), c)


def zero(xs):
    return np.zeros(len(xs))


def test_theta_zero_gives_one():
    cfg = FKConfig(theta=0.0, t=0.1, dt=0.01, cap=10.0, n_paths=50, seed=1)
    est = quenched_moment(PlantedCluster(1), cfg)
    assert est.mean == 1.0
    assert est.stderr == 0.0


@pytest.mark.parametrize("t, dt", [(0.01, 0.01), (0.5, 0.1)])
def test_constant_potential_is_exact(t, dt):
    cfg = FKConfig(theta=0.3, t=t, dt=dt, cap=10.0, n_paths=20, seed=2)
    est = quenched_moment(constant(2.0), cfg)
    assert est.mean == pytest.approx(math.exp(0.3 * 2.0 * t), rel=1e-12)


def test_anderson_time_change():
    cfg = FKConfig(theta=0.2, t=0.5, dt=0.05, cap=10.0, n_paths=10, kappa=1.0, seed=3)
    est = anderson_moment(constant(1.5), cfg)
    assert est.mean == pytest.approx(math.exp(0.2 * 1.5 * 0.5), rel=1e-12)


def test_survival_restriction():
    cfg = FKConfig(theta=0.0, t=1.0, dt=1e-3, cap=1.0, n_paths=3000, domain=Cube(1.0), seed=4)
    est = quenched_moment(zero, cfg)
    exact = cube_survival_probability(1.0, 1.0)
    assert abs(est.mean - exact) < 3.0 * est.stderr + 0.02


def test_cap_sweep_is_monotone():
    cfg = FKConfig(theta=0.1, t=0.2, dt=1e-2, cap=1.0, n_paths=200, seed=5)
    res = cap_sweep(PlantedCluster(1), 0.1, 0.2, [1.0, 10.0, 100.0], cfg)
    means = [e.mean for e in res.estimates]
    assert means == sorted(means)
    assert len(res.ratios) == 2
    with pytest.raises(DomainError):
        cap_sweep(PlantedCluster(1), 0.1, 0.2, [10.0, 1.0], cfg)


def test_cap_sweep_off_cluster_stabilizes():
    cfg = FKConfig(theta=0.1, t=0.5, dt=1e-3, cap=1.0, n_paths=2000, start=(1.0, 0.0, 0.0), seed=6)
    res = cap_sweep(PlantedCluster(1), 0.1, 0.5, [1e2, 1e3, 1e4], cfg)
    last, prev = res.estimates[-1], res.estimates[-2]
    assert abs(last.mean - prev.mean) < 3.0 * math.hypot(last.stderr, prev.stderr)
    assert res.ratios[-1] < 1.1


def test_cap_sweep_on_cluster_keeps_growing():
    cfg = FKConfig(theta=0.15, t=0.2, dt=1e-3, cap=1.0, n_paths=200, seed=7)
    res = cap_sweep(PlantedCluster(1), 0.15, 0.2, [1e2, 1e3, 1e4], cfg)
    means = [e.mean for e in res.estimates]
    assert means[0] < means[1] < means[2]


def test_overflow_is_flagged():
    cfg = FKConfig(theta=1.0, t=0.01, dt=0.01, cap=1e6, n_paths=4, seed=8)
    est = quenched_moment(PlantedCluster(1), cfg)
    assert est.is_overflow


def test_field_source_checks_window_and_scheme():
    f = sample_field(Box.cube(2.0), 1.0, seed=0)
    cfg = FKConfig(theta=0.05, t=1.0, dt=0.01, cap=10.0, n_paths=10,
                   scheme=TruncationScheme(a=0.25, tail_radius=1.0), seed=9)
    with pytest.raises(OutOfWindowError):
        quenched_moment(f, cfg)
    with pytest.raises(ConfigurationError):
        quenched_moment(f, FKConfig(theta=0.05, t=0.01, dt=1e-3, cap=10.0, n_paths=10, seed=9))


def test_field_source_is_thread_invariant():
    f = sample_field(Box.cube(2.0), 1.0, seed=10)
    cfg = FKConfig(theta=0.05, t=0.01, dt=1e-3, cap=100.0, n_paths=64,
                   scheme=TruncationScheme(a=0.25, tail_radius=1.0), seed=10)
    a = quenched_moment(f, cfg, threads=1)
    b = quenched_moment(f, cfg, threads=3)
    assert a.mean == b.mean
    assert math.isfinite(a.mean) and a.mean > 0


@pytest.mark.parametrize("power", [1.0, 2.0, 3.0])
def test_growth_rate_recovers_exponent(power):
    t = np.array([1.0, 2.0, 4.0, 8.0])
    fit = growth_rate(list(zip(t, 2.0 * t ** power)))
    assert fit.exponent == pytest.approx(power, abs=1e-9)
    assert fit.residual < 1e-9


def test_growth_rate_rejects_bad_input():
    with pytest.raises(DomainError):
        growth_rate([(1.0, 1.0), (2.0, 2.0)])
    with pytest.raises(DomainError):
        growth_rate([(1.0, 1.0), (2.0, -1.0), (3.0, 2.0)])


def test_eigen_consistency_with_zero_potential():
    cfg = FKConfig(theta=1.0, t=1.0, dt=1e-2, cap=1.0, n_paths=400, seed=11)
    res = fk_eigen_consistency(zero, 1.0, 1.0, 0.25, cfg, grid_n=15)
    assert res.passed
    assert res.eigenvalue < 0
    assert res.K == 0.0


def test_bridge_consistency_with_zero_potential():
    cfg = FKConfig(theta=1.0, t=1.0, dt=1e-2, cap=1.0, n_paths=400, seed=12)
    res = fk_bridge_consistency(zero, 1.0, 1.0, 0.25, cfg, grid_n=15)
    assert res.passed


def test_consistency_refuses_unbounded_potential():
    cfg = FKConfig(theta=1.0, t=1.0, dt=1e-2, cap=1.0, n_paths=10, seed=13)
    with pytest.raises(DomainError):
        fk_eigen_consistency(PlantedCluster(1), 1.0, 1.0, 0.25, cfg, grid_n=7)
    with pytest.raises(DomainError):
        fk_eigen_consistency(zero, 1.0, 1.0, 1.5, cfg, grid_n=7)


def test_window_checked_on_realised_paths_before_evaluation(monkeypatch):
    # 包络检查放宽到零后，实际路径仍会走出窗口
    monkeypatch.setattr(config, "FK_ENVELOPE_SIGMAS", 0.0)

    def fail(*args, **kwargs):
        raise AssertionError("出界检查之前不应求值")

    monkeypatch.setattr(feynman_kac, "renormalized_values", fail)
    f = sample_field(Box.cube(1.05), 1.0, seed=14)
    cfg = FKConfig(theta=0.05, t=1.0, dt=0.01, cap=10.0, n_paths=50,
                   scheme=TruncationScheme(a=0.25, tail_radius=1.0), seed=14)
    with pytest.raises(OutOfWindowError) as err:
        quenched_moment(f, cfg)
    assert "最大位移" in str(err.value)


def test_realised_paths_inside_window_pass(monkeypatch):
    monkeypatch.setattr(config, "FK_ENVELOPE_SIGMAS", 0.0)
    f = sample_field(Box.cube(3.0), 1.0, seed=15)
    cfg = FKConfig(theta=0.05, t=0.01, dt=1e-3, cap=100.0, n_paths=32,
                   scheme=TruncationScheme(a=0.25, tail_radius=1.0), seed=15)
    assert math.isfinite(quenched_moment(f, cfg).mean)


def test_restricted_moment_below_unrestricted():
    base = FKConfig(theta=0.05, t=0.5, dt=1e-2, cap=100.0, n_paths=500, seed=16)
    free = quenched_moment(PlantedCluster(1), base)
    kept = quenched_moment(PlantedCluster(1), FKConfig(theta=0.05, t=0.5, dt=1e-2, cap=100.0,
                                                       n_paths=500, domain=Ball(1.0), seed=16))
    assert kept.mean <= free.mean
    assert kept.mean > 0


def test_planted_moment_non_decreasing_in_theta():
    means = []
    for theta in (0.0, 0.05, 0.1, 0.2):
        cfg = FKConfig(theta=theta, t=0.2, dt=1e-2, cap=100.0, n_paths=300,
                       start=(0.5, 0.0, 0.0), seed=17)
        means.append(quenched_moment(PlantedCluster(1), cfg).mean)
    assert means[0] == 1.0
    assert means == sorted(means)
