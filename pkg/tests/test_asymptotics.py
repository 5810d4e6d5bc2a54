import math

import numpy as np
import pandas as pd
import pytest

from asymptotics import (CONST, CONVERGENT, DIVERGENT, INCONCLUSIVE, INFINITE, LIMINF, LIMSUP,
                         LOG_POW, T_MIN, ZERO, SlowlyVaryingSpec, anderson_index,
                         extreme_scaling_experiment, k_of_theta, liminf_integral_test,
                         limsup_integral_test, moment_finiteness, parse_slowly_varying,
                         predicted_normalization, rate_verdict)
from lab_errors import ConfigurationError, DomainError

S = SlowlyVaryingSpec


def tabulate(spec, n=200):
    t = np.geomspace(T_MIN, 1e12, n)
    return S.from_table(t, spec(t))


# ==================== k 与 i ====================

@pytest.mark.parametrize("theta, k", [(1.0 / 24.0, 3), (0.05, 2), (0.06, 2), (0.01, 12)])
def test_k_of_theta(theta, k):
    assert k_of_theta(theta) == k


@pytest.mark.parametrize("k", range(2, 11))
def test_k_at_interval_endpoints(k):
    assert k_of_theta(1.0 / (8.0 * k)) == k


def test_k_is_non_increasing():
    thetas = np.linspace(1e-4, 1.0 / 16.0 - 1e-6, 10000)
    ks = [k_of_theta(t) for t in thetas]
    assert all(b <= a for a, b in zip(ks, ks[1:]))


@pytest.mark.parametrize("theta", [0.0, 1.0 / 16.0, 0.1, -0.01])
def test_k_outside_range(theta):
    with pytest.raises(DomainError):
        k_of_theta(theta)


def test_anderson_index():
    assert anderson_index(0.1, 1.0) == 2
    assert anderson_index(0.1, 2.0) == 5
    assert anderson_index(0.05, 0.5) == k_of_theta(0.05)
    with pytest.raises(DomainError):
        anderson_index(0.125, 1.0)


@pytest.mark.parametrize("theta, kappa, expected", [
    (0.05, 0.5, "finite"), (0.07, 0.5, "infinite"), (0.1, 1.0, "finite"), (1.0 / 16.0, 0.5, "critical"),
])
def test_moment_finiteness(theta, kappa, expected):
    assert moment_finiteness(theta, kappa) == expected


# ==================== 慢变函数 ====================

@pytest.mark.parametrize("text, family, a", [
    ("const", CONST, 1.0), ("const:2.5", CONST, 2.5), ("logpow:2", LOG_POW, 2.0),
])
def test_parse_slowly_varying(text, family, a):
    spec = parse_slowly_varying(text)
    assert (spec.family, spec.a) == (family, a)


@pytest.mark.parametrize("text", ["bogus", "logpow", "logpow:x", "table:", "const:-1"])
def test_parse_rejects(text):
    with pytest.raises(ConfigurationError) as err:
        parse_slowly_varying(text)
    assert err.value.key == "l"


def test_evaluation_domain():
    assert S.log_pow(2.0)(math.exp(3.0)) == pytest.approx(9.0)
    assert S.loglog_pow(1.0)(math.exp(math.e)) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        S.const()(5.0)


def test_table_interpolation_and_horizon():
    spec = tabulate(S.log_pow(2.0))
    assert spec.horizon == pytest.approx(1e12)
    assert spec(1e6) == pytest.approx(math.log(1e6) ** 2, rel=1e-3)
    with pytest.raises(DomainError):
        spec(1e13)


def test_table_validation():
    t = np.geomspace(T_MIN, 1e6, 10)
    with pytest.raises(ConfigurationError):
        S.from_table(t[:3], np.ones(3))
    with pytest.raises(ConfigurationError):
        S.from_table(t / 2.0, np.ones(10))
    with pytest.raises(ConfigurationError):
        S.from_table(t, -np.ones(10))


def test_table_from_csv(tmp_path):
    t = np.geomspace(T_MIN, 1e12, 200)
    path = tmp_path / "l.csv"
    pd.DataFrame({"t": t, "l": np.log(t) ** 2}).to_csv(path, index=False)
    spec = parse_slowly_varying(f"table:{path}")
    res = limsup_integral_test(spec)
    assert res.method == "numeric"
    assert (res.verdict, res.branch) == (CONVERGENT, ZERO)
    with pytest.raises(ConfigurationError):
        parse_slowly_varying(f"table:{tmp_path / 'missing.csv'}")


# ==================== 积分判别 ====================

@pytest.mark.parametrize("spec, branch", [
    (S.log_pow(2.0), ZERO), (S.log_pow(1.0), INFINITE), (S.log_pow(0.5), INFINITE),
    (S.const(), INFINITE), (S.loglog_pow(3.0), INFINITE), (S.log_times_loglog_pow(1.5), ZERO),
    (S.log_times_loglog_pow(1.0), INFINITE),
])
def test_limsup_symbolic(spec, branch):
    assert limsup_integral_test(spec).branch == branch


@pytest.mark.parametrize("spec, branch", [
    (S.const(), ZERO), (S.loglog_pow(1.0), ZERO), (S.loglog_pow(0.5), ZERO),
    (S.loglog_pow(2.0), INFINITE), (S.log_pow(2.0), INFINITE), (S.log_times_loglog_pow(1.0), INFINITE),
])
def test_liminf_symbolic(spec, branch):
    assert liminf_integral_test(spec).branch == branch


BUILTINS = [S.const(), S.const(3.0), S.log_pow(0.5), S.log_pow(1.0), S.log_pow(2.0),
            S.loglog_pow(0.5), S.loglog_pow(1.0), S.loglog_pow(2.0),
            S.log_times_loglog_pow(1.0), S.log_times_loglog_pow(1.5)]


@pytest.mark.parametrize("spec", BUILTINS, ids=lambda s: s.label)
@pytest.mark.parametrize("test", [limsup_integral_test, liminf_integral_test])
def test_numeric_never_contradicts_symbolic(spec, test):
    numeric = test(tabulate(spec))
    assert numeric.verdict in (test(spec).verdict, INCONCLUSIVE)
    assert numeric.partial_integral > 0


@pytest.mark.parametrize("spec, verdict", [
    (S.const(), DIVERGENT), (S.log_pow(2.0), CONVERGENT), (S.log_pow(0.5), DIVERGENT),
    (S.log_pow(1.0), DIVERGENT), (S.loglog_pow(1.0), DIVERGENT),
    (S.log_times_loglog_pow(1.5), CONVERGENT),
], ids=lambda x: getattr(x, "label", x))
def test_numeric_limsup_clear_cases(spec, verdict):
    assert limsup_integral_test(tabulate(spec)).verdict == verdict


@pytest.mark.parametrize("spec, verdict", [
    (S.const(), DIVERGENT), (S.loglog_pow(0.5), DIVERGENT), (S.loglog_pow(2.0), CONVERGENT),
    (S.log_pow(2.0), CONVERGENT), (S.log_times_loglog_pow(1.5), CONVERGENT),
], ids=lambda x: getattr(x, "label", x))
def test_numeric_liminf_clear_cases(spec, verdict):
    assert liminf_integral_test(tabulate(spec)).verdict == verdict


# ==================== 速率结论 ====================

def test_rate_verdict_example():
    v = rate_verdict(0.05, parse_slowly_varying("logpow:2"))
    assert v.k == 2
    assert v.time_exponent == pytest.approx(3.0)
    assert v.l_exponent == pytest.approx(2.0 / 3.0)
    assert v.branch == ZERO


def test_rate_verdict_liminf_and_kappa():
    v = rate_verdict(0.1, S.const(), side=LIMINF, kappa=1.0)
    assert v.k == 2
    assert v.branch == ZERO
    assert v.to_dict()["kappa"] == 1.0
    with pytest.raises(ConfigurationError):
        rate_verdict(0.05, S.const(), side="lim")


def test_predicted_normalization():
    const = S.const()
    assert predicted_normalization(0.05, const, 100.0) == pytest.approx(1e6)
    assert predicted_normalization(1.0 / 24.0, const, 100.0) == pytest.approx(1e4)
    l = S.log_pow(1.0)
    sup = predicted_normalization(0.05, l, 100.0, LIMSUP)
    inf = predicted_normalization(0.05, l, 100.0, LIMINF)
    assert sup * inf == pytest.approx(100.0 ** 6)
    assert sup > inf
    with pytest.raises(DomainError):
        predicted_normalization(0.05, const, 5.0)


def test_normalization_constant_within_k_interval():
    l = S.log_pow(2.0)
    a = predicted_normalization(0.045, l, 1e4)
    b = predicted_normalization(0.06, l, 1e4)
    assert a == b


# ==================== 极值尺度实验 ====================

def test_extremes_reject_overlapping_cells():
    with pytest.raises(ConfigurationError) as err:
        extreme_scaling_experiment([1], delta=1.0, r=1.0, replicates=10, seed=0)
    assert err.value.key == "r"


def test_extremes_exact_column():
    res = extreme_scaling_experiment([1, 2, 3], delta=1.0, r=1.5, replicates=20, seed=1)
    table = res.table
    assert table["num_cells"].tolist()[0] == 1
    assert table["p_exact"].iloc[0] == pytest.approx(0.0162, abs=5e-4)
    assert np.all(np.diff(table["p_any_exact"]) >= 0)
    assert table["p_any_exact"].iloc[-1] == pytest.approx(1.0)


def test_extremes_exact_slope():
    res = extreme_scaling_experiment(range(3, 6), delta=1.0, r=1.5, replicates=1, seed=2)
    assert -3.5 <= res.exact_slope <= -2.5


def test_extremes_empirical_matches_exact():
    res = extreme_scaling_experiment([1, 2, 3], delta=1.0, r=1.5, replicates=2000, seed=3)
    for _, row in res.table.iterrows():
        assert abs(row["p_emp"] - row["p_exact"]) <= 4.0 * row["stderr"] + 1e-12


def test_extremes_are_thread_invariant():
    kwargs = dict(n_range=[1, 2], delta=1.0, r=1.5, replicates=300, seed=4)
    a = extreme_scaling_experiment(threads=1, **kwargs)
    b = extreme_scaling_experiment(threads=4, **kwargs)
    pd.testing.assert_frame_equal(a.table, b.table)
