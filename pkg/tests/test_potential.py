import math

import numpy as np
import pytest

from lab_errors import ConfigurationError, DomainError, OutOfWindowError
from poisson_field import Box, planted_field, sample_field
from potential import (GAUSSIAN_SURROGATE, PROFILE, TruncationScheme, compensator_Ca, eval_renormalized,
                       eval_singular_local, eval_truncated_field, kernel_La,
                       kernel_radial, mgf_monte_carlo, psi, renormalized_values,
                       sup_field_decay_probe, truncated_mgf_exact, truncated_values)
from replicates import replicate_rng


@pytest.mark.parametrize("lam, expected", [(0.0, 1.0), (1.0, 1.0), (2.0, 0.5), (3.0, 0.0), (7.0, 0.0)])
def test_cutoff_profile_values(lam, expected):
    assert PROFILE(lam) == pytest.approx(expected)


def test_cutoff_profile_is_monotone():
    lam = np.linspace(0.0, 4.0, 401)
    assert np.all(np.diff(PROFILE(lam)) <= 0)


@pytest.mark.parametrize("r, expected", [(0.5, 0.0), (2.0, 1.0 / 8.0), (4.0, 1.0 / 16.0)])
def test_kernel_radial(r, expected):
    assert kernel_radial(r, 1.0) == pytest.approx(expected)


def test_kernel_La_depends_on_norm_only():
    scheme = TruncationScheme(a=1.0)
    assert kernel_La((0.0, 3.0, 4.0), scheme) == pytest.approx(1.0 / 25.0)
    assert kernel_La((2.0, 0.0, 0.0), scheme) == kernel_La((0.0, 0.0, -2.0), scheme)
    assert kernel_La((0.5, 0.5, 0.0), scheme) == 0.0


def test_compensator():
    assert compensator_Ca(1.0) == pytest.approx(8.0 * math.pi, rel=1e-10)
    assert compensator_Ca(0.5) == pytest.approx(4.0 * math.pi, rel=1e-10)


def test_psi_small_argument():
    for lam in [1e-8, -1e-6, 1e-4]:
        assert psi(lam) == pytest.approx(lam * lam / 2.0, rel=1e-3)
    assert psi(1.0) == pytest.approx(math.e - 2.0)


def test_scheme_rejects_short_tail_radius():
    with pytest.raises(ConfigurationError) as err:
        TruncationScheme(a=1.0, tail_radius=2.0)
    assert err.value.key == "tail_radius"
    with pytest.raises(ConfigurationError):
        TruncationScheme(a=1.0, p=3.0)
    with pytest.raises(ConfigurationError):
        TruncationScheme(a=1.0, tail_policy="ignore")


def test_tail_std():
    assert TruncationScheme(a=1.0).tail_std == pytest.approx(math.sqrt(math.pi))


def test_empty_field_values():
    scheme = TruncationScheme(a=1.0, tail_radius=4.0)
    f = sample_field(Box.cube(10.0), 0.0, seed=0)
    assert eval_truncated_field(f, (0, 0, 0), scheme).value == pytest.approx(-8.0 * math.pi, rel=1e-9)
    assert eval_renormalized(f, (1, 2, 3), scheme).value == pytest.approx(-16.0 * math.pi, rel=1e-9)
    assert eval_singular_local(f, (0, 0, 0), scheme) == 0.0


def test_planted_point_values():
    scheme = TruncationScheme(a=1.0)
    f = planted_field(1, Box.cube(10.0), center=(0.5, 0.0, 0.0))
    assert eval_singular_local(f, (0, 0, 0), scheme) == pytest.approx(4.0)
    assert eval_renormalized(f, (0, 0, 0), scheme).value == pytest.approx(4.0 - 16.0 * math.pi, rel=1e-9)
    assert math.isinf(eval_renormalized(f, (0.5, 0, 0), scheme).value)


def test_evaluation_outside_window():
    scheme = TruncationScheme(a=1.0)
    f = sample_field(Box.cube(5.0), 0.5, seed=1)
    with pytest.raises(OutOfWindowError):
        truncated_values(f, [(2.0, 0.0, 0.0)], scheme)


def test_batch_matches_pointwise():
    scheme = TruncationScheme(a=0.5)
    f = sample_field(Box.cube(4.0), 1.0, seed=5)
    xs = np.array([[0.1, 0.2, 0.3], [-0.4, 0.0, 0.9], [1.0, -1.0, 0.0]])
    batch = renormalized_values(f, xs, scheme)
    single = [eval_renormalized(f, x, scheme).value for x in xs]
    np.testing.assert_allclose(batch, single, rtol=1e-10, atol=1e-10)


def test_gaussian_surrogate_is_reproducible():
    scheme = TruncationScheme(a=1.0, tail_policy=GAUSSIAN_SURROGATE)
    f = sample_field(Box.cube(5.0), 1.0, seed=2)
    a = eval_truncated_field(f, (0, 0, 0), scheme).value
    b = eval_truncated_field(f, (0, 0, 0), scheme).value
    drop = eval_truncated_field(f, (0, 0, 0), TruncationScheme(a=1.0)).value
    assert a == b
    assert a != drop


def test_mgf_exact_trivial_cases():
    scheme = TruncationScheme(a=1.0)
    assert truncated_mgf_exact(0.0, scheme) == 1.0
    with pytest.raises(DomainError):
        truncated_mgf_exact(0.5, scheme, sign=2)
    # 截断到 a 时没有点能贡献
    assert truncated_mgf_exact(0.5, scheme, upper=1.0) == pytest.approx(1.0)


def test_mgf_monte_carlo_matches_exact():
    scheme = TruncationScheme(a=1.0, tail_radius=4.0)
    exact = truncated_mgf_exact(0.5, scheme, upper=scheme.tail_radius)
    est = mgf_monte_carlo(0.5, scheme, replicates=2000, seed=17)
    assert abs(est.mean - exact) < 4.0 * est.stderr


def test_sup_field_decay_probe_shape():
    out = sup_field_decay_probe(1.0, [2.0, 3.0], replicates=2, seed=3, min_points=50)
    assert [R for R, _ in out] == [2.0, 3.0]
    for _, ratios in out:
        assert ratios.shape == (2,)
        assert np.all(np.isfinite(ratios)) and np.all(ratios > 0)
    with pytest.raises(DomainError):
        sup_field_decay_probe(1.0, [3.0, 2.0], replicates=1, seed=0)


def test_cutoff_derivative_bounds():
    grid = np.linspace(0.0, 4.0, 10001)
    d = PROFILE.derivative(grid)
    assert np.all(d >= -1.0) and np.all(d <= 0.0)
    assert d.min() == pytest.approx(-0.75, abs=1e-6)
    # 与数值差分一致
    np.testing.assert_allclose(np.gradient(PROFILE.value(grid), grid)[1:-1], d[1:-1], atol=1e-3)


def test_decomposition_identity_on_random_inputs():
    for i in range(100):
        rng = replicate_rng(41, i, sub=1)
        scheme = TruncationScheme(a=rng.uniform(0.25, 1.0), epsilon=rng.uniform(0.1, 1.0))
        f = sample_field(Box.cube(6.0), rng.uniform(0.2, 3.0), seed=41, stream=i)
        x = rng.uniform(-1.0, 1.0, size=3)
        whole = eval_renormalized(f, x, scheme).value
        parts = (eval_truncated_field(f, x, scheme).value + eval_singular_local(f, x, scheme)
                 - scheme.epsilon * compensator_Ca(scheme.a, scheme.p))
        assert abs(whole - parts) <= 1e-12 * max(1.0, abs(whole))


def test_renormalized_value_does_not_depend_on_a():
    # 3a ≤ ρ 时两部分相加恰为 Σ|y−x|^{-2} − 4περ
    f = sample_field(Box.cube(5.0), 1.0, seed=42)
    xs = replicate_rng(42, 0, sub=1).uniform(-1.0, 1.0, size=(20, 3))
    fine = renormalized_values(f, xs, TruncationScheme(a=0.5, tail_radius=3.0))
    coarse = renormalized_values(f, xs, TruncationScheme(a=1.0, tail_radius=3.0))
    np.testing.assert_allclose(fine, coarse, rtol=0, atol=1e-7)


MGF_CASES = [(0.5, 2.0, 0.5), (1.0, 4.0, 0.25), (0.25, 1.0, 1.0)]


@pytest.mark.parametrize("theta, a, eps", MGF_CASES)
def test_mgf_with_gaussian_tail_matches_full_space(theta, a, eps):
    scheme = TruncationScheme(a=a, epsilon=eps, tail_policy=GAUSSIAN_SURROGATE)
    exact = truncated_mgf_exact(theta, scheme)
    est = mgf_monte_carlo(theta, scheme, replicates=4000, seed=43)
    assert abs(est.mean - exact) < 4.0 * est.stderr


@pytest.mark.slow
@pytest.mark.parametrize("theta, a, eps", MGF_CASES)
def test_mgf_with_gaussian_tail_full_size(theta, a, eps):
    scheme = TruncationScheme(a=a, epsilon=eps, tail_policy=GAUSSIAN_SURROGATE)
    exact = truncated_mgf_exact(theta, scheme)
    est = mgf_monte_carlo(theta, scheme, replicates=100000, seed=44)
    assert abs(est.mean - exact) < 3.0 * est.stderr


@pytest.mark.slow
def test_sup_ratio_decreases_from_small_to_large_R():
    out = dict(sup_field_decay_probe(1.0, [4.0, 64.0], replicates=100, seed=45, x_density=0.01))
    assert np.mean(out[64.0] < out[4.0]) >= 0.9
