"""
Unit tests for Gaussian rectangle probabilities.
"""
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from src.errors import NumericalDegeneracyError, StructuralError
from src.gaussint import (
    BVN_ERR, GaussianIntegrator, ProbEstimate, bivariate_rect_prob, interval_mass, richtmyer_generator,
)
from src.geometry import HyperRect


@pytest.fixture
def integrator():
    """Integrator with the default tolerance."""
    return GaussianIntegrator({'solver': {'int_tol': 1e-4, 'int_seed': 0}})


def correlated_oracle(rho, rect):
    """P(rect) for a standard bivariate normal with correlation rho, by conditioning on the first coordinate."""
    scale = np.sqrt(1.0 - rho ** 2)

    def inner(x):
        return norm.pdf(x) * interval_mass((rect.lower[1] - rho * x) / scale, (rect.upper[1] - rho * x) / scale)

    value, _ = quad(inner, rect.lower[0], rect.upper[0], epsabs=1e-13)
    return value


def test_interval_mass_tails():
    """Test interval masses in both tails."""
    assert interval_mass(-1.0, 1.0) == pytest.approx(0.682689492137, abs=1e-12)
    assert interval_mass(38.0, 39.0) >= 0.0
    assert interval_mass(8.0, np.inf) == pytest.approx(norm.sf(8.0), rel=1e-10)


def test_one_dimensional(integrator):
    """Test the one-dimensional closed form."""
    estimate = integrator.mvn_rect_prob([0.0], [[1.0]], HyperRect([-1.0], [1.0]))
    assert estimate.value == pytest.approx(0.6826895, abs=1e-7)
    assert estimate.hi - estimate.lo <= 3e-15


def test_independent_square(integrator):
    """Test an independent square."""
    estimate = integrator.mvn_rect_prob([0.0, 0.0], np.eye(2), HyperRect([-1.0, -1.0], [1.0, 1.0]))
    assert estimate.value == pytest.approx(0.4660649, abs=1e-7)


def test_full_mass(integrator):
    """Test a rectangle holding all mass."""
    cov = np.array([[1.0, 0.3, 0.0], [0.3, 1.0, 0.2], [0.0, 0.2, 1.0]])
    estimate = integrator.mvn_rect_prob(np.zeros(3), cov, HyperRect.cube(50.0, 3))
    assert estimate.value == pytest.approx(1.0, abs=1e-12)


def test_correlated_against_quadrature(integrator):
    """Test a correlated pair against quadrature."""
    rect = HyperRect([-1.0, -0.5], [1.0, 2.0])
    oracle = correlated_oracle(0.5, rect)
    estimate = integrator.mvn_rect_prob([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], rect)
    assert estimate.err <= 1e-4
    assert abs(estimate.value - oracle) <= 1e-4
    assert estimate.lo <= oracle + 1e-6 and oracle - 1e-6 <= estimate.hi


def test_diagonal_high_dimension(integrator):
    """Test diagonal covariances in high dimension."""
    d = 40
    variances = np.linspace(0.5, 2.0, d)
    rect = HyperRect(-np.ones(d), 2.0 * np.ones(d))
    sd = np.sqrt(variances)
    expected = float(np.prod(norm.cdf(2.0 / sd) - norm.cdf(-1.0 / sd)))
    estimate = integrator.mvn_rect_prob(np.zeros(d), np.diag(variances), rect)
    assert estimate.value == pytest.approx(expected, abs=1e-6)


def test_prob_estimate_clamping():
    """Test estimate intervals are clamped to [0, 1]."""
    assert ProbEstimate(0.99, 0.05).hi == 1.0
    assert ProbEstimate(0.01, 0.05).lo == 0.0
    assert ProbEstimate(0.5, 0.1).lo == pytest.approx(0.4)


def test_not_positive_definite(integrator):
    """Test an indefinite covariance."""
    with pytest.raises(NumericalDegeneracyError):
        integrator.mvn_rect_prob([0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]], HyperRect([-1.0, -1.0], [1.0, 1.0]))


def test_dimension_mismatch(integrator):
    """Test mismatched dimensions."""
    with pytest.raises(StructuralError):
        integrator.mvn_rect_prob([0.0, 0.0], np.eye(3), HyperRect([-1.0, -1.0], [1.0, 1.0]))


def test_gradient_symmetric_is_zero(integrator):
    """Test the gradient vanishes at a symmetric mean."""
    grad = integrator.log_prob_grad([0.0, 0.0], np.eye(2), HyperRect([-1.0, -1.0], [1.0, 1.0]))
    assert np.max(np.abs(grad)) <= 1e-6


def test_gradient_half_line(integrator):
    """Test the gradient on a half line."""
    grad = integrator.log_prob_grad([0.0], [[1.0]], HyperRect([0.0], [50.0]))
    assert grad[0] == pytest.approx(0.797885, abs=1e-6)


def test_gradient_translation(integrator):
    """Test gradients are translation invariant."""
    cov = np.array([[1.0, 0.3], [0.3, 0.8]])
    rect = HyperRect([-1.0, 0.0], [0.5, 1.5])
    shift = np.array([0.25, -0.5])
    g1 = integrator.log_prob_grad([0.1, 0.2], cov, rect, h_step=1e-3)
    g2 = integrator.log_prob_grad(np.array([0.1, 0.2]) + shift, cov, rect.translate(shift), h_step=1e-3)
    assert g1 == pytest.approx(g2, abs=1e-6)


def test_deterministic_for_fixed_seed():
    """Test a fixed seed reproduces the estimate."""
    cov = np.array([[1.0, 0.5, 0.2], [0.5, 1.0, 0.1], [0.2, 0.1, 1.0]])
    rect = HyperRect([-1.0, -0.5, -2.0], [0.5, 1.0, 0.0])
    first = GaussianIntegrator({'int_seed': 3}).mvn_rect_prob(np.zeros(3), cov, rect)
    second = GaussianIntegrator({'int_seed': 3}).mvn_rect_prob(np.zeros(3), cov, rect)
    assert first == second


def test_monotone_in_rectangle(integrator):
    """Test monotonicity in the rectangle."""
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    small = integrator.mvn_rect_prob([0.0, 0.0], cov, HyperRect([-0.5, -0.5], [0.5, 0.5]))
    large = integrator.mvn_rect_prob([0.0, 0.0], cov, HyperRect([-1.0, -1.0], [1.0, 1.0]))
    assert small.value <= large.value + small.err + large.err


def test_translation_invariance(integrator):
    """Test translation invariance of the probability."""
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    rect = HyperRect([-1.0, -0.5], [1.0, 2.0])
    shift = np.array([3.0, -2.0])
    a = integrator.mvn_rect_prob([0.0, 0.0], cov, rect)
    b = integrator.mvn_rect_prob(shift, cov, rect.translate(shift))
    assert a.value == pytest.approx(b.value, abs=1e-10)


def test_log_concave_along_segment(integrator):
    """Test log-concavity along segments."""
    rect = HyperRect([-1.0], [1.0])
    for a, b in [(-3.0, 0.5), (0.0, 4.0), (-2.0, 2.0)]:
        pa = integrator.mvn_rect_prob([a], [[1.0]], rect).value
        pb = integrator.mvn_rect_prob([b], [[1.0]], rect).value
        pm = integrator.mvn_rect_prob([(a + b) / 2.0], [[1.0]], rect).value
        assert np.log(pm) >= 0.5 * (np.log(pa) + np.log(pb)) - 1e-12


def test_richtmyer_generator():
    """Fractional parts of sqrt(2), sqrt(3), sqrt(5)."""
    roots = np.sqrt([2.0, 3.0, 5.0])
    assert richtmyer_generator(3) == pytest.approx(roots - np.floor(roots))
    assert richtmyer_generator(3)[2] == pytest.approx(np.sqrt(5.0) - 2.0)
    assert richtmyer_generator(0).size == 0


def test_interval_form(integrator):
    """Test the interval form brackets quadrature."""
    lo, hi = integrator.mvn_rect_prob_interval([0.0, 0.0], [[1.0, 0.5], [0.5, 1.0]], HyperRect([-1.0, -0.5], [1.0, 2.0]))
    oracle = correlated_oracle(0.5, HyperRect([-1.0, -0.5], [1.0, 2.0]))
    assert 0.0 <= lo <= hi <= 1.0
    assert lo - 1e-6 <= oracle <= hi + 1e-6


@pytest.mark.parametrize('rho', [-0.9, -0.3, 0.0, 0.5, 0.92])
@pytest.mark.parametrize('lower, upper', [
    ([-1.0, -0.5], [1.0, 2.0]),
    ([0.5, 1.0], [3.0, 1.5]),
    ([-np.inf, -2.0], [0.0, np.inf]),
    ([2.5, -4.0], [6.0, -3.0]),
])
def test_bivariate_quadrature_matches_oracle(rho, lower, upper):
    """Closed-form bivariate masses agree with nested one-dimensional quadrature."""
    rect = HyperRect(lower, upper)
    assert bivariate_rect_prob(lower, upper, rho) == pytest.approx(correlated_oracle(rho, rect), abs=1e-10)


def test_bivariate_quadrature_known_values():
    """P(X > 0, Y > 0) = 1/4 + asin(rho) / (2 pi)."""
    for rho in (-0.7, 0.2, 0.9):
        expected = 0.25 + np.arcsin(rho) / (2.0 * np.pi)
        assert bivariate_rect_prob([0.0, 0.0], [np.inf, np.inf], rho) == pytest.approx(expected, abs=1e-13)
    with pytest.raises(ValueError):
        bivariate_rect_prob([0.0, 0.0], [1.0, 1.0], 0.95)


def test_two_dimensional_path_is_exact(integrator):
    """Correlated pairs skip the lattice; strongly correlated pairs still use it."""
    cov = np.array([[2.0, 0.6], [0.6, 0.5]])
    rect = HyperRect([-1.0, 0.0], [1.5, 1.0])
    estimate = integrator.mvn_rect_prob([0.3, 0.1], cov, rect)
    assert estimate.err == BVN_ERR
    sd = np.sqrt(np.diag(cov))
    rho = 0.6 / (sd[0] * sd[1])
    shifted = HyperRect((rect.lower - [0.3, 0.1]) / sd, (rect.upper - [0.3, 0.1]) / sd)
    assert estimate.value == pytest.approx(correlated_oracle(rho, shifted), abs=1e-10)

    near_singular = np.array([[1.0, 0.99], [0.99, 1.0]])
    rect = HyperRect([-1.0, -0.5], [1.0, 2.0])
    estimate = integrator.mvn_rect_prob([0.0, 0.0], near_singular, rect)
    oracle = correlated_oracle(0.99, rect)
    assert estimate.lo - 1e-6 <= oracle <= estimate.hi + 1e-6


def test_shift_cache_is_shared_across_threads():
    """Test concurrent callers get the same cached shifts."""
    integrator = GaussianIntegrator({'int_seed': 4})
    with ThreadPoolExecutor(max_workers=4) as pool:
        shifts = list(pool.map(lambda _: integrator._shifts(3), range(16)))
    assert all(s is shifts[0] for s in shifts)
    assert shifts[0].shape == (integrator.n_shifts, 3)
