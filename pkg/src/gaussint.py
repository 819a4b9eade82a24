"""
Multivariate normal probabilities of hyperrectangles.

One dimension and diagonal covariances are evaluated in closed form, two dimensions by
Gauss-Legendre quadrature of the bivariate orthant formula. The general case uses
Genz's sequential conditioning with a randomly shifted Richtmyer lattice; the shifts depend
only on the seed and the dimension, so nearby calls share their random numbers.
"""
from dataclasses import dataclass
from typing import Dict, Optional, Tuple
import logging
import threading

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import NumericalDegeneracyError, ProbabilityUnderflowError, StructuralError
from .geometry import HyperRect

logger = logging.getLogger(__name__)

EXACT_ERR = 1e-15
UNDERFLOW = 1e-300
_TINY = np.finfo(float).tiny

# bivariate quadrature is used up to this correlation; beyond it the integrand peaks at the end point
BVN_MAX_CORR = 0.925
BVN_ERR = 1e-13
BVN_CLIP = 40.0
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(32)


@dataclass(frozen=True)
class ProbEstimate:
    value: float
    err: float

    @property
    def lo(self) -> float:
        """Lower end of the error interval, clamped to [0, 1]."""
        return float(min(max(self.value - self.err, 0.0), 1.0))

    @property
    def hi(self) -> float:
        """Upper end of the error interval, clamped to [0, 1]."""
        return float(min(max(self.value + self.err, 0.0), 1.0))


def interval_mass(a, b):
    """P(a <= Z <= b) for standard normal Z, accurate in both tails."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    upper_tail = ndtr(-a) - ndtr(-b)
    lower_tail = ndtr(b) - ndtr(a)
    return np.maximum(np.where(a > 0, upper_tail, lower_tail), 0.0)


def _upper_orthant(h: np.ndarray, k: np.ndarray, rho: float) -> np.ndarray:
    """
    P(X > h, Y > k) for standard normals with correlation rho,

        Phi(-h) Phi(-k) + 1/(2 pi) int_0^{asin rho} exp(-(h^2 - 2 h k sin t + k^2) / (2 cos^2 t)) dt
    """
    half = 0.5 * np.arcsin(rho)
    theta = half * (_GL_NODES + 1.0)
    sin_t = np.sin(theta)[None, :]
    cos2 = np.cos(theta)[None, :] ** 2
    h = h[:, None]
    k = k[:, None]
    integrand = np.exp(-(h * h - 2.0 * h * k * sin_t + k * k) / (2.0 * cos2))
    correction = half * (integrand @ _GL_WEIGHTS) / (2.0 * np.pi)
    return ndtr(-h[:, 0]) * ndtr(-k[:, 0]) + correction


def bivariate_rect_prob(lo, hi, rho: float) -> float:
    """P(lo <= (X, Y) <= hi) for standard normals with correlation |rho| <= BVN_MAX_CORR."""
    if abs(rho) > BVN_MAX_CORR:
        raise ValueError(f"correlation {rho:.4f} is outside the quadrature range +-{BVN_MAX_CORR}")
    lo = np.clip(np.asarray(lo, dtype=float), -BVN_CLIP, BVN_CLIP)
    hi = np.clip(np.asarray(hi, dtype=float), -BVN_CLIP, BVN_CLIP)
    h = np.array([lo[0], hi[0], lo[0], hi[0]])
    k = np.array([lo[1], lo[1], hi[1], hi[1]])
    corners = _upper_orthant(h, k, rho)
    value = corners[0] - corners[1] - corners[2] + corners[3]
    return float(min(max(value, 0.0), 1.0))


def _primes(count: int) -> np.ndarray:
    """First `count` primes by sieve."""
    limit = max(16, int(count * (np.log(count + 2) + np.log(np.log(count + 3))) * 1.3) + 10)
    while True:
        sieve = np.ones(limit + 1, dtype=bool)
        sieve[:2] = False
        for p in range(2, int(limit ** 0.5) + 1):
            if sieve[p]:
                sieve[p * p::p] = False
        found = np.flatnonzero(sieve)
        if found.size >= count:
            return found[:count]
        limit *= 2


def richtmyer_generator(dim: int) -> np.ndarray:
    """Fractional parts of square roots of the first `dim` primes."""
    if dim == 0:
        return np.zeros(0)
    roots = np.sqrt(_primes(dim).astype(float))
    return roots - np.floor(roots)


@dataclass
class _Plan:
    """Integration order and factor chosen at one mean, reused for finite differences."""
    order: np.ndarray
    chol: Optional[np.ndarray]
    diagonal: bool
    dropped_err: float


class GaussianIntegrator:
    """Rectangle probabilities N(mean, cov)(rect) with absolute error radii."""

    def __init__(self, config: Optional[Dict] = None):
        """Read tolerance, seed and lattice sizes from the solver config."""
        solver = (config or {}).get('solver', config or {})
        self.tol = float(solver.get('int_tol', 1e-4))
        self.seed = int(solver.get('int_seed', 0))
        self.n_shifts = int(solver.get('n_shifts', 12))
        self.max_points = int(solver.get('max_points', 2 ** 20))
        self.fd_step = float(solver.get('fd_step', 1e-4))
        self.initial_points = int(solver.get('initial_points', 256))
        if self.n_shifts < 2:
            raise ValueError("n_shifts must be at least 2 to estimate the error")
        self._lock = threading.Lock()
        self._shift_cache: Dict[int, np.ndarray] = {}

    def _shifts(self, dim: int) -> np.ndarray:
        """Random lattice shifts for one dimension, drawn once per integrator."""
        shifts = self._shift_cache.get(dim)
        if shifts is None:
            rng = np.random.default_rng([self.seed, dim])
            shifts = rng.random((self.n_shifts, dim))
            with self._lock:
                shifts = self._shift_cache.setdefault(dim, shifts)
        return shifts

    @staticmethod
    def _check_inputs(mean, cov, rect: HyperRect):
        """Coerce inputs to arrays and check their dimensions agree."""
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        d = mean.size
        if cov.shape != (d, d) or rect.dim != d:
            raise StructuralError(f"dimension mismatch: mean {d}, cov {cov.shape}, rect {rect.dim}")
        return mean, cov

    def _plan(self, mean: np.ndarray, cov: np.ndarray, rect: HyperRect) -> Tuple[_Plan, np.ndarray]:
        """Choose integration order, drop full-mass coordinates and factor the covariance."""
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        if np.any(sd <= 0):
            raise NumericalDegeneracyError("covariance has a zero variance", min_eigenvalue=float(np.diag(cov).min()))
        masses = interval_mass((rect.lower - mean) / sd, (rect.upper - mean) / sd)

        # coordinates holding all their mass are marginalized out
        dropped = masses >= 1.0 - EXACT_ERR
        keep = np.flatnonzero(~dropped)
        dropped_err = float(np.sum(1.0 - masses[dropped]))
        order = keep[np.argsort(masses[keep], kind='stable')]

        sub = cov[np.ix_(order, order)]
        diagonal = bool(np.all(sub == np.diag(np.diag(sub))))
        chol = None
        if order.size > 1 and not diagonal:
            try:
                chol = np.linalg.cholesky(sub)
            except np.linalg.LinAlgError:
                min_eig = float(np.linalg.eigvalsh(cov).min())
                raise NumericalDegeneracyError(
                    f"covariance is not positive definite (smallest eigenvalue {min_eig:.3e})",
                    min_eigenvalue=min_eig,
                )
        return _Plan(order, chol, diagonal, dropped_err), masses

    def _sequential(self, chol: np.ndarray, lo: np.ndarray, hi: np.ndarray, points: int) -> Tuple[float, float]:
        """Randomized lattice estimate of Genz's transformed integrand; returns (value, 3 standard errors)."""
        d = lo.size
        generator = richtmyer_generator(d - 1)
        shifts = self._shifts(d - 1)
        k = np.arange(1, points + 1, dtype=float)
        c0 = ndtr(lo[0] / chol[0, 0])
        d0 = ndtr(hi[0] / chol[0, 0])
        # rows are shifts, columns lattice points
        c = np.full((self.n_shifts, points), c0)
        dc = np.full((self.n_shifts, points), max(d0 - c0, 0.0))
        pv = dc.copy()
        y = np.empty((d - 1, self.n_shifts, points))
        for i in range(1, d):
            z = generator[i - 1] * k[None, :] + shifts[:, i - 1][:, None]
            z -= np.floor(z)
            w = np.abs(2.0 * z - 1.0)
            y[i - 1] = ndtri(np.clip(c + w * dc, _TINY, 1.0 - 1e-16))
            s = np.tensordot(chol[i, :i], y[:i], axes=(0, 0))
            c = ndtr((lo[i] - s) / chol[i, i])
            dc = np.maximum(ndtr((hi[i] - s) / chol[i, i]) - c, 0.0)
            pv = pv * dc
        estimates = pv.mean(axis=1)
        value = float(estimates.mean())
        err = float(3.0 * estimates.std(ddof=1) / np.sqrt(self.n_shifts))
        return value, err

    def _evaluate(self, plan: _Plan, masses: np.ndarray, mean: np.ndarray, cov: np.ndarray,
                  rect: HyperRect, points: Optional[int]) -> Tuple[ProbEstimate, int]:
        """Evaluate a plan at one mean; returns the estimate and the lattice size used."""
        order = plan.order
        if order.size == 0:
            return ProbEstimate(float(np.prod(masses)), plan.dropped_err + EXACT_ERR), 0
        if order.size == 1 or plan.diagonal:
            sd = np.sqrt(np.diag(cov)[order])
            m = interval_mass((rect.lower[order] - mean[order]) / sd, (rect.upper[order] - mean[order]) / sd)
            return ProbEstimate(float(np.prod(m)), plan.dropped_err + EXACT_ERR * order.size), 0

        lower_bound = max(0.0, 1.0 - float(np.sum(1.0 - masses)))
        upper_bound = float(masses.min())
        if upper_bound < UNDERFLOW:
            return ProbEstimate(0.0, upper_bound + plan.dropped_err), 0

        lo = rect.lower[order] - mean[order]
        hi = rect.upper[order] - mean[order]
        if order.size == 2:
            sd = np.sqrt(np.diag(cov)[order])
            rho = float(cov[order[0], order[1]] / (sd[0] * sd[1]))
            if abs(rho) <= BVN_MAX_CORR:
                value = bivariate_rect_prob(lo / sd, hi / sd, rho)
                value = min(max(value, lower_bound), upper_bound)
                return ProbEstimate(value, BVN_ERR + plan.dropped_err), 0

        cap = max(self.max_points // self.n_shifts, 1)
        fixed = points is not None
        m = points if fixed else min(self.initial_points, cap)
        while True:
            value, err = self._sequential(plan.chol, lo, hi, m)
            if fixed or err <= self.tol or 2 * m > cap:
                break
            m *= 2
        if not fixed and err > self.tol:
            logger.debug(f"Point cap reached in dimension {order.size}: err {err:.2e} > tol {self.tol:.2e}")
        value = min(max(value, lower_bound), upper_bound)
        return ProbEstimate(value, err + plan.dropped_err), m

    def mvn_rect_prob(self, mean, cov, rect: HyperRect) -> ProbEstimate:
        """P(Z in rect) for Z ~ N(mean, cov), with an absolute error radius."""
        mean, cov = self._check_inputs(mean, cov, rect)
        plan, masses = self._plan(mean, cov, rect)
        estimate, _ = self._evaluate(plan, masses, mean, cov, rect, None)
        return estimate

    def mvn_rect_prob_interval(self, mean, cov, rect: HyperRect) -> Tuple[float, float]:
        """P(Z in rect) as a [lo, hi] interval."""
        estimate = self.mvn_rect_prob(mean, cov, rect)
        return estimate.lo, estimate.hi

    def log_prob_grad(self, mean, cov, rect: HyperRect, h_step: Optional[float] = None) -> np.ndarray:
        """
        Central finite-difference gradient of log P with respect to the mean.

        The integration order and point count chosen at `mean` are reused for every
        perturbed evaluation so the differences see the same lattice.
        """
        mean, cov = self._check_inputs(mean, cov, rect)
        if h_step is None:
            h_step = self.fd_step * (1.0 + float(np.max(np.abs(mean))))
        plan, masses = self._plan(mean, cov, rect)
        center, points = self._evaluate(plan, masses, mean, cov, rect, None)
        if center.value < UNDERFLOW:
            raise ProbabilityUnderflowError(f"rectangle probability {center.value:.3e} underflows at mean {mean}")

        grad = np.zeros(mean.size)
        for i in range(mean.size):
            step = np.zeros(mean.size)
            step[i] = h_step
            values = []
            for sign in (1.0, -1.0):
                shifted = mean + sign * step
                sd = np.sqrt(np.diag(cov))
                shifted_masses = interval_mass((rect.lower - shifted) / sd, (rect.upper - shifted) / sd)
                estimate, _ = self._evaluate(plan, shifted_masses, shifted, cov, rect, points or None)
                if estimate.value < UNDERFLOW:
                    raise ProbabilityUnderflowError(
                        f"rectangle probability {estimate.value:.3e} underflows near mean {mean}"
                    )
                values.append(estimate.value)
            grad[i] = (np.log(values[0]) - np.log(values[1])) / (2.0 * h_step)
        return grad
