"""
IMC abstraction of the sampling behaviour of a stochastic PETC system.

States are (cell, s) pairs, s being the interevent time that led into the cell, plus one
absorbing unsafe state for everything outside X. Transition intervals bound

    Pr(zeta(tau(x); x) in R', tau(x) = s')   uniformly over x in R

and depend on the source cell only, so every (R, s) row of a cell is the same.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union
import logging
import threading

import numpy as np
from scipy import sparse

from .errors import AbstractionError, ConfigError
from .gaussint import EXACT_ERR, GaussianIntegrator, interval_mass
from .geometry import HyperRect, Partition, exact_p_vertices, p1_p2_boxes, phi_cube
from .imc import AbstractState, IntervalMarkovChain, state_index
from .meanopt import MeanOptimizer
from .model import InitialDistribution, PETCSystem, RewardSpec, ValidationReport, validate_system
from .moments import MomentCalculator

logger = logging.getLogger(__name__)

Bounds = Tuple[float, float]
PHI = 'phi'

SOUNDNESS = (
    "bounds are sound up to integrator confidence: every Gaussian integral carries a "
    "3-standard-error radius from randomized lattice shifts"
)


def _clamp(value: float) -> float:
    """Clip a probability bound to [0, 1]."""
    return float(min(max(value, 0.0), 1.0))


def _key(R: HyperRect) -> Tuple[bytes, bytes]:
    """Hashable cache key of a box."""
    return R.lower.tobytes(), R.upper.tobytes()


@dataclass(frozen=True)
class TransitionInterval:
    check: float
    hat: float

    def __post_init__(self):
        """Reject intervals outside 0 <= check <= hat <= 1."""
        if not 0.0 <= self.check <= self.hat <= 1.0:
            raise ValueError(f"invalid transition interval [{self.check}, {self.hat}]")


class AbstractionBuilder:
    """Builds interval bounds and the IMC for one system."""

    def __init__(self, system: PETCSystem, config: Optional[Dict] = None, threads: int = 1,
                 validation: Optional[ValidationReport] = None):
        """Validate the system and set up moments, integrator and optimizer from the solver config."""
        if validation is None:
            validation = validate_system(system)
        validation.require()
        self.system = system
        self.config = config or {}
        solver = self.config.get('solver', {})

        self.n = system.n
        self.k_max = system.k_max
        self.epsilon = system.epsilon
        self.tol = float(solver.get('int_tol', 1e-4))
        self.vertex_cap = int(solver.get('vertex_cap', 4096))
        self.repair_budget = float(solver.get('repair_budget', 0.05))
        self.den_floor = float(solver.get('den_floor', 1e-9))
        self.sigma_envelope = float(solver.get('sigma_envelope', 6.0))
        self.threads = max(1, int(threads))

        self.moments = MomentCalculator(system)
        self.integrator = GaussianIntegrator(self.config)
        self.optimizer = MeanOptimizer(self.integrator, self.config)

        self._lock = threading.Lock()
        self._phi_cache: Dict = {}
        self._cond_cache: Dict = {}

    # --- interevent-time probabilities -------------------------------------------------

    def phi_prob_bounds(self, R: HyperRect, s: int) -> Bounds:
        """Bounds on Pr(zeta(1..s) all within epsilon of x) over x in R; s = 0 gives [1, 1]."""
        if s == 0:
            return 1.0, 1.0
        key = (_key(R), s)
        cached = self._phi_cache.get(key)
        if cached is not None:
            return cached

        joint = self.moments.joint_moments(s)
        T = self.moments.mu1_map(s)
        if 2 ** R.dim <= self.vertex_cap:
            means = R.vertices() @ T.T
            box = HyperRect.from_points(means)
        else:
            box = R.affine_box(T)
            means = box
        rect = phi_cube(self.epsilon, s, self.n)
        lo = self.optimizer.min_integral_over_means(joint.covariance, rect, means)
        hi = self.optimizer.max_integral_over_means(joint.covariance, rect, box)
        bounds = (_clamp(lo), _clamp(max(lo, hi)))
        with self._lock:
            self._phi_cache[key] = bounds
        return bounds

    def tau_prob_bounds(self, R: HyperRect, s: int) -> Bounds:
        """Bounds on Pr(tau(x) = s) over x in R, 1 <= s <= k_max."""
        if not 1 <= s <= self.k_max:
            raise ValueError(f"interevent time must lie in 1..{self.k_max}, got {s}")
        prev_lo, prev_hi = self.phi_prob_bounds(R, s - 1)
        if s == self.k_max:
            return prev_lo, prev_hi

        cur_lo, cur_hi = self.phi_prob_bounds(R, s)
        lo = _clamp(prev_lo - cur_hi)
        hi = _clamp(prev_hi - cur_lo)
        # Pr(tau = s) = Pr(Phi^{s-1}) * (1 - Pr(zeta_s in Phi(x) | Phi^{s-1}))
        stay_lo, stay_hi = self.cond_prob_bounds(R, s, s - 1, PHI)
        lo = max(lo, prev_lo * (1.0 - stay_hi))
        hi = min(hi, prev_hi * (1.0 - stay_lo))
        return _clamp(lo), _clamp(max(lo, hi))

    # --- conditional destination probabilities ----------------------------------------

    def _mean_sets(self, R: HyperRect, s: int, l: int, moving: bool):
        """Conditional law of zeta_s given l steps within epsilon, with its mean set (vertices or box) and outer box."""
        cond = self.moments.conditional_gaussian(s, l)
        exact = exact_p_vertices(cond, R, self.epsilon, l, self.vertex_cap)
        p1_box, p2_box = p1_p2_boxes(cond, R, self.epsilon, l)
        if exact is not None:
            points = exact[1] if moving else exact[0]
            return cond, points, HyperRect.from_points(points)
        box = p2_box if moving else p1_box
        return cond, box, box

    def _extremes(self, cov, rect: Optional[HyperRect], means, box: HyperRect) -> Bounds:
        """Sound (lo, hi) of a rectangle probability as the mean ranges over a set; None is the empty rectangle."""
        if rect is None:
            return 0.0, 0.0
        lo = self.optimizer.min_integral_over_means(cov, rect, means)
        hi = self.optimizer.max_integral_over_means(cov, rect, box)
        return _clamp(lo), _clamp(max(lo, hi))

    def cond_prob_bounds(self, R: HyperRect, s: int, l: int, target: Union[HyperRect, str]) -> Bounds:
        """
        Bounds on Pr(zeta_s in target | zeta(1..l) within epsilon of x) over x in R.

        `target` is a fixed box S or 'phi' for the moving set Phi(x).
        """
        if not 0 <= l < s:
            raise ValueError(f"conditioning needs 0 <= l < s, got s={s}, l={l}")
        moving = isinstance(target, str)
        if moving and target != PHI:
            raise ValueError(f"unknown target {target!r}")
        key = (_key(R), s, l, PHI if moving else _key(target))
        cached = self._cond_cache.get(key)
        if cached is not None:
            return cached

        cond, means, box = self._mean_sets(R, s, l, moving)
        rect = HyperRect.cube(self.epsilon, self.n) if moving else target
        bounds = self._extremes(cond.Sigma_xi, rect, means, box)
        with self._lock:
            self._cond_cache[key] = bounds
        return bounds

    def joint_phi_prob_bounds(self, R: HyperRect, s: int, S: HyperRect,
                              lower: bool = True, upper: bool = True) -> Bounds:
        """
        Direct bounds on Pr(zeta_s in S and within epsilon of x | Phi^{s-1}(x)) over x in R.

        The moving set Phi(x) contains the fixed box [R.upper - eps, R.lower + eps] and lies
        inside R + Phi(0) for every x in R. A side that is not requested is left vacuous.
        """
        l = s - 1
        cond, means, box = self._mean_sets(R, s, l, moving=False)
        inner_lower = R.upper - self.epsilon
        inner_upper = R.lower + self.epsilon
        inner = None
        if np.all(inner_lower <= inner_upper):
            inner = HyperRect(inner_lower, inner_upper).intersect(S)
        outer = R.minkowski_sum(HyperRect.cube(self.epsilon, self.n)).intersect(S)

        lo = 0.0
        if lower and inner is not None:
            lo = self.optimizer.min_integral_over_means(cond.Sigma_xi, inner, means)
        hi = 0.0 if outer is None else 1.0
        if upper and outer is not None:
            hi = self.optimizer.max_integral_over_means(cond.Sigma_xi, outer, box)
        return _clamp(lo), _clamp(max(lo, hi))

    def _split_terms(self, R: HyperRect, s: int, S: HyperRect):
        """(a, J, c): Pr(S | Phi^{s-1}), Pr(S and Phi(x) | Phi^{s-1}), Pr(Phi(x) | Phi^{s-1})."""
        a = self.cond_prob_bounds(R, s, s - 1, S)
        c = self.cond_prob_bounds(R, s, s - 1, PHI)
        # J only enters through a_lo - J_hi and a_hi - J_lo, both floored at zero
        direct = self.joint_phi_prob_bounds(R, s, S, lower=a[1] > 0.0, upper=a[0] > 0.0)
        j_hi = min(direct[1], a[1], c[1])
        j_lo = max(direct[0], a[0] + c[0] - 1.0, 0.0)
        return a, (j_lo, max(j_lo, j_hi)), c

    def conditional_dest_bounds(self, R: HyperRect, s: int, S: HyperRect) -> Bounds:
        """Bounds on Pr(zeta_s in S | tau(x) = s) over x in R."""
        if s == self.k_max:
            return self.cond_prob_bounds(R, self.k_max, self.k_max - 1, S)
        a, J, c = self._split_terms(R, s, S)
        lo = _clamp((a[0] - J[1]) / max(1.0 - c[0], self.den_floor))
        den = 1.0 - c[1]
        hi = 1.0 if den <= self.den_floor else _clamp((a[1] - J[0]) / den)
        return lo, max(lo, hi)

    def _joint_bounds(self, R: HyperRect, s: int, S: HyperRect, tau: Bounds) -> Bounds:
        """Bounds on Pr(zeta_s in S, tau(x) = s) over x in R."""
        if tau[1] <= self.tol:
            return 0.0, tau[1]
        if s == self.k_max:
            a = self.cond_prob_bounds(R, s, s - 1, S)
            return _clamp(a[0] * tau[0]), _clamp(a[1] * tau[1])

        a, J, c = self._split_terms(R, s, S)
        lo = _clamp((a[0] - J[1]) / max(1.0 - c[0], self.den_floor))
        den = 1.0 - c[1]
        hi = 1.0 if den <= self.den_floor else _clamp((a[1] - J[0]) / den)
        check, hat = lo * tau[0], hi * tau[1]

        # Pr(S, tau = s) = Pr(Phi^{s-1}) * (Pr(S | Phi^{s-1}) - Pr(S and Phi(x) | Phi^{s-1}))
        prev = self.phi_prob_bounds(R, s - 1)
        check = max(check, prev[0] * max(a[0] - J[1], 0.0))
        hat = min(hat, prev[1] * max(a[1] - J[0], 0.0))
        return _clamp(check), _clamp(max(check, hat))

    # --- transition intervals ---------------------------------------------------------

    def _envelope(self, R: HyperRect, s: int, dest: HyperRect) -> Tuple[bool, float]:
        """
        (outside, bound): whether dest lies beyond the sigma envelope of zeta_s, and the exact
        bound max_x min_i Pr(zeta_s,i in dest_i) on Pr(zeta_s in dest).
        """
        means = R.affine_box(self.moments.mean_matrix(s))
        sd = np.sqrt(np.diag(self.moments.gram_cov(s, s)))
        gap = np.maximum(dest.lower - means.upper, means.lower - dest.upper)
        outside = bool(np.any(gap > self.sigma_envelope * sd))
        nearest = means.project(dest.center)
        masses = interval_mass((dest.lower - nearest) / sd, (dest.upper - nearest) / sd)
        return outside, float(min(masses.min() + EXACT_ERR, 1.0))

    def transition_interval(self, R: HyperRect, dest: Union[Tuple[HyperRect, int], str],
                            X: HyperRect) -> TransitionInterval:
        """Interval for a move from cell R to (R', s') or to 'unsafe'."""
        if dest == 'unsafe':
            lo, hi = self._unsafe_bounds(R, X)
            return TransitionInterval(lo, hi)
        target, s = dest
        envelope = self._envelope(R, s, target)
        lo, hi = self._dest_bounds(R, target, s, self.tau_prob_bounds(R, s), envelope)
        return TransitionInterval(lo, hi)

    def _dest_bounds(self, R: HyperRect, target: HyperRect, s: int, tau: Bounds,
                     envelope: Tuple[bool, float]) -> Bounds:
        """Interval for (target, s) given the interevent-time bounds and the precomputed envelope."""
        outside, bound = envelope
        if outside:
            return 0.0, max(self.tol, min(bound, tau[1]))
        cap = min(bound, tau[1])
        if cap <= self.tol:
            return 0.0, cap
        lo, hi = self._joint_bounds(R, s, target, tau)
        hi = min(hi, bound, tau[1])
        return lo, max(lo, hi)

    def _unsafe_bounds(self, R: HyperRect, X: HyperRect) -> Bounds:
        """Total exit probability, summed over the interevent time of the exit."""
        lo_total, hi_total = 0.0, 0.0
        for s in range(1, self.k_max + 1):
            tau = self.tau_prob_bounds(R, s)
            stay = self._joint_bounds(R, s, X, tau)
            lo_total += max(tau[0] - stay[1], 0.0)
            hi_total += max(tau[1] - stay[0], 0.0)
        return _clamp(lo_total), _clamp(max(lo_total, hi_total))

    def _repair(self, check: np.ndarray, hat: np.ndarray, label: str) -> List[Dict]:
        """Make a row feasible within the repair budget; returns the repairs applied."""
        repairs = []
        deficit = 1.0 - hat.sum()
        if deficit > 0.0:
            if deficit > self.repair_budget:
                raise AbstractionError(
                    f"row {label}: upper bounds sum to {hat.sum():.6f}, deficit {deficit:.3e} exceeds "
                    f"repair budget {self.repair_budget}",
                    row=label,
                )
            room = 1.0 - hat
            hat += deficit * room / room.sum()
            logger.warning(f"Row {label}: inflated upper bounds by {deficit:.3e}")
            repairs.append({'row': label, 'kind': 'inflate_hat', 'amount': float(deficit)})
        excess = check.sum() - 1.0
        if excess > 0.0:
            if excess > self.repair_budget:
                raise AbstractionError(
                    f"row {label}: lower bounds sum to {check.sum():.6f}, excess {excess:.3e} exceeds "
                    f"repair budget {self.repair_budget}",
                    row=label,
                )
            check /= check.sum()
            logger.warning(f"Row {label}: deflated lower bounds by {excess:.3e}")
            repairs.append({'row': label, 'kind': 'deflate_check', 'amount': float(excess)})
        np.minimum(check, hat, out=check)
        return repairs

    def cell_row(self, partition: Partition, cell: int) -> Tuple[np.ndarray, np.ndarray, List[Dict], int]:
        """Destination bounds of one cell over columns (j, s') in state order, unsafe last."""
        R = partition.cells[cell]
        k = self.k_max
        m = len(partition)
        check = np.zeros(m * (k + 1) + 1)
        hat = np.zeros(m * (k + 1) + 1)
        pruned = 0
        for s in range(1, k + 1):
            tau = self.tau_prob_bounds(R, s)
            for j, target in enumerate(partition.cells):
                col = state_index(j, s, k)
                envelope = self._envelope(R, s, target)
                pruned += envelope[0] or min(envelope[1], tau[1]) <= self.tol
                check[col], hat[col] = self._dest_bounds(R, target, s, tau, envelope)
        check[-1], hat[-1] = self._unsafe_bounds(R, partition.domain)
        repairs = self._repair(check, hat, f"R{cell}")
        logger.debug(f"Cell {cell}: sum(check)={check.sum():.6f}, sum(hat)={hat.sum():.6f}, pruned {pruned}")
        return check, hat, repairs, pruned

    # --- initial distribution and assembly ----------------------------------------------

    def initial_masses(self, partition: Partition, p0: InitialDistribution) -> np.ndarray:
        """Mass of each cell under p0; the remainder belongs to the unsafe state."""
        m = len(partition)
        masses = np.zeros(m)
        if p0.kind == 'point':
            cell = int(partition.locate(p0.point)[0])
            if cell >= 0:
                masses[cell] = 1.0
        elif p0.kind == 'gaussian':
            for j, R in enumerate(partition.cells):
                masses[j] = self.integrator.mvn_rect_prob(p0.mean, p0.cov, R).value
        else:
            support = p0.support_box(partition.domain)
            volume = support.volume()
            if volume <= 0:
                raise ConfigError("uniform initial distribution needs a box of positive volume")
            for j, R in enumerate(partition.cells):
                overlap = R.intersect(support)
                masses[j] = overlap.volume() / volume if overlap is not None else 0.0
        total = masses.sum()
        if total > 1.0:
            masses /= total
        return masses

    def build_imc(self, partition: Partition, p0: InitialDistribution) -> IntervalMarkovChain:
        """Abstract every cell of the partition and assemble the IMC with its initial distribution."""
        m = len(partition)
        k = self.k_max
        logger.info(f"Abstracting {m} cells with k_max={k} using {self.threads} thread(s)")

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                rows = list(pool.map(lambda c: self.cell_row(partition, c), range(m)))
        else:
            rows = [self.cell_row(partition, c) for c in range(m)]

        n_states = m * (k + 1) + 1
        unsafe = n_states - 1
        r_idx, c_idx, lo_vals, hi_vals = [], [], [], []
        repairs, pruned = [], 0
        for cell, (check, hat, row_repairs, row_pruned) in enumerate(rows):
            repairs.extend(row_repairs)
            pruned += row_pruned
            cols = np.flatnonzero(hat > 0.0)
            for s in range(k + 1):
                row = state_index(cell, s, k)
                r_idx.extend([row] * cols.size)
                c_idx.extend(cols.tolist())
                lo_vals.extend(check[cols].tolist())
                hi_vals.extend(hat[cols].tolist())
        r_idx.append(unsafe)
        c_idx.append(unsafe)
        lo_vals.append(1.0)
        hi_vals.append(1.0)

        shape = (n_states, n_states)
        check = sparse.csr_matrix((lo_vals, (r_idx, c_idx)), shape=shape)
        hat = sparse.csr_matrix((hi_vals, (r_idx, c_idx)), shape=shape)

        states = [AbstractState(j, s) for j in range(m) for s in range(k + 1)] + [AbstractState.unsafe()]
        masses = self.initial_masses(partition, p0)
        p0_vec = np.zeros(n_states)
        for j in range(m):
            p0_vec[state_index(j, 0, k)] = masses[j]
        p0_vec[unsafe] = max(1.0 - masses.sum(), 0.0)

        meta = {
            'soundness': SOUNDNESS,
            'k_max': k,
            'epsilon': self.epsilon,
            'n_cells': m,
            'grid': list(partition.counts),
            'int_tol': self.tol,
            'int_seed': self.integrator.seed,
            'n_shifts': self.integrator.n_shifts,
            'max_points': self.integrator.max_points,
            'opt_slack': self.optimizer.opt_slack,
            'opt_tol': self.optimizer.opt_tol,
            'vertex_cap': self.vertex_cap,
            'repair_budget': self.repair_budget,
            'den_floor': self.den_floor,
            'sigma_envelope': self.sigma_envelope,
            'pruned_destinations': int(pruned),
            'repairs': repairs,
        }
        imc = IntervalMarkovChain(states, p0_vec, check, hat, meta)
        imc.validate()
        logger.info(f"IMC built: {n_states} states, {imc.n_edges} edges, {len(repairs)} repairs, {pruned} pruned destinations")
        return imc


def build_imc(system: PETCSystem, partition: Partition, p0: InitialDistribution,
              config: Optional[Dict] = None, threads: int = 1) -> IntervalMarkovChain:
    """Build the IMC of `system` over `partition`."""
    return AbstractionBuilder(system, config, threads).build_imc(partition, p0)


def reward_bounds(rw: RewardSpec, state: AbstractState, partition: Partition, k_max: int) -> Bounds:
    """[min, max] of R(x, s) over the concrete states abstracted by `state`."""
    if rw.kind == 'interevent_time':
        if state.is_unsafe:
            return 0.0, float(k_max)
        return float(state.s), float(state.s)

    if rw.kind == 'table':
        if state.is_unsafe:
            return rw.global_row()
        return rw.table_entry(state.region, state.s)

    if state.is_unsafe:
        return 0.0, float(min(rw.alpha / rw.eps_tilde + rw.beta * k_max, rw.r_max))
    cell = partition.cells[state.region]
    far = np.linalg.norm(np.maximum(np.abs(cell.lower), np.abs(cell.upper)))
    near = np.linalg.norm(cell.project(np.zeros(cell.dim)))
    lo = min(rw.alpha / (far + rw.eps_tilde) + rw.beta * state.s, rw.r_max)
    hi = min(rw.alpha / (near + rw.eps_tilde) + rw.beta * state.s, rw.r_max)
    return float(lo), float(hi)


def reward_vectors(rw: RewardSpec, imc: IntervalMarkovChain, partition: Partition,
                   k_max: int) -> Tuple[np.ndarray, np.ndarray]:
    """Per-state lower and upper rewards, in state order."""
    pairs = np.array([reward_bounds(rw, state, partition, k_max) for state in imc.states])
    return pairs[:, 0].copy(), pairs[:, 1].copy()
