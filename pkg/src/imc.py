"""
Interval Markov chains and interval value iteration for discounted rewards.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import json
import logging
import math

import numpy as np
import pandas as pd
import pulp
from scipy import sparse

from .errors import IMCFormatError, InfeasibleRowError

logger = logging.getLogger(__name__)

FEAS_TOL = 1e-9


@dataclass(frozen=True)
class AbstractState:
    """(region, s) pair, or the absorbing unsafe state when `region` is None."""
    region: Optional[int] = None
    s: Optional[int] = None

    @property
    def is_unsafe(self) -> bool:
        """True for the absorbing unsafe state."""
        return self.region is None

    def to_json(self):
        """JSON form: 'unsafe' or [region, s]."""
        if self.is_unsafe:
            return 'unsafe'
        return {'region_id': int(self.region), 's': int(self.s)}

    @classmethod
    def from_json(cls, value) -> 'AbstractState':
        """Inverse of to_json."""
        if value == 'unsafe':
            return cls.unsafe()
        try:
            return cls(int(value['region_id']), int(value['s']))
        except (KeyError, TypeError, ValueError) as e:
            raise IMCFormatError(f"malformed state entry {value!r}") from e

    @classmethod
    def unsafe(cls) -> 'AbstractState':
        """The absorbing unsafe state."""
        return cls(None, None)

    def __str__(self):
        """Readable label, e.g. R3/s2."""
        return 'unsafe' if self.is_unsafe else f"(R{self.region}, s={self.s})"


def state_index(region: int, s: int, k_max: int) -> int:
    """Row of (region, s) in the transition matrices."""
    return region * (k_max + 1) + s


def greedy_feasible(row_check, row_hat, ordering: Sequence[int]) -> np.ndarray:
    """
    Extreme feasible distribution of an interval row.

    Every entry starts at its lower bound; the remaining mass goes to entries in `ordering`
    priority, each filled up to its upper bound. With `ordering` sorting values ascending this
    minimizes the expected value over the row.
    """
    check = np.asarray(row_check, dtype=float)
    hat = np.asarray(row_hat, dtype=float)
    if np.any(check > hat + FEAS_TOL):
        raise InfeasibleRowError("row has an entry with lower bound above its upper bound")
    remaining = 1.0 - check.sum()
    if remaining < -FEAS_TOL or hat.sum() < 1.0 - FEAS_TOL:
        raise InfeasibleRowError(
            f"row admits no distribution: sum(check)={check.sum():.12g}, sum(hat)={hat.sum():.12g}"
        )
    ordering = np.asarray(ordering, dtype=int)
    capacity = np.maximum(hat[ordering] - check[ordering], 0.0)
    before = np.cumsum(capacity) - capacity
    extra = np.clip(max(remaining, 0.0) - before, 0.0, capacity)
    p = check.copy()
    p[ordering] += extra
    return p


def lp_extreme_distribution(row_check, row_hat, values, sense: str = 'min') -> np.ndarray:
    """Extreme distribution of a row by linear programming."""
    check = np.asarray(row_check, dtype=float)
    hat = np.asarray(row_hat, dtype=float)
    values = np.asarray(values, dtype=float)
    prob = pulp.LpProblem("IMC_Row_Adversary", pulp.LpMinimize if sense == 'min' else pulp.LpMaximize)
    p = [pulp.LpVariable(f"p_{i}", lowBound=float(check[i]), upBound=float(hat[i])) for i in range(len(check))]
    prob += pulp.lpSum(float(values[i]) * p[i] for i in range(len(p)))
    prob += pulp.lpSum(p) == 1, "Mass"
    status = prob.solve(pulp.PULP_CBC_CMD(msg=False))
    if pulp.LpStatus[status] != 'Optimal':
        raise InfeasibleRowError(f"LP adversary status {pulp.LpStatus[status]}")
    return np.array([v.value() for v in p], dtype=float)


def iterations_for_tail(gamma: float, r_max: float, target: float = 1e-6) -> int:
    """Smallest N >= 1 with gamma^N * r_max / (1 - gamma) <= target."""
    if gamma <= 0.0 or r_max <= 0.0:
        return 1
    scale = r_max / (1.0 - gamma)
    if scale <= target:
        return 1
    return max(1, int(math.ceil(math.log(target / scale) / math.log(gamma))))


@dataclass
class IntervalMarkovChain:
    states: List[AbstractState]
    p0: np.ndarray
    check: sparse.csr_matrix
    hat: sparse.csr_matrix
    meta: Dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        """Number of abstract states, unsafe included."""
        return len(self.states)

    @property
    def n_edges(self) -> int:
        """Number of stored transitions."""
        return int(self.hat.nnz)

    @property
    def unsafe_index(self) -> int:
        """Row of the unsafe state."""
        for i, state in enumerate(self.states):
            if state.is_unsafe:
                return i
        raise IMCFormatError("IMC has no unsafe state")

    def row(self, i: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Support columns with their lower and upper bounds."""
        cols = np.union1d(self.hat.indices[self.hat.indptr[i]:self.hat.indptr[i + 1]],
                          self.check.indices[self.check.indptr[i]:self.check.indptr[i + 1]])
        lo = np.asarray(self.check[i, cols].todense()).ravel() if cols.size else np.zeros(0)
        hi = np.asarray(self.hat[i, cols].todense()).ravel() if cols.size else np.zeros(0)
        return cols, lo, hi

    def validate(self, tol: float = FEAS_TOL):
        """Raise IMCFormatError naming the first inconsistent entry."""
        n = self.n_states
        if self.check.shape != (n, n) or self.hat.shape != (n, n) or self.p0.shape != (n,):
            raise IMCFormatError(f"shape mismatch for {n} states: check {self.check.shape}, hat {self.hat.shape}, p0 {self.p0.shape}")
        unsafe_count = sum(s.is_unsafe for s in self.states)
        if unsafe_count != 1:
            raise IMCFormatError(f"IMC must have exactly one unsafe state, found {unsafe_count}")

        diff = (self.hat - self.check).tocoo()
        bad = np.flatnonzero(diff.data < -tol)
        if bad.size:
            i, j = diff.row[bad[0]], diff.col[bad[0]]
            raise IMCFormatError(
                f"check > hat at entry ({i}, {j}) [{self.states[i]} -> {self.states[j]}]: "
                f"{self.check[i, j]!r} > {self.hat[i, j]!r}"
            )
        for name, matrix in (('check', self.check), ('hat', self.hat)):
            coo = matrix.tocoo()
            outside = np.flatnonzero((coo.data < -tol) | (coo.data > 1.0 + tol))
            if outside.size:
                k = outside[0]
                raise IMCFormatError(f"{name} entry ({coo.row[k]}, {coo.col[k]}) = {coo.data[k]!r} outside [0, 1]")

        low_sums = np.asarray(self.check.sum(axis=1)).ravel()
        high_sums = np.asarray(self.hat.sum(axis=1)).ravel()
        for i in range(n):
            if low_sums[i] > 1.0 + tol or high_sums[i] < 1.0 - tol:
                raise IMCFormatError(
                    f"row {i} [{self.states[i]}] infeasible: sum(check)={low_sums[i]!r}, sum(hat)={high_sums[i]!r}"
                )

        u = self.unsafe_index
        cols, lo, hi = self.row(u)
        if not (cols.size == 1 and cols[0] == u and lo[0] == 1.0 and hi[0] == 1.0):
            raise IMCFormatError("unsafe row must be the self-loop with probability exactly 1")

        if np.any(self.p0 < -tol) or abs(self.p0.sum() - 1.0) > tol:
            raise IMCFormatError(f"p0 must be a distribution, sums to {self.p0.sum()!r}")

    def to_dict(self) -> Dict:
        """Serializable form with sparse triplets."""
        def triplets(matrix):
            coo = matrix.tocoo()
            return [[int(r), int(c), float(v)] for r, c, v in zip(coo.row, coo.col, coo.data)]

        return {
            'states': [s.to_json() for s in self.states],
            'p0': [float(v) for v in self.p0],
            'check': triplets(self.check),
            'hat': triplets(self.hat),
            'meta': self.meta,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'IntervalMarkovChain':
        """Rebuild an IMC from to_dict output, raising IMCFormatError on bad data."""
        try:
            states = [AbstractState.from_json(s) for s in data['states']]
            n = len(states)
            p0 = np.array(data['p0'], dtype=float)

            def matrix(key):
                entries = data[key]
                if not entries:
                    return sparse.csr_matrix((n, n))
                rows, cols, vals = zip(*entries)
                for r, c in zip(rows, cols):
                    if not (0 <= int(r) < n and 0 <= int(c) < n):
                        raise IMCFormatError(f"{key} entry ({r}, {c}) out of range for {n} states")
                return sparse.csr_matrix((np.array(vals, dtype=float), (np.array(rows, dtype=int), np.array(cols, dtype=int))), shape=(n, n))

            imc = cls(states, p0, matrix('check'), matrix('hat'), dict(data.get('meta', {})))
        except IMCFormatError:
            raise
        except (KeyError, TypeError, ValueError) as e:
            raise IMCFormatError(f"malformed IMC data: {e}") from e
        imc.validate()
        return imc

    def save(self, path: Union[str, Path]):
        """Write the IMC as JSON."""
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding='utf-8')
        logger.info(f"IMC with {self.n_states} states and {self.n_edges} edges written to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'IntervalMarkovChain':
        """Read an IMC written by save."""
        try:
            data = json.loads(Path(path).read_text(encoding='utf-8'))
        except (OSError, json.JSONDecodeError) as e:
            raise IMCFormatError(f"cannot read IMC file {path}: {e}") from e
        return cls.from_dict(data)


@dataclass
class ValueBounds:
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    tail_bound: float
    gamma: float
    expectation: Optional[Tuple[float, float]] = None

    def to_dict(self, states: Sequence[AbstractState]) -> Dict:
        """Serializable per-state bounds with run metadata."""
        out = {
            'per_state': [
                {'state': state.to_json(), 'v_lo': float(lo), 'v_hi': float(hi)}
                for state, lo, hi in zip(states, self.lower, self.upper)
            ],
            'gamma': float(self.gamma),
            'iterations': int(self.iterations),
            'tail_bound': float(self.tail_bound),
        }
        if self.expectation is not None:
            out['expectation'] = {'lo': float(self.expectation[0]), 'hi': float(self.expectation[1])}
        return out

    def to_frame(self, states: Sequence[AbstractState]) -> pd.DataFrame:
        """Per-state bounds as a DataFrame."""
        return pd.DataFrame({
            'state': [str(s) for s in states],
            'region': [s.region if not s.is_unsafe else -1 for s in states],
            's': [s.s if not s.is_unsafe else -1 for s in states],
            'v_lo': self.lower,
            'v_hi': self.upper,
        })


class IntervalValueIteration:
    """Lower and upper discounted values of an IMC under extreme Markovian adversaries."""

    def __init__(self, config: Optional[Dict] = None):
        """Read adversary, tail target and fixed sweep count from the solver config."""
        solver = (config or {}).get('solver', config or {})
        self.adversary = solver.get('adversary', 'greedy')
        self.tail_target = float(solver.get('tail_target', 1e-6))
        self.iterations = solver.get('iterations')

    def _extreme(self, cols, lo, hi, values, sense: str) -> np.ndarray:
        """Extreme feasible distribution of one row against `values`."""
        v = values[cols]
        if self.adversary == 'lp':
            return lp_extreme_distribution(lo, hi, v, sense)
        # stable sorts keep ties in ascending state order
        ordering = np.argsort(v, kind='stable') if sense == 'min' else np.argsort(-v, kind='stable')
        return greedy_feasible(lo, hi, ordering)

    def run(self, imc: IntervalMarkovChain, r_lo, r_hi, gamma: float, r_max: float,
            iterations: Optional[int] = None) -> ValueBounds:
        """N sweeps of the lower and upper Bellman operators, plus the truncated tail on the upper values."""
        if not 0.0 <= gamma < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {gamma}")
        r_lo = np.asarray(r_lo, dtype=float)
        r_hi = np.asarray(r_hi, dtype=float)
        N = iterations or self.iterations or iterations_for_tail(gamma, r_max, self.tail_target)
        rows = [imc.row(i) for i in range(imc.n_states)]

        lower = r_lo.copy()
        upper = r_hi.copy()
        for _ in range(N):
            next_lower = np.empty_like(lower)
            next_upper = np.empty_like(upper)
            for i, (cols, lo, hi) in enumerate(rows):
                p_min = self._extreme(cols, lo, hi, lower, 'min')
                p_max = self._extreme(cols, lo, hi, upper, 'max')
                next_lower[i] = r_lo[i] + gamma * p_min @ lower[cols]
                next_upper[i] = r_hi[i] + gamma * p_max @ upper[cols]
            lower, upper = next_lower, next_upper

        tail = gamma ** N * r_max / (1.0 - gamma)
        ceiling = r_max / (1.0 - gamma)
        upper = np.minimum(upper + tail, ceiling)
        lower = np.minimum(lower, upper)
        logger.info(f"Interval value iteration: {N} sweeps over {imc.n_states} states, tail bound {tail:.3e}")
        return ValueBounds(lower=lower, upper=upper, iterations=N, tail_bound=tail, gamma=gamma)


def interval_value_iteration(imc: IntervalMarkovChain, r_lo, r_hi, gamma: float, N: Optional[int] = None,
                             r_max: Optional[float] = None, adversary: str = 'greedy') -> ValueBounds:
    """Lower and upper discounted values of `imc`."""
    if r_max is None:
        r_max = float(max(np.max(r_hi), 0.0))
    solver = IntervalValueIteration({'adversary': adversary})
    return solver.run(imc, r_lo, r_hi, gamma, r_max, iterations=N)


def aggregate_expectation(imc: IntervalMarkovChain, vb: ValueBounds) -> Tuple[float, float]:
    """p0-weighted lower and upper values."""
    e_lo = float(imc.p0 @ vb.lower)
    e_hi = float(imc.p0 @ vb.upper)
    vb.expectation = (e_lo, e_hi)
    return e_lo, e_hi
