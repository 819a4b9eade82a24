"""
Stochastic PETC system definition, triggering semantics, rewards and well-posedness checks.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, TYPE_CHECKING
import logging

import numpy as np

from .errors import AssumptionViolation, ConfigError, StructuralError

if TYPE_CHECKING:
    from .geometry import HyperRect, Partition

logger = logging.getLogger(__name__)

INITIAL_KINDS = ('uniform', 'point', 'gaussian')
REWARD_KINDS = ('interevent_time', 'overshoot', 'table')


def _frozen_matrix(value, name: str) -> np.ndarray:
    """Read-only 2-D float matrix, StructuralError naming `name` otherwise."""
    matrix = np.array(value, dtype=float)
    if matrix.ndim != 2:
        raise StructuralError(f"{name} must be a 2-D matrix, got shape {matrix.shape}")
    matrix.flags.writeable = False
    return matrix


def _frozen_vector(value, name: str) -> np.ndarray:
    """Read-only non-empty float vector, StructuralError naming `name` otherwise."""
    vector = np.array(value, dtype=float).reshape(-1)
    if vector.size == 0:
        raise StructuralError(f"{name} must not be empty")
    vector.flags.writeable = False
    return vector


@dataclass(frozen=True, eq=False)
class PETCSystem:
    """
    Sample-and-hold linear SDE dx = (A x + B K x(t_i)) dt + B_w dW with the
    infinity-norm triggering rule |x(t) - x(t_i)| > epsilon checked every period.
    """
    A: np.ndarray
    B: np.ndarray
    K: np.ndarray
    B_w: np.ndarray
    epsilon: float
    k_max: int
    sampling_period: float = 1.0

    def __post_init__(self):
        """Freeze matrices and check their shapes agree."""
        object.__setattr__(self, 'A', _frozen_matrix(self.A, 'A'))
        object.__setattr__(self, 'B', _frozen_matrix(self.B, 'B'))
        object.__setattr__(self, 'K', _frozen_matrix(self.K, 'K'))
        object.__setattr__(self, 'B_w', _frozen_matrix(self.B_w, 'B_w'))
        object.__setattr__(self, 'epsilon', float(self.epsilon))
        object.__setattr__(self, 'k_max', int(self.k_max))
        object.__setattr__(self, 'sampling_period', float(self.sampling_period))

        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise StructuralError(f"A must be square, got shape {self.A.shape}")
        if self.B.shape[0] != n:
            raise StructuralError(f"B must have {n} rows, got {self.B.shape[0]}")
        if self.K.shape != (self.B.shape[1], n):
            raise StructuralError(
                f"K must have shape ({self.B.shape[1]}, {n}) to match B and A, got {self.K.shape}"
            )
        if self.B_w.shape[0] != n:
            raise StructuralError(f"B_w must have {n} rows, got {self.B_w.shape[0]}")

    @property
    def n(self) -> int:
        """State dimension."""
        return self.A.shape[0]

    @property
    def BK(self) -> np.ndarray:
        """Closed-loop input matrix B K."""
        return self.B @ self.K

    @property
    def noise_covariance(self) -> np.ndarray:
        """B_w B_w^T, the diffusion matrix of the driving Wiener process."""
        return self.B_w @ self.B_w.T

    @classmethod
    def from_config(cls, config: Dict) -> 'PETCSystem':
        """System from the `system` section of a parsed config."""
        system = config.get('system', config)
        return cls(
            A=system['A'],
            B=system['B'],
            K=system['K'],
            B_w=system['B_w'],
            epsilon=system['epsilon'],
            k_max=system['k_max'],
        )


@dataclass(frozen=True, eq=False)
class InitialDistribution:
    """Law p_0 of the first sampled state."""
    kind: str
    point: Optional[np.ndarray] = None
    mean: Optional[np.ndarray] = None
    cov: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def __post_init__(self):
        """Check the fields required by `kind` and freeze them."""
        if self.kind not in INITIAL_KINDS:
            raise ConfigError(f"initial_distribution.kind must be one of {INITIAL_KINDS}, got {self.kind!r}")

        if self.kind == 'point':
            if self.point is None:
                raise ConfigError("initial_distribution.x0 is required for a point mass")
            object.__setattr__(self, 'point', _frozen_vector(self.point, 'x0'))

        elif self.kind == 'gaussian':
            if self.mean is None or self.cov is None:
                raise ConfigError("initial_distribution.mean and .cov are required for a gaussian")
            mean = _frozen_vector(self.mean, 'mean')
            cov = _frozen_matrix(self.cov, 'cov')
            if cov.shape != (mean.size, mean.size):
                raise StructuralError(f"covariance shape {cov.shape} does not match mean of size {mean.size}")
            if not np.allclose(cov, cov.T, atol=1e-12):
                raise ConfigError("initial_distribution.cov must be symmetric")
            if np.linalg.eigvalsh(cov).min() < -1e-12:
                raise ConfigError("initial_distribution.cov must be positive semidefinite")
            object.__setattr__(self, 'mean', mean)
            object.__setattr__(self, 'cov', cov)

        elif self.lower is not None or self.upper is not None:
            if self.lower is None or self.upper is None:
                raise ConfigError("initial_distribution needs both lower and upper for a uniform box")
            object.__setattr__(self, 'lower', _frozen_vector(self.lower, 'lower'))
            object.__setattr__(self, 'upper', _frozen_vector(self.upper, 'upper'))

    def require_dimension(self, n: int):
        """Raise ConfigError naming the first vector whose size is not the state dimension n."""
        fields = {'point': self.point, 'mean': self.mean, 'lower': self.lower, 'upper': self.upper}
        for name, value in fields.items():
            if value is not None and value.size != n:
                key = 'x0' if name == 'point' else name
                raise ConfigError(
                    f"initial_distribution.{key}: expected {n} entries for the state dimension, got {value.size}"
                )

    def support_box(self, domain: 'HyperRect') -> 'HyperRect':
        """Box of a uniform law; defaults to the analysis region X."""
        from .geometry import HyperRect

        if self.lower is None:
            return domain
        return HyperRect(self.lower, self.upper)

    def sample(self, rng: np.random.Generator, size: int, domain: 'HyperRect') -> np.ndarray:
        """Draw `size` initial states, shape (size, n)."""
        if self.kind == 'point':
            return np.tile(self.point, (size, 1))
        if self.kind == 'gaussian':
            return rng.multivariate_normal(self.mean, self.cov, size=size, method='eigh')
        box = self.support_box(domain)
        return rng.uniform(box.lower, box.upper, size=(size, box.dim))

    @classmethod
    def from_config(cls, config: Dict) -> 'InitialDistribution':
        """Initial law from the `initial_distribution` section, uniform on X by default."""
        dist = config.get('initial_distribution') or {'kind': 'uniform'}
        return cls(
            kind=dist.get('kind', 'uniform'),
            point=dist.get('x0'),
            mean=dist.get('mean'),
            cov=dist.get('cov'),
            lower=dist.get('lower'),
            upper=dist.get('upper'),
        )


@dataclass(frozen=True)
class RewardSpec:
    """
    Bounded reward R(x, s) in [0, R_max] together with the discount gamma.

    kinds:
      interevent_time  R = s
      overshoot        R = min(alpha / (|x|_2 + eps_tilde) + beta * s, r_max)
      table            R in [min, max] per (region, s); `unsafe` holds the global row
    """
    kind: str
    gamma: float
    alpha: float = 1.0
    beta: float = 0.0
    eps_tilde: float = 1.0
    r_max: Optional[float] = None
    table: Dict[Tuple[int, int], Tuple[float, float]] = field(default_factory=dict)
    unsafe: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        """Check the parameters required by `kind`."""
        if self.kind not in REWARD_KINDS:
            raise ConfigError(f"reward.kind must be one of {REWARD_KINDS}, got {self.kind!r}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"discount gamma must lie in [0, 1), got {self.gamma}")

        if self.kind == 'overshoot':
            if self.alpha <= 0 or self.eps_tilde <= 0 or self.beta < 0:
                raise ConfigError("overshoot reward needs alpha > 0, eps_tilde > 0 and beta >= 0")
            if self.r_max is None or self.r_max <= 0:
                raise ConfigError("overshoot reward needs a positive r_max")

        if self.kind == 'table':
            if self.r_max is None or self.r_max < 0:
                raise ConfigError("table reward needs a non-negative r_max")
            rows = list(self.table.items())
            if self.unsafe is not None:
                rows.append(('unsafe', self.unsafe))
            for key, (lo, hi) in rows:
                if not 0.0 <= lo <= hi <= self.r_max:
                    raise ConfigError(
                        f"reward table entry {key} = [{lo}, {hi}] violates 0 <= min <= max <= r_max={self.r_max}"
                    )

    def bound(self, k_max: int) -> float:
        """R_max, the global upper bound of the reward."""
        if self.kind == 'interevent_time':
            return float(k_max)
        return float(self.r_max)

    def global_row(self) -> Tuple[float, float]:
        """Global [min, max] of a table reward, widened to contain every entry."""
        if self.unsafe is None:
            raise ConfigError("table reward requires an 'unsafe' row with the global [min, max]")
        lows = [lo for lo, _ in self.table.values()] + [self.unsafe[0]]
        highs = [hi for _, hi in self.table.values()] + [self.unsafe[1]]
        return float(min(lows)), float(max(highs))

    def table_entry(self, region: int, s: int) -> Tuple[float, float]:
        """Reward interval of a (region, s) pair, the global row when absent."""
        entry = self.table.get((int(region), int(s)))
        if entry is None:
            return self.global_row()
        return float(entry[0]), float(entry[1])

    def evaluate(self, x: np.ndarray, s: np.ndarray, partition: Optional['Partition'] = None) -> np.ndarray:
        """Concrete reward for states x (shape (m, n)) and interevent times s (shape (m,))."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.broadcast_to(np.asarray(s, dtype=float), (x.shape[0],))

        if self.kind == 'interevent_time':
            return s.copy()

        if self.kind == 'overshoot':
            raw = self.alpha / (np.linalg.norm(x, axis=1) + self.eps_tilde) + self.beta * s
            return np.minimum(raw, self.r_max)

        if partition is None:
            raise ConfigError("table reward evaluation needs the partition")
        cells = partition.locate(x)
        unsafe_mid = 0.5 * sum(self.global_row())
        values = np.empty(x.shape[0])
        for i, (cell, s_i) in enumerate(zip(cells, s)):
            if cell < 0:
                values[i] = unsafe_mid
            else:
                lo, hi = self.table_entry(cell, int(s_i))
                values[i] = 0.5 * (lo + hi)
        return values

    @classmethod
    def from_config(cls, config: Dict) -> 'RewardSpec':
        """Reward from the `reward` and `solver` sections of a parsed config."""
        reward = config.get('reward', {})
        gamma = config.get('solver', {}).get('gamma', reward.get('gamma'))
        if gamma is None:
            raise ConfigError("solver.gamma: Field required")
        table = {
            (int(entry['region']), int(entry['s'])): (float(entry['min']), float(entry['max']))
            for entry in reward.get('table') or []
        }
        unsafe = reward.get('unsafe')
        return cls(
            kind=reward.get('kind', 'interevent_time'),
            gamma=float(gamma),
            alpha=float(reward.get('alpha', 1.0)),
            beta=float(reward.get('beta', 0.0)),
            eps_tilde=float(reward.get('eps_tilde', 1.0)),
            r_max=reward.get('r_max'),
            table=table,
            unsafe=tuple(unsafe) if unsafe is not None else None,
        )


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    message: str
    informational: bool = False


@dataclass(frozen=True)
class ValidationReport:
    checks: List[Check]
    kalman_rank: int
    condition_number: float
    closed_loop_eigenvalues: Tuple[complex, ...]

    @property
    def passed(self) -> bool:
        """True when every check passed."""
        return all(c.passed for c in self.checks if not c.informational)

    def failures(self) -> List[Check]:
        """Names of the failed checks."""
        return [c for c in self.checks if not c.passed and not c.informational]

    def require(self):
        """Raise AssumptionViolation if any hard check failed."""
        failed = self.failures()
        if failed:
            raise AssumptionViolation("; ".join(c.message for c in failed))

    def lines(self) -> List[str]:
        """One printable line per check."""
        out = []
        for c in self.checks:
            status = 'PASS' if c.passed else ('INFO' if c.informational else 'FAIL')
            out.append(f"[{status}] {c.name}: {c.message}")
        return out


def kalman_matrix(A: np.ndarray, B_w: np.ndarray) -> np.ndarray:
    """[B_w, A B_w, ..., A^{n-1} B_w]."""
    blocks = [B_w]
    for _ in range(A.shape[0] - 1):
        blocks.append(A @ blocks[-1])
    return np.hstack(blocks)


def validate_system(sys: PETCSystem, rank_tol: float = 1e-10) -> ValidationReport:
    """
    Check the well-posedness assumptions of the stochastic PETC system.

    Raises AssumptionViolation immediately for a non-positive threshold, a horizon below one
    or a sampling period other than one. Controllability of (A, B_w) is reported as a hard
    check; invertibility of A and closed-loop stability are informational.
    """
    if not sys.epsilon > 0:
        raise AssumptionViolation(f"triggering threshold epsilon must be > 0, got {sys.epsilon}")
    if sys.k_max < 1:
        raise AssumptionViolation(f"forced-trigger horizon k_max must be >= 1, got {sys.k_max}")
    if sys.sampling_period != 1.0:
        raise AssumptionViolation(f"sampling period must be exactly 1, got {sys.sampling_period}")

    n = sys.n
    checks = [Check(
        'dimensions', True,
        f"n={n}, inputs={sys.B.shape[1]}, noise channels={sys.B_w.shape[1]}",
    )]

    singular_values = np.linalg.svd(kalman_matrix(sys.A, sys.B_w), compute_uv=False)
    s_max = singular_values[0] if singular_values.size else 0.0
    rank = int(np.sum(singular_values > rank_tol * s_max)) if s_max > 0 else 0
    if rank >= n:
        condition = float(s_max / singular_values[n - 1])
    else:
        condition = float('inf')
    controllable = rank == n
    checks.append(Check(
        'controllability', controllable,
        f"Kalman matrix of (A, B_w) has rank {rank} of {n} (condition number {condition:.3e})"
        + ("" if controllable else "; the sampled-state law would be degenerate"),
    ))
    if controllable and condition > 1e8:
        logger.warning(f"(A, B_w) is nearly uncontrollable: condition number {condition:.3e}")

    a_singular = np.linalg.svd(sys.A, compute_uv=False)
    a_invertible = bool(a_singular.min() > rank_tol * max(a_singular.max(), 1.0))
    checks.append(Check(
        'a_invertible', a_invertible,
        "A is invertible" if a_invertible else "A is singular (integral form of the mean is used)",
        informational=True,
    ))

    eigenvalues = np.linalg.eigvals(sys.A + sys.BK)
    stable = bool(np.all(eigenvalues.real < 0))
    checks.append(Check(
        'closed_loop_stability', stable,
        f"eigenvalues of A + BK have max real part {eigenvalues.real.max():.4f}",
        informational=True,
    ))

    report = ValidationReport(checks, rank, condition, tuple(eigenvalues.tolist()))
    logger.info(f"System validation: {'passed' if report.passed else 'FAILED'} (rank {rank}/{n})")
    return report


def trigger_violated(x, y, epsilon: float) -> bool:
    """True iff |y - x|_inf > epsilon, i.e. the triggering function is positive."""
    diff = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    return bool(np.max(np.abs(diff)) > epsilon)
