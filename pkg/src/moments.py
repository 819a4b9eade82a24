"""
Gaussian moments of the sampled states of a PETC system.

For a sample x taken at time 0 and the input held at K x, the state at integer time t is
Gaussian with mean M(t) x and the blocks Cov(t1, t2) below. Everything is evaluated with
augmented matrix exponentials, so a singular A is handled like any other.
"""
from dataclasses import dataclass
from typing import Dict, Tuple
import logging
import threading

import numpy as np
from scipy.linalg import cho_factor, cho_solve, expm, LinAlgError

from .errors import NumericalDegeneracyError
from .model import PETCSystem

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class JointMoments:
    """Law of the stacked vector (zeta(1), ..., zeta(s)) given the sample x."""
    s: int
    mean_map: np.ndarray
    covariance: np.ndarray
    cholesky: np.ndarray

    def mean(self, x) -> np.ndarray:
        """Mean of the stacked samples from x."""
        return self.mean_map @ np.asarray(x, dtype=float)


@dataclass(frozen=True, eq=False)
class ConditionalGaussian:
    """zeta(s) given (zeta(1..l)) = v: mean C_x x + C_v v, covariance Sigma_xi."""
    s: int
    l: int
    C_x: np.ndarray
    C_v: np.ndarray
    Sigma_xi: np.ndarray

    def mean(self, x, v=None) -> np.ndarray:
        """Conditional mean of zeta_s given x and the conditioning samples v."""
        out = self.C_x @ np.asarray(x, dtype=float)
        if self.l > 0:
            out = out + self.C_v @ np.asarray(v, dtype=float)
        return out


def _checked_cholesky(cov: np.ndarray, what: str) -> np.ndarray:
    """Cholesky factor, NumericalDegeneracyError with the smallest eigenvalue otherwise."""
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(cov).min())
        raise NumericalDegeneracyError(
            f"{what} is not positive definite (smallest eigenvalue {min_eig:.3e})",
            min_eigenvalue=min_eig,
        )


def _symmetrize(matrix: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose."""
    return 0.5 * (matrix + matrix.T)


class MomentCalculator:
    """
    Computes and caches M(t), Cov(t1, t2), joint laws and conditional Gaussians of one system.

    Results are cached per argument; the cache is guarded so the calculator can be shared
    by the worker threads of the abstraction.
    """

    def __init__(self, system: PETCSystem):
        """Moment caches for one system."""
        self.system = system
        self.n = system.n
        self._lock = threading.Lock()
        self._mean: Dict[int, np.ndarray] = {}
        self._gram: Dict[int, np.ndarray] = {}
        self._joint: Dict[int, JointMoments] = {}
        self._cond: Dict[Tuple[int, int], ConditionalGaussian] = {}

    def _check_time(self, t: int):
        """Reject non-integer or non-positive sample times."""
        if int(t) != t or t < 1:
            raise ValueError(f"sampling instants must be integers >= 1, got {t}")

    def mean_matrix(self, t: int) -> np.ndarray:
        """M(t) = e^{At} + (int_0^t e^{As} ds) B K, from the exponential of [[A, BK], [0, 0]] t."""
        self._check_time(t)
        t = int(t)
        with self._lock:
            if t in self._mean:
                return self._mean[t]
        n = self.n
        F = np.zeros((2 * n, 2 * n))
        F[:n, :n] = self.system.A
        F[:n, n:] = self.system.BK
        E = expm(F * t)
        M = E[:n, :n] + E[:n, n:]
        M.flags.writeable = False
        with self._lock:
            self._mean[t] = M
        return M

    def gram(self, m: int) -> np.ndarray:
        """G(m) = int_0^m e^{As} B_w B_w^T e^{A^T s} ds via matrix fraction decomposition."""
        m = int(m)
        with self._lock:
            if m in self._gram:
                return self._gram[m]
        n = self.n
        Q = self.system.noise_covariance
        F = np.zeros((2 * n, 2 * n))
        F[:n, :n] = self.system.A
        F[n:, n:] = -self.system.A.T
        F[:n, n:] = Q
        Fd = expm(F * m)[:n, :]
        G = _symmetrize(Fd[:, n:] @ Fd[:, :n].T)
        G.flags.writeable = False
        with self._lock:
            self._gram[m] = G
        return G

    def gram_cov(self, t1: int, t2: int) -> np.ndarray:
        """Cov(t1, t2) = e^{A(t1-m)} G(m) e^{A^T(t2-m)} with m = min(t1, t2)."""
        self._check_time(t1)
        self._check_time(t2)
        t1, t2 = int(t1), int(t2)
        m = min(t1, t2)
        G = self.gram(m)
        A = self.system.A
        left = expm(A * (t1 - m)) if t1 > m else np.eye(self.n)
        right = expm(A.T * (t2 - m)) if t2 > m else np.eye(self.n)
        return left @ G @ right

    def joint_moments(self, s: int) -> JointMoments:
        """Stacked mean map and covariance of (zeta(1), ..., zeta(s))."""
        self._check_time(s)
        s = int(s)
        with self._lock:
            if s in self._joint:
                return self._joint[s]
        n = self.n
        mean_map = np.vstack([self.mean_matrix(k) for k in range(1, s + 1)])
        cov = np.zeros((s * n, s * n))
        for i in range(1, s + 1):
            block = _symmetrize(self.gram_cov(i, i))
            cov[(i - 1) * n:i * n, (i - 1) * n:i * n] = block
            for j in range(i + 1, s + 1):
                block = self.gram_cov(i, j)
                cov[(i - 1) * n:i * n, (j - 1) * n:j * n] = block
                cov[(j - 1) * n:j * n, (i - 1) * n:i * n] = block.T
        chol = _checked_cholesky(cov, f"joint covariance of the first {s} sampled states")
        for arr in (mean_map, cov, chol):
            arr.flags.writeable = False
        joint = JointMoments(s=s, mean_map=mean_map, covariance=cov, cholesky=chol)
        with self._lock:
            self._joint[s] = joint
        logger.debug(f"Joint moments for s={s}: min diag {np.diag(cov).min():.4e}")
        return joint

    def mu1_map(self, s: int) -> np.ndarray:
        """Stacked M(k) - I for k = 1..s: the mean displacement from the sample."""
        self._check_time(s)
        eye = np.eye(self.n)
        return np.vstack([self.mean_matrix(k) - eye for k in range(1, int(s) + 1)])

    def conditional_gaussian(self, s: int, l: int) -> ConditionalGaussian:
        """Law of zeta(s) conditioned on (zeta(1), ..., zeta(l)), 0 <= l < s."""
        self._check_time(s)
        s, l = int(s), int(l)
        if not 0 <= l < s:
            raise ValueError(f"conditioning needs 0 <= l < s, got s={s}, l={l}")
        with self._lock:
            if (s, l) in self._cond:
                return self._cond[(s, l)]

        n = self.n
        M_s = self.mean_matrix(s)
        cov_ss = _symmetrize(self.gram_cov(s, s))
        if l == 0:
            cond = ConditionalGaussian(s=s, l=0, C_x=M_s, C_v=np.zeros((n, 0)), Sigma_xi=cov_ss)
        else:
            joint = self.joint_moments(l)
            cross = np.hstack([self.gram_cov(s, k) for k in range(1, l + 1)])
            try:
                factor = cho_factor(joint.covariance, lower=True)
            except LinAlgError:
                min_eig = float(np.linalg.eigvalsh(joint.covariance).min())
                raise NumericalDegeneracyError(
                    f"covariance of the first {l} sampled states is singular (smallest eigenvalue {min_eig:.3e})",
                    min_eigenvalue=min_eig,
                )
            W = cho_solve(factor, cross.T).T
            C_x = M_s - W @ joint.mean_map
            sigma = _symmetrize(cov_ss - W @ cross.T)
            cond = ConditionalGaussian(s=s, l=l, C_x=C_x, C_v=W, Sigma_xi=sigma)

        with self._lock:
            self._cond[(s, l)] = cond
        return cond
