"""
Extremes of a Gaussian rectangle probability as its mean ranges over a set.

P(y) = N(y, cov)(rect) is log-concave in y: its minimum over a polytope sits at a vertex and
any stationary point of log P over a box is a global maximum.
"""
from typing import Dict, Optional, Union
import logging

import numpy as np

from .errors import ProbabilityUnderflowError, StructuralError
from .gaussint import EXACT_ERR, GaussianIntegrator, ProbEstimate, UNDERFLOW, interval_mass
from .geometry import HyperRect

logger = logging.getLogger(__name__)

ARMIJO_C = 1e-4
SHRINK = 0.5
MIN_STEP = 1e-12


class MeanOptimizer:
    """Sound lower/upper bounds of min/max of P(y) over a mean set."""

    def __init__(self, integrator: GaussianIntegrator, config: Optional[Dict] = None):
        """Read optimizer tolerances and start counts from the solver config."""
        solver = (config or {}).get('solver', config or {})
        self.integrator = integrator
        self.opt_tol = float(solver.get('opt_tol', 1e-6))
        self.opt_slack = float(solver.get('opt_slack', 1e-4))
        self.max_iter = int(solver.get('max_iter', 500))
        self.max_vertex_starts = int(solver.get('max_vertex_starts', 16))

    @staticmethod
    def marginal_upper_bound(cov, rect: HyperRect, mean_box: HyperRect) -> float:
        """
        Exact bound max_y P(y) <= min_i max_{y_i} P(Z_i in rect_i) over the box.

        Each one-dimensional mass is unimodal and symmetric about the interval center.
        """
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        sd = np.sqrt(np.diag(cov))
        best_mean = mean_box.project(rect.center)
        masses = interval_mass((rect.lower - best_mean) / sd, (rect.upper - best_mean) / sd)
        return float(min(masses.min() + EXACT_ERR, 1.0))

    def min_integral_over_means(self, cov, rect: HyperRect,
                                mean_set: Union[np.ndarray, HyperRect]) -> float:
        """min over the vertices of mean_set of (P - err), clamped to [0, 1]."""
        if isinstance(mean_set, HyperRect):
            points = mean_set.vertices()
        else:
            points = np.atleast_2d(np.asarray(mean_set, dtype=float))
        if points.shape[0] == 0 or points.size == 0:
            raise StructuralError("mean set has no vertices")
        if self.marginal_upper_bound(cov, rect, HyperRect.from_points(points)) <= self.integrator.tol:
            return 0.0
        points = np.unique(points, axis=0)

        best = 1.0
        for y in points:
            estimate = self.integrator.mvn_rect_prob(y, cov, rect)
            best = min(best, estimate.value - estimate.err)
            if best <= 0.0:
                return 0.0
        return float(min(max(best, 0.0), 1.0))

    def _log_value(self, y, cov, rect) -> tuple:
        """log P(y) with its estimate; -inf when P underflows."""
        estimate = self.integrator.mvn_rect_prob(y, cov, rect)
        if estimate.value < UNDERFLOW:
            return -np.inf, estimate
        return float(np.log(estimate.value)), estimate

    def _ascend(self, start: np.ndarray, cov, rect: HyperRect, box: HyperRect) -> Optional[ProbEstimate]:
        """Projected ascent on log P from one start; returns the best estimate seen."""
        y = box.project(start)
        f, estimate = self._log_value(y, cov, rect)
        if not np.isfinite(f):
            return None
        best = estimate
        step = 1.0
        for it in range(self.max_iter):
            try:
                g = self.integrator.log_prob_grad(y, cov, rect)
            except ProbabilityUnderflowError:
                break
            if np.linalg.norm(box.project(y + g) - y) <= self.opt_tol:
                break

            step = min(step * 2.0, 1e6)
            accepted = False
            while step > MIN_STEP:
                candidate = box.project(y + step * g)
                f_new, est_new = self._log_value(candidate, cov, rect)
                if np.isfinite(f_new) and f_new >= f + ARMIJO_C * g @ (candidate - y):
                    accepted = True
                    break
                step *= SHRINK
            if not accepted:
                break
            y, f = candidate, f_new
            if est_new.value > best.value:
                best = est_new
        logger.debug(f"Ascent from {start} stopped after {it + 1} iterations at P={best.value:.6g}")
        return best

    def max_integral_over_means(self, cov, rect: HyperRect, mean_box: HyperRect) -> float:
        """
        Upper bound on max P(y) over mean_box.

        Multi-start projected gradient ascent on log P (the point of the box nearest the
        rectangle's center, the box center, and the box vertices when there are few), Armijo backtracking.
        Returns best value + err + opt_slack, clamped to 1 and to the marginal bound. When the
        box holds the rectangle's center that point is the maximizer for any covariance.
        """
        marginal = self.marginal_upper_bound(cov, rect, mean_box)
        if marginal <= self.integrator.tol:
            return marginal

        if np.all(mean_box.contains(rect.center)):
            estimate = self.integrator.mvn_rect_prob(rect.center, cov, rect)
            return float(min(estimate.value + estimate.err + self.opt_slack, marginal))

        starts = [mean_box.project(rect.center), mean_box.center]
        if 2 ** mean_box.dim <= self.max_vertex_starts:
            starts.extend(mean_box.vertices())
        starts = np.array(starts)
        _, first = np.unique(starts, axis=0, return_index=True)
        starts = starts[np.sort(first)]

        best: Optional[ProbEstimate] = None
        worst_err = 0.0
        for start in starts:
            result = self._ascend(start, cov, rect, mean_box)
            if result is None:
                continue
            worst_err = max(worst_err, result.err)
            if best is None or result.value > best.value:
                best = result
            if best.value + worst_err + self.opt_slack >= marginal:
                break

        if best is None:
            logger.debug("All ascent starts underflow; returning the vacuous-low bound")
            return float(min(self.integrator.tol + self.opt_slack, marginal))
        return float(min(best.value + max(best.err, worst_err) + self.opt_slack, marginal))
