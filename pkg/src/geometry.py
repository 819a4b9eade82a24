"""
Boxes, vertex polytopes and grid partitions of the analysis region.
"""
from dataclasses import dataclass, field
from itertools import product
from typing import List, Optional, Sequence, Tuple
import logging

import numpy as np

from .errors import StructuralError
from .moments import ConditionalGaussian

logger = logging.getLogger(__name__)

ABS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class HyperRect:
    """Closed axis-aligned box [lower, upper]."""
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        """Freeze bounds as read-only float vectors."""
        lower = np.array(self.lower, dtype=float).reshape(-1)
        upper = np.array(self.upper, dtype=float).reshape(-1)
        if lower.shape != upper.shape or lower.size == 0:
            raise StructuralError(f"box bounds must be non-empty vectors of equal size, got {lower.shape} and {upper.shape}")
        if np.any(lower > upper):
            raise StructuralError(f"box lower bound exceeds upper bound: {lower} > {upper}")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    def __repr__(self):
        """Short form with the bounds as lists."""
        return f"HyperRect({self.lower.tolist()}, {self.upper.tolist()})"

    @property
    def dim(self) -> int:
        """Number of coordinates."""
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        """Midpoint of the box."""
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        """Half-widths of the box."""
        return 0.5 * (self.upper - self.lower)

    @property
    def widths(self) -> np.ndarray:
        """Side lengths of the box."""
        return self.upper - self.lower

    def volume(self) -> float:
        """Product of the side lengths."""
        return float(np.prod(self.widths))

    def vertices(self) -> np.ndarray:
        """All 2^d corners, shape (2^d, d)."""
        return np.array(list(product(*zip(self.lower, self.upper))), dtype=float)

    def contains(self, points, abs_tol: float = ABS_TOL) -> np.ndarray:
        """Row mask of the points inside the box, up to abs_tol."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((points >= self.lower - abs_tol) & (points <= self.upper + abs_tol), axis=1)

    def intersect(self, other: 'HyperRect') -> Optional['HyperRect']:
        """Common part of two boxes, None when they are disjoint."""
        lower = np.maximum(self.lower, other.lower)
        upper = np.minimum(self.upper, other.upper)
        if np.any(lower > upper):
            return None
        return HyperRect(lower, upper)

    def project(self, points) -> np.ndarray:
        """Nearest points of the box (coordinate clamping)."""
        return np.clip(np.asarray(points, dtype=float), self.lower, self.upper)

    def translate(self, offset) -> 'HyperRect':
        """Box shifted by `offset`."""
        offset = np.asarray(offset, dtype=float)
        return HyperRect(self.lower + offset, self.upper + offset)

    def minkowski_sum(self, other: 'HyperRect') -> 'HyperRect':
        """Minkowski sum of two boxes."""
        return HyperRect(self.lower + other.lower, self.upper + other.upper)

    def affine_box(self, T, c=None) -> 'HyperRect':
        """Tightest box around {T y + c : y in self} by interval arithmetic."""
        T = np.atleast_2d(np.asarray(T, dtype=float))
        if T.shape[1] != self.dim:
            raise StructuralError(f"map with {T.shape[1]} columns cannot act on a {self.dim}-dimensional box")
        center = T @ self.center
        if c is not None:
            center = center + np.asarray(c, dtype=float)
        spread = np.abs(T) @ self.radius
        return HyperRect(center - spread, center + spread)

    @classmethod
    def from_points(cls, points) -> 'HyperRect':
        """Smallest box holding all points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return cls(points.min(axis=0), points.max(axis=0))

    @classmethod
    def cube(cls, half_width: float, dim: int) -> 'HyperRect':
        """Centered cube [-half_width, half_width]^dim."""
        return cls(-half_width * np.ones(dim), half_width * np.ones(dim))


@dataclass(frozen=True, eq=False)
class ConvexPolytope:
    """Convex hull of a finite vertex list, optionally with a half-space description A y <= b."""
    vertices: np.ndarray
    normals: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None

    def __post_init__(self):
        """Freeze vertices and check the half-space description is complete."""
        vertices = np.atleast_2d(np.asarray(self.vertices, dtype=float))
        if vertices.shape[0] == 0:
            raise StructuralError("polytope needs at least one vertex")
        object.__setattr__(self, 'vertices', vertices)
        if (self.normals is None) != (self.offsets is None):
            raise StructuralError("half-space description needs both normals and offsets")

    @property
    def dim(self) -> int:
        """Number of coordinates."""
        return self.vertices.shape[1]

    def bounding_box(self) -> HyperRect:
        """Smallest box holding the vertices."""
        return HyperRect.from_points(self.vertices)

    def contains(self, points, abs_tol: float = 1e-9) -> np.ndarray:
        """Row mask of the points satisfying every half-space."""
        if self.normals is None:
            raise StructuralError("containment needs the half-space description")
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all(points @ np.asarray(self.normals).T <= np.asarray(self.offsets) + abs_tol, axis=1)

    @classmethod
    def from_box(cls, box: HyperRect) -> 'ConvexPolytope':
        """Box as a polytope with both descriptions."""
        eye = np.eye(box.dim)
        normals = np.vstack([eye, -eye])
        offsets = np.concatenate([box.upper, -box.lower])
        return cls(box.vertices(), normals, offsets)


def affine_image(P: ConvexPolytope, T, c=None) -> ConvexPolytope:
    """{T y + c : y in P}, carried as the images of P's vertices."""
    T = np.atleast_2d(np.asarray(T, dtype=float))
    if T.shape[1] != P.dim:
        raise StructuralError(f"map with {T.shape[1]} columns cannot act on a {P.dim}-dimensional polytope")
    images = P.vertices @ T.T
    if c is not None:
        images = images + np.asarray(c, dtype=float)
    return ConvexPolytope(images)


@dataclass(frozen=True, eq=False)
class Partition:
    """Uniform axis-aligned grid over the domain X; cell ids follow C order of the grid indices."""
    domain: HyperRect
    counts: Tuple[int, ...]
    edges: List[np.ndarray] = field(repr=False)
    cells: List[HyperRect] = field(repr=False)

    def __len__(self):
        """Number of cells."""
        return len(self.cells)

    def cell_id(self, index: Sequence[int]) -> int:
        """Cell id of a grid multi-index."""
        return int(np.ravel_multi_index(tuple(index), self.counts))

    def locate(self, points) -> np.ndarray:
        """Cell id of each point, -1 for points outside X."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = self.domain.contains(points, abs_tol=0.0)
        idx = np.empty(points.shape, dtype=int)
        for d, edges in enumerate(self.edges):
            col = np.searchsorted(edges, points[:, d], side='right') - 1
            idx[:, d] = np.clip(col, 0, self.counts[d] - 1)
        ids = np.full(points.shape[0], -1, dtype=int)
        if np.any(inside):
            ids[inside] = np.ravel_multi_index(tuple(idx[inside].T), self.counts)
        return ids


def grid_partition(X: HyperRect, counts: Sequence[int]) -> Partition:
    """Uniform grid over X with counts[d] cells along dimension d."""
    counts = tuple(int(c) for c in counts)
    if len(counts) != X.dim:
        raise StructuralError(f"grid has {len(counts)} counts for a {X.dim}-dimensional region")
    if any(c < 1 for c in counts):
        raise StructuralError(f"grid counts must be >= 1, got {counts}")
    if np.any(X.widths <= 0):
        raise StructuralError(f"region has zero width in dimension(s) {np.flatnonzero(X.widths <= 0).tolist()}")

    edges = [np.linspace(X.lower[d], X.upper[d], counts[d] + 1) for d in range(X.dim)]
    cells = []
    for index in product(*(range(c) for c in counts)):
        lower = [edges[d][i] for d, i in enumerate(index)]
        upper = [edges[d][i + 1] for d, i in enumerate(index)]
        cells.append(HyperRect(lower, upper))
    logger.debug(f"Grid partition {counts}: {len(cells)} cells")
    return Partition(domain=X, counts=counts, edges=edges, cells=cells)


def phi_cube(epsilon: float, s: int, n: int) -> HyperRect:
    """Phi^s(0) = [-epsilon, epsilon]^{s n}."""
    if s < 1:
        raise StructuralError(f"phi_cube needs s >= 1, got {s}")
    return HyperRect.cube(epsilon, s * n)


def _combined_map(cond: ConditionalGaussian, l: int) -> np.ndarray:
    """C_x + C_v S_l where S_l stacks l identities."""
    n = cond.C_x.shape[0]
    G = cond.C_x.copy()
    for k in range(l):
        G = G + cond.C_v[:, k * n:(k + 1) * n]
    return G


def p1_p2_boxes(cond: ConditionalGaussian, R: HyperRect, epsilon: float, l: int) -> Tuple[HyperRect, HyperRect]:
    """
    Outer boxes of the conditional mean sets

        P1 = {C_x x + C_v (v + {x}^l) : x in R, v in Phi^l(0)}
        P2 = {y - x : y in P1 at x}
    """
    n = R.dim
    G = _combined_map(cond, l)
    if l > 0:
        noise = np.abs(cond.C_v) @ (epsilon * np.ones(l * n))
    else:
        noise = np.zeros(n)
    p1 = R.affine_box(G)
    p2 = R.affine_box(G - np.eye(n))
    return (HyperRect(p1.lower - noise, p1.upper + noise),
            HyperRect(p2.lower - noise, p2.upper + noise))


def exact_p_vertices(cond: ConditionalGaussian, R: HyperRect, epsilon: float, l: int,
                     cap: int) -> Optional[Tuple[np.ndarray, np.ndarray]]:
    """Images of the vertices of R x Phi^l(0) under the P1 and P2 maps, or None beyond `cap`."""
    n = R.dim
    if 2 ** (n + l * n) > cap:
        return None
    G = _combined_map(cond, l)
    base1 = R.vertices() @ G.T
    base2 = R.vertices() @ (G - np.eye(n)).T
    if l == 0:
        return base1, base2
    shifts = phi_cube(epsilon, l, n).vertices() @ cond.C_v.T
    p1 = (base1[:, None, :] + shifts[None, :, :]).reshape(-1, n)
    p2 = (base2[:, None, :] + shifts[None, :, :]).reshape(-1, n)
    return p1, p2
