"""Four-corners Cantor set, its dyadic lattice and the distance oracle.

A boundary is a finite union of closed axis-aligned rectangles (the
"leaves") organised in a bounding-box tree.  For the Cantor set the tree is
the lattice itself: node ``(g, i)`` is the generation-``g`` cube with base-4
index ``i`` and its children are ``4i .. 4i+3``.  The domain is always
``B(0, r_out) minus the leaves``.

Corner digits: 0 = lower-left, 1 = lower-right, 2 = upper-left, 3 = upper-right.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np
from scipy.spatial import cKDTree

from .errors import CapacityError, DomainError, LeafError, ParameterError

MAX_DEPTH = 8
C_BALL_MAX = math.sqrt(2.0) / 4.0


# ---------------------------------------------------------------- kernels

@nb.njit(cache=True, inline="always")
def _pt_rect(px, py, x0, y0, x1, y1):
    dx = max(x0 - px, 0.0, px - x1)
    dy = max(y0 - py, 0.0, py - y1)
    return math.sqrt(dx * dx + dy * dy)


@nb.njit(cache=True, inline="always")
def _rect_rect(a0, a1, a2, a3, b0, b1, b2, b3):
    dx = max(b0 - a2, 0.0, a0 - b2)
    dy = max(b1 - a3, 0.0, a1 - b3)
    return math.sqrt(dx * dx + dy * dy)


@nb.njit(cache=True)
def tree_nearest(px, py, bbox, cstart, ccount, leaf, stack, lo, hi):
    """Distance to the nearest leaf whose index is outside [lo, hi).

    Returns (distance, leaf index); (inf, -1) if every leaf is excluded.
    """
    best = np.inf
    bi = -1
    top = 0
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        k = stack[top]
        d = _pt_rect(px, py, bbox[k, 0], bbox[k, 1], bbox[k, 2], bbox[k, 3])
        if d >= best:
            continue
        li = leaf[k]
        if li >= 0:
            if li < lo or li >= hi:
                best = d
                bi = li
            continue
        c0 = cstart[k]
        for c in range(c0 + ccount[k] - 1, c0 - 1, -1):
            stack[top] = c
            top += 1
    return best, bi


@nb.njit(cache=True)
def _nearest_batch(P, bbox, cstart, ccount, leaf, lo, hi):
    n = P.shape[0]
    d = np.empty(n)
    idx = np.empty(n, np.int64)
    stack = np.empty(bbox.shape[0] + 8, np.int64)
    for i in range(n):
        d[i], idx[i] = tree_nearest(P[i, 0], P[i, 1], bbox, cstart, ccount, leaf, stack, lo, hi)
    return d, idx


@nb.njit(cache=True)
def _rect_dist_batch(R, bbox, cstart, ccount, leaf):
    """Distance from each rectangle in R to the union of leaves (0 if they meet)."""
    n = R.shape[0]
    out = np.empty(n)
    stack = np.empty(bbox.shape[0] + 8, np.int64)
    for i in range(n):
        best = np.inf
        stack[0] = 0
        top = 1
        while top > 0:
            top -= 1
            k = stack[top]
            d = _rect_rect(R[i, 0], R[i, 1], R[i, 2], R[i, 3],
                           bbox[k, 0], bbox[k, 1], bbox[k, 2], bbox[k, 3])
            if d >= best:
                continue
            if leaf[k] >= 0:
                best = d
                if best == 0.0:
                    break
                continue
            c0 = cstart[k]
            for c in range(c0, c0 + ccount[k]):
                stack[top] = c
                top += 1
        out[i] = best
    return out


@nb.njit(cache=True)
def _leaves_in_rect(R, bbox, cstart, ccount, leaf):
    """Indices of leaves meeting the closed rectangle R."""
    out = []
    stack = np.empty(bbox.shape[0] + 8, np.int64)
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        k = stack[top]
        if bbox[k, 0] > R[2] or bbox[k, 2] < R[0] or bbox[k, 1] > R[3] or bbox[k, 3] < R[1]:
            continue
        if leaf[k] >= 0:
            out.append(leaf[k])
            continue
        c0 = cstart[k]
        for c in range(c0, c0 + ccount[k]):
            stack[top] = c
            top += 1
    return out


# ---------------------------------------------------------------- types

@dataclass(frozen=True)
class Ball:
    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("ball radius must be positive")

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        return np.hypot(pts[:, 0] - self.center[0], pts[:, 1] - self.center[1]) < self.radius


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Generation-j cell of the Cantor lattice, identified by its corner path."""

    generation: int
    path: tuple[int, ...] = field(compare=True)

    @classmethod
    def from_path(cls, path) -> "DyadicCube":
        path = tuple(int(d) for d in path)
        if any(d < 0 or d > 3 for d in path):
            raise ParameterError(f"path digits must be in 0..3, got {path}")
        return cls(len(path), path)

    @classmethod
    def from_index(cls, gen: int, index: int) -> "DyadicCube":
        digits = [(index >> (2 * (gen - 1 - k))) & 3 for k in range(gen)]
        return cls(gen, tuple(digits))

    @property
    def index(self) -> int:
        i = 0
        for d in self.path:
            i = 4 * i + d
        return i

    @property
    def side(self) -> float:
        return 4.0 ** -self.generation

    @property
    def measure(self) -> float:
        return 4.0 ** -self.generation

    @property
    def int_corner(self) -> tuple[int, int]:
        """Lower-left corner in units of 4^-generation."""
        g = self.generation
        ix = iy = 0
        for k, d in enumerate(self.path, start=1):
            w = 3 * 4 ** (g - k)
            ix += (d & 1) * w
            iy += (d >> 1) * w
        return ix, iy

    @property
    def corner(self) -> tuple[float, float]:
        ix, iy = self.int_corner
        s = self.side
        return ix * s, iy * s

    @property
    def center(self) -> tuple[float, float]:
        x0, y0 = self.corner
        h = 0.5 * self.side
        return x0 + h, y0 + h

    @property
    def square(self) -> tuple[float, float, float, float]:
        x0, y0 = self.corner
        return x0, y0, x0 + self.side, y0 + self.side

    def child(self, d: int) -> "DyadicCube":
        return DyadicCube(self.generation + 1, self.path + (int(d),))

    def parent(self) -> "DyadicCube":
        if self.generation == 0:
            raise LeafError("root has no parent")
        return DyadicCube(self.generation - 1, self.path[:-1])

    def ancestor(self, i: int) -> "DyadicCube":
        """i-th ancestor (i = 0 is the cube itself)."""
        if i > self.generation:
            raise LeafError("ancestor above the root")
        return DyadicCube(self.generation - i, self.path[: self.generation - i])

    def contains(self, other: "DyadicCube") -> bool:
        return other.generation >= self.generation and other.path[: self.generation] == self.path

    def label(self) -> str:
        return "".join(str(d) for d in self.path) or "-"


ROOT = DyadicCube(0, ())


class BoundaryGeometry:
    """Union of closed axis-aligned rectangles inside the disc B(0, r_out).

    Parameters
    ----------
    rects : (N, 4) array of ``x0, y0, x1, y1``.
    r_out : radius of the outer circle.
    """

    def __init__(self, rects, r_out: float = 100.0, _tree=None):
        rects = np.asarray(rects, dtype=np.float64).reshape(-1, 4)
        self.rects = rects
        self.r_out = float(r_out)
        if _tree is None:
            _tree = self._flat_tree(rects)
        self.bbox, self.cstart, self.ccount, self.leaf = _tree
        self.leaf_node = np.full(len(rects), -1, np.int64)
        ln = np.nonzero(self.leaf >= 0)[0]
        self.leaf_node[self.leaf[ln]] = ln

    @staticmethod
    def _flat_tree(rects):
        n = len(rects)
        bbox = np.empty((n + 1, 4))
        if n:
            bbox[0] = (rects[:, 0].min(), rects[:, 1].min(), rects[:, 2].max(), rects[:, 3].max())
            bbox[1:] = rects
        else:
            bbox[0] = (np.inf, np.inf, -np.inf, -np.inf)
        cstart = np.zeros(n + 1, np.int64)
        ccount = np.zeros(n + 1, np.int64)
        cstart[0], ccount[0] = 1, n
        leaf = np.full(n + 1, -1, np.int64)
        leaf[1:] = np.arange(n)
        return bbox, cstart, ccount, leaf

    @property
    def n_leaves(self) -> int:
        return len(self.rects)

    @property
    def leaf_weights(self) -> np.ndarray:
        """Boundary measure carried by each leaf (uniform, total 1)."""
        n = self.n_leaves
        return np.full(n, 1.0 / n) if n else np.zeros(0)

    @property
    def leaf_centers(self) -> np.ndarray:
        r = self.rects
        return np.column_stack([(r[:, 0] + r[:, 2]) / 2, (r[:, 1] + r[:, 3]) / 2])

    @property
    def tree(self):
        return self.bbox, self.cstart, self.ccount, self.leaf

    # distance queries -------------------------------------------------
    def nearest_leaf(self, pts, exclude=(0, 0)):
        P = np.ascontiguousarray(np.atleast_2d(np.asarray(pts, dtype=np.float64)))
        if self.n_leaves == 0:
            return np.full(len(P), np.inf), np.full(len(P), -1, np.int64)
        return _nearest_batch(P, *self.tree, int(exclude[0]), int(exclude[1]))

    def dist_to_E(self, pts) -> np.ndarray:
        return self.nearest_leaf(pts)[0]

    def in_E(self, pts) -> np.ndarray:
        return self.dist_to_E(pts) == 0.0

    def in_domain(self, pts) -> np.ndarray:
        P = np.atleast_2d(pts)
        return (self.dist_to_E(P) > 0) & (np.hypot(P[:, 0], P[:, 1]) < self.r_out)

    def dist_to_boundary(self, pts, check: bool = True) -> np.ndarray:
        """min(dist(x, E), r_out - |x|) for points of the domain."""
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        dE = self.dist_to_E(P)
        dO = self.r_out - np.hypot(P[:, 0], P[:, 1])
        if check and (np.any(dE <= 0) or np.any(dO <= 0)):
            bad = np.nonzero((dE <= 0) | (dO <= 0))[0][0]
            raise DomainError(f"point {tuple(P[bad])} is not in the domain")
        return np.minimum(dE, dO)

    def rect_dist_to_E(self, R) -> np.ndarray:
        R = np.ascontiguousarray(np.atleast_2d(np.asarray(R, dtype=np.float64)))
        if self.n_leaves == 0:
            return np.full(len(R), np.inf)
        return _rect_dist_batch(R, *self.tree)

    def rect_meets_E(self, R) -> np.ndarray:
        return self.rect_dist_to_E(R) == 0.0

    def leaves_in_rect(self, R) -> np.ndarray:
        if self.n_leaves == 0:
            return np.zeros(0, np.int64)
        out = _leaves_in_rect(np.asarray(R, dtype=np.float64), *self.tree)
        return np.array(sorted(out), dtype=np.int64)

    def corner_points(self) -> np.ndarray:
        """The four corners of every leaf: points of E lying on its frontier."""
        r = self.rects
        return np.concatenate([r[:, [0, 1]], r[:, [2, 1]], r[:, [0, 3]], r[:, [2, 3]]])


class CantorGeometry(BoundaryGeometry):
    """Generation-``depth`` approximation E_n of the four-corners Cantor set."""

    def __init__(self, depth: int, r_out: float = 100.0, max_depth: int = MAX_DEPTH):
        if depth < 0:
            raise ParameterError("depth must be nonnegative")
        if depth > max_depth:
            raise CapacityError(f"depth {depth} exceeds the configured maximum {max_depth}")
        self.depth = int(depth)
        self.int_rects = self._int_squares(self.depth)
        unit = 4.0 ** -self.depth
        rects = self.int_rects.astype(np.float64) * unit
        super().__init__(rects, r_out, _tree=self._lattice_tree(self.depth))

    @staticmethod
    def _int_corners(gen: int) -> np.ndarray:
        idx = np.arange(4**gen, dtype=np.int64)
        ix = np.zeros_like(idx)
        iy = np.zeros_like(idx)
        for k in range(1, gen + 1):
            d = (idx >> (2 * (gen - k))) & 3
            w = 3 * 4 ** (gen - k)
            ix += (d & 1) * w
            iy += (d >> 1) * w
        return np.column_stack([ix, iy])

    @classmethod
    def _int_squares(cls, n: int) -> np.ndarray:
        c = cls._int_corners(n)
        return np.column_stack([c, c + 1])

    @classmethod
    def _lattice_tree(cls, n: int):
        offs = [(4**g - 1) // 3 for g in range(n + 2)]
        total = offs[n + 1]
        bbox = np.empty((total, 4))
        cstart = np.zeros(total, np.int64)
        ccount = np.zeros(total, np.int64)
        leaf = np.full(total, -1, np.int64)
        for g in range(n + 1):
            c = cls._int_corners(g).astype(np.float64) * 4.0 ** -g
            s = 4.0 ** -g
            sl = slice(offs[g], offs[g + 1])
            bbox[sl, 0:2] = c
            bbox[sl, 2:4] = c + s
            if g < n:
                cstart[sl] = offs[g + 1] + 4 * np.arange(4**g)
                ccount[sl] = 4
            else:
                leaf[sl] = np.arange(4**g)
        return bbox, cstart, ccount, leaf

    # lattice ----------------------------------------------------------
    @property
    def root(self) -> DyadicCube:
        return ROOT

    def cube(self, path) -> DyadicCube:
        q = DyadicCube.from_path(path)
        if q.generation > self.depth:
            raise LeafError(f"generation {q.generation} exceeds depth {self.depth}")
        return q

    def cubes(self, gen: int) -> list[DyadicCube]:
        if gen < 0 or gen > self.depth:
            raise LeafError(f"generation {gen} outside 0..{self.depth}")
        return [DyadicCube.from_index(gen, i) for i in range(4**gen)]

    def all_cubes(self, max_gen: int | None = None) -> list[DyadicCube]:
        top = self.depth if max_gen is None else min(max_gen, self.depth)
        return [q for g in range(top + 1) for q in self.cubes(g)]

    def children(self, cube: DyadicCube) -> list[DyadicCube]:
        if cube.generation >= self.depth:
            raise LeafError(f"cube {cube.label()} is at the finest generation")
        return [cube.child(d) for d in range(4)]

    def leaf_range(self, cube: DyadicCube) -> tuple[int, int]:
        k = 4 ** (self.depth - cube.generation)
        i = cube.index
        return i * k, (i + 1) * k

    def leaf_cube(self, i: int) -> DyadicCube:
        return DyadicCube.from_index(self.depth, int(i))

    def cube_of_leaf(self, i, gen: int):
        """Base-4 index of the generation-``gen`` ancestor of leaf ``i``."""
        return np.asarray(i) >> (2 * (self.depth - gen))

    def cube_containing(self, x, gen: int) -> DyadicCube | None:
        """Lattice cube of generation ``gen`` whose square contains the point, if any."""
        px, py = float(x[0]), float(x[1])
        path = []
        x0 = y0 = 0.0
        s = 1.0
        for _ in range(gen):
            if not (x0 <= px <= x0 + s and y0 <= py <= y0 + s):
                return None
            c = s / 4
            bx = 1 if px >= x0 + 3 * c else (0 if px <= x0 + c else -1)
            by = 1 if py >= y0 + 3 * c else (0 if py <= y0 + c else -1)
            if bx < 0 or by < 0:
                return None
            path.append(bx + 2 * by)
            x0 += 3 * c * bx
            y0 += 3 * c * by
            s = c
        if not (x0 <= px <= x0 + s and y0 <= py <= y0 + s):
            return None
        return DyadicCube(gen, tuple(path))

    def cube_node(self, cube: DyadicCube) -> int:
        return (4**cube.generation - 1) // 3 + cube.index

    # exports -----------------------------------------------------------
    def to_json(self) -> str:
        sq = []
        unit = 4.0 ** -self.depth
        for i, (ix, iy, _, _) in enumerate(self.int_rects):
            q = self.leaf_cube(i)
            sq.append({"path": q.label() if q.path else "", "x0": ix * unit, "y0": iy * unit, "side": unit})
        return json.dumps({"depth": self.depth, "squares": sq}, separators=(",", ":"))


def build_cantor(depth: int, r_out: float = 100.0, max_depth: int = MAX_DEPTH) -> CantorGeometry:
    return CantorGeometry(depth, r_out=r_out, max_depth=max_depth)


def children(cube: DyadicCube, geom: CantorGeometry) -> list[DyadicCube]:
    return geom.children(cube)


def dist_to_boundary(x, geom: BoundaryGeometry, outer_radius: float | None = None):
    """Distance from a domain point to E union the outer circle."""
    if outer_radius is not None and outer_radius != geom.r_out:
        geom = BoundaryGeometry(geom.rects, outer_radius, _tree=geom.tree)
    x = np.asarray(x, dtype=np.float64)
    d = geom.dist_to_boundary(np.atleast_2d(x))
    return float(d[0]) if x.ndim == 1 else d


def brute_force_dist(P, rects, r_out) -> np.ndarray:
    """Reference oracle: direct min over every rectangle."""
    P = np.atleast_2d(P)
    out = np.full(len(P), np.inf)
    for r in rects:
        dx = np.maximum(np.maximum(r[0] - P[:, 0], 0.0), P[:, 0] - r[2])
        dy = np.maximum(np.maximum(r[1] - P[:, 1], 0.0), P[:, 1] - r[3])
        out = np.minimum(out, np.sqrt(dx * dx + dy * dy))
    return np.minimum(out, r_out - np.hypot(P[:, 0], P[:, 1]))


# ---------------------------------------------------------------- balls, cones

def ball_B_hat(cube: DyadicCube, c: float = 0.3, geom: CantorGeometry | None = None) -> Ball:
    """Ball at the cube center with radius c * side."""
    if not 0 < c < C_BALL_MAX:
        raise ParameterError(f"c must lie in (0, sqrt(2)/4), got {c}")
    b = Ball(cube.center, c * cube.side)
    if geom is not None:
        if cube.generation >= geom.depth:
            raise LeafError("the ball of a finest-generation cube lies inside E_n")
        if geom.dist_to_E(np.array([b.center]))[0] <= b.radius:
            raise DomainError("ball meets E_n")
    return b


def in_cone(vertex, y, alpha: float, R: float, geom: BoundaryGeometry):
    """Membership of y in the truncated cone of aperture alpha at a boundary vertex."""
    if not alpha > 0:
        raise ParameterError("alpha must be positive")
    Y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    v = np.asarray(vertex, dtype=np.float64)
    inside = geom.in_domain(Y)
    d = np.zeros(len(Y))
    if inside.any():
        d[inside] = geom.dist_to_boundary(Y[inside], check=False)
    r = np.hypot(Y[:, 0] - v[0], Y[:, 1] - v[1])
    out = inside & (r < (1 + alpha) * d) & (r < R)
    return bool(out[0]) if np.ndim(y) == 1 else out


def corkscrew_point(x, r: float, geom: CantorGeometry) -> Ball:
    """Ball inside B(x, r) and the domain, of radius comparable to r.

    For r <= 4 the ball sits in the central cross-gap of the smallest
    lattice cube of side >= r/4 containing x; larger scales use free space
    beside the unit square.
    """
    x = np.asarray(x, dtype=np.float64)
    if geom.dist_to_E(x[None])[0] > 0:
        raise DomainError("corkscrew base point must lie on E_n")
    if not 0 < r < 2 * geom.r_out:
        raise ParameterError("r out of range")
    if r > 4.0:
        rho = 0.99 * min((r - 1.5) / 2, 0.45 * geom.r_out)
        u = x - 0.5
        nu = np.hypot(*u)
        u = u / nu if nu > 0 else np.array([-1.0, 0.0])
        c = 0.5 + (rho + 0.75) * u
        return Ball((float(c[0]), float(c[1])), rho)
    j = int(math.floor(math.log(4.0 / r, 4) + 1e-12))
    j = max(0, min(j, geom.depth - 1))
    q = geom.cube_containing(x, j)
    if q is None:
        raise DomainError("point is not in E_n")
    cen = np.array(q.center)
    room = r - np.hypot(*(cen - x))
    rad = min(0.3 * q.side, 0.99 * room)
    if rad <= 0.05 * q.side:
        raise DomainError("scale below the resolution of E_n")
    return Ball((float(cen[0]), float(cen[1])), float(rad))


# ---------------------------------------------------------------- packing

def carleson_norm(family, geom: CantorGeometry | None = None) -> float:
    """sup over lattice cubes R of sum_{Q in family, Q inside R} sigma(Q)/sigma(R)."""
    acc: dict[tuple, float] = {}
    seen = set()
    for q in family:
        if q.path in seen:
            continue
        seen.add(q.path)
        if geom is not None and q.generation > geom.depth:
            raise LeafError("family cube deeper than the geometry")
        m = q.measure
        for i in range(q.generation + 1):
            p = q.path[:i]
            acc[p] = acc.get(p, 0.0) + m
    if not acc:
        return 0.0
    return max(v / 4.0 ** -len(p) for p, v in acc.items())


def small_boundary_mass(geom: CantorGeometry, cube: DyadicCube, tau: float) -> float:
    """Measure of the leaves of Q within tau*side(Q) of E minus Q."""
    lo, hi = geom.leaf_range(cube)
    P = geom.leaf_centers[lo:hi]
    # distance from a leaf square to E\Q: centre distance minus half diagonal is a lower bound,
    # refine with exact rectangle distances for candidates
    d, _ = geom.nearest_leaf(P, exclude=(lo, hi))
    half = math.sqrt(2) * 0.5 * 4.0 ** -geom.depth
    cand = np.nonzero(d - half <= tau * cube.side)[0]
    count = 0
    if len(cand):
        others = np.concatenate([geom.rects[:lo], geom.rects[hi:]])
        for i in cand:
            r = geom.rects[lo + i]
            dx = np.maximum(np.maximum(others[:, 0] - r[2], 0), r[0] - others[:, 2])
            dy = np.maximum(np.maximum(others[:, 1] - r[3], 0), r[1] - others[:, 3])
            if np.sqrt(dx * dx + dy * dy).min() <= tau * cube.side:
                count += 1
    return count * 4.0 ** -geom.depth


def calibrate_small_boundaries(geom: CantorGeometry, taus=(0.25, 1 / 16)) -> float:
    """Smallest C with mass <= C tau^(1/C) sigma(Q) over all cubes, found by bisection."""
    worst = []
    for q in geom.all_cubes(geom.depth - 1) if geom.depth else [ROOT]:
        for t in taus:
            worst.append((small_boundary_mass(geom, q, t) / q.measure, t))

    def ok(C):
        return all(m <= C * t ** (1 / C) + 1e-15 for m, t in worst)

    lo, hi = 1.0, 2.0
    if ok(lo):
        return lo
    while not ok(hi):
        hi *= 2
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


# ---------------------------------------------------------------- Whitney

@dataclass(frozen=True)
class WhitneyCube:
    x0: float
    y0: float
    side: float
    dist: float

    @property
    def center(self):
        return self.x0 + self.side / 2, self.y0 + self.side / 2

    def scaled(self, k: float):
        cx, cy = self.center
        h = k * self.side / 2
        return cx - h, cy - h, cx + h, cy + h


@dataclass
class WhitneyDecomposition:
    cubes: list[WhitneyCube]
    boundary_cube: list[DyadicCube | None]
    lam_needed: float
    lam: float
    d0: int
    uncovered_area: float
    window: tuple[float, float, float, float]

    def to_csv(self, path, geom: CantorGeometry):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gen", "x0", "y0", "side", "dist_to_E"])
            for c in self.cubes:
                g = int(round(-math.log2(c.side)))
                dE = float(geom.rect_dist_to_E(np.array([[c.x0, c.y0, c.x0 + c.side, c.y0 + c.side]]))[0])
                w.writerow([g, repr(c.x0), repr(c.y0), repr(c.side), repr(dE)])

    def locate(self, pts) -> np.ndarray:
        """Number of cubes whose closed square contains each point."""
        P = np.atleast_2d(pts)
        A = np.array([[c.x0, c.y0, c.x0 + c.side, c.y0 + c.side] for c in self.cubes])
        cnt = np.zeros(len(P), np.int64)
        for lo in range(0, len(A), 4096):
            a = A[lo:lo + 4096]
            inside = ((P[:, None, 0] > a[None, :, 0]) & (P[:, None, 0] < a[None, :, 2])
                      & (P[:, None, 1] > a[None, :, 1]) & (P[:, None, 1] < a[None, :, 3]))
            cnt += inside.sum(axis=1)
        return cnt


def whitney_decompose(geom: BoundaryGeometry, window, min_side: float | None = None,
                      lam: float = 128.0, d0_max: int = 1024) -> WhitneyDecomposition:
    """Maximal dyadic squares P of the window with diam(P) < dist(P, boundary)/20.

    Squares are refined down to ``min_side``; the area left uncovered (all of
    it hugging the boundary) is reported.
    """
    x0, y0, x1, y1 = map(float, window)
    w, h = x1 - x0, y1 - y0
    s0 = 2.0 ** math.floor(math.log2(min(w, h)))
    while abs(w / s0 - round(w / s0)) > 1e-9 or abs(h / s0 - round(h / s0)) > 1e-9:
        s0 /= 2
    if min_side is None:
        depth = getattr(geom, "depth", 3)
        min_side = 4.0 ** -(depth + 2)
    nx, ny = int(round(w / s0)), int(round(h / s0))
    todo = [(x0 + i * s0, y0 + j * s0, s0) for j in range(ny) for i in range(nx)]
    acc: list[WhitneyCube] = []
    uncovered = 0.0
    while todo:
        R = np.array([[a, b, a + s, b + s] for a, b, s in todo])
        dE = geom.rect_dist_to_E(R)
        far = np.max(np.hypot(R[:, [0, 0, 2, 2]], R[:, [1, 3, 1, 3]]), axis=1)
        dO = geom.r_out - far
        d = np.minimum(dE, dO)
        nxt = []
        for (a, b, s), dd in zip(todo, d):
            if math.sqrt(2) * s < dd / 20:
                acc.append(WhitneyCube(a, b, s, float(dd)))
            elif s / 2 >= min_side:
                hs = s / 2
                nxt += [(a, b, hs), (a + hs, b, hs), (a, b + hs, hs), (a + hs, b + hs, hs)]
            else:
                uncovered += s * s
        todo = nxt
    acc.sort(key=lambda c: (-c.side, c.y0, c.x0))
    C = np.array([c.center for c in acc])
    S = np.array([c.side for c in acc])
    # Lambda needed: sup-norm distance from center to the boundary, bounded by Euclidean distance
    dc = geom.dist_to_boundary(C, check=False) if len(C) else np.zeros(0)
    lam_needed = float(np.max(2 * dc / S + 1)) if len(C) else 0.0
    d0 = 0
    if len(C):
        counts = np.zeros(len(C), np.int64)
        levels = np.unique(S)
        trees = {s: (cKDTree(C[S == s]), np.nonzero(S == s)[0]) for s in levels}
        for sa in levels:
            ia = np.nonzero(S == sa)[0]
            for sb in levels:
                hits = trees[sb][0].query_ball_point(C[ia], 5 * (sa + sb), p=np.inf, return_length=True)
                if np.any(hits) and not 0.5 - 1e-12 <= sa / sb <= 2 + 1e-12:
                    raise AssertionError("Whitney neighbours differ by more than a factor 2")
                counts[ia] += hits
        d0 = int(counts.max())
    if d0 > d0_max:
        raise AssertionError(f"Whitney overlap count {d0} exceeds {d0_max}")
    bcubes: list[DyadicCube | None] = []
    if isinstance(geom, CantorGeometry) and len(C):
        dE, li = geom.nearest_leaf(C)
        dO = geom.r_out - np.hypot(C[:, 0], C[:, 1])
        for k, c in enumerate(acc):
            if dO[k] < dE[k]:
                bcubes.append(None)
                continue
            g = int(round(-math.log(c.side, 4)))
            g = max(0, min(g, geom.depth))
            bcubes.append(DyadicCube.from_index(g, int(geom.cube_of_leaf(li[k], g))))
    else:
        bcubes = [None] * len(acc)
    return WhitneyDecomposition(acc, bcubes, lam_needed, lam, d0, uncovered, (x0, y0, x1, y1))
