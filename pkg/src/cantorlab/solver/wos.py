"""Walk on spheres for the harmonic measure of B(0, r_out) minus E_n.

Walk ``w`` started from point ``p`` draws its angles from the counter-based
stream ``stream_key(seed, p * 2**32 + w)``, so results do not depend on the
order in which walks are run.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from ..errors import ConvergenceError, DomainError
from ..geometry import BoundaryGeometry, CantorGeometry, DyadicCube, tree_nearest
from ..stochastics import stream_key, uniform_at

OUTER = -1
CAPPED = -2
TWO_PI = 2.0 * math.pi


@nb.njit(cache=True)
def _walk(x, y, bbox, cstart, ccount, leaf, stack, r_out, eps_stop, key, cap):
    for step in range(cap):
        dE, li = tree_nearest(x, y, bbox, cstart, ccount, leaf, stack, 0, 0)
        r = math.sqrt(x * x + y * y)
        dO = r_out - r
        d = min(dE, dO)
        if d < eps_stop:
            if dO < dE:
                return OUTER, x * r_out / r, y * r_out / r, step
            return li, x, y, step
        th = TWO_PI * uniform_at(key, step)
        x += d * math.cos(th)
        y += d * math.sin(th)
    return CAPPED, x, y, cap


@nb.njit(cache=True)
def _run(starts, n_walks, seed, bbox, cstart, ccount, leaf, rects, r_out, eps_stop, cap,
         hit, tx, ty, steps):
    stack = np.empty(bbox.shape[0] + 8, np.int64)
    for p in range(starts.shape[0]):
        for w in range(n_walks):
            key = stream_key(seed, np.uint64(p) * np.uint64(4294967296) + np.uint64(w))
            h, x, y, s = _walk(starts[p, 0], starts[p, 1], bbox, cstart, ccount, leaf, stack,
                               r_out, eps_stop, key, cap)
            if h >= 0:
                x = min(max(x, rects[h, 0]), rects[h, 2])
                y = min(max(y, rects[h, 1]), rects[h, 3])
            hit[p, w] = h
            tx[p, w] = x
            ty[p, w] = y
            steps[p, w] = s


@nb.njit(cache=True)
def _run_counts(starts, n_walks, seed, bbox, cstart, ccount, leaf, r_out, eps_stop, cap, counts):
    """Hit counts only: counts[p, leaf] and counts[p, n_leaves] for the outer circle."""
    stack = np.empty(bbox.shape[0] + 8, np.int64)
    nl = counts.shape[1] - 1
    capped = 0
    for p in range(starts.shape[0]):
        for w in range(n_walks):
            key = stream_key(seed, np.uint64(p) * np.uint64(4294967296) + np.uint64(w))
            h, x, y, s = _walk(starts[p, 0], starts[p, 1], bbox, cstart, ccount, leaf, stack,
                               r_out, eps_stop, key, cap)
            if h == OUTER:
                counts[p, nl] += 1
            elif h >= 0:
                counts[p, h] += 1
            else:
                capped += 1
    return capped


def default_eps_stop(geom: BoundaryGeometry) -> float:
    depth = getattr(geom, "depth", None)
    if depth is None:
        return 1e-4
    return 4.0 ** -(depth + 2)


def _check_starts(starts, geom):
    starts = np.ascontiguousarray(np.atleast_2d(np.asarray(starts, dtype=np.float64)))
    if not np.all(geom.in_domain(starts)):
        raise DomainError("walk start outside the domain")
    return starts


@dataclass
class WalkResult:
    hit: np.ndarray       # (P, W) leaf index, -1 outer
    end: np.ndarray       # (P, W, 2) terminal points projected on the boundary
    steps: np.ndarray


def wos_walks(starts, geom: BoundaryGeometry, n_walks: int, seed: int,
              eps_stop: float | None = None, cap: int = 100_000) -> WalkResult:
    starts = _check_starts(starts, geom)
    eps = default_eps_stop(geom) if eps_stop is None else float(eps_stop)
    P = len(starts)
    hit = np.empty((P, n_walks), np.int64)
    tx = np.empty((P, n_walks))
    ty = np.empty((P, n_walks))
    steps = np.empty((P, n_walks), np.int64)
    _run(starts, int(n_walks), np.uint64(seed), *geom.tree, geom.rects, geom.r_out, eps, int(cap),
         hit, tx, ty, steps)
    if np.any(hit == CAPPED):
        raise ConvergenceError(f"{int(np.sum(hit == CAPPED))} walks exceeded the {cap}-step cap")
    return WalkResult(hit, np.stack([tx, ty], axis=-1), steps)


def wos_walk(start, geom: BoundaryGeometry, seed: int, walk_index: int = 0,
             eps_stop: float | None = None, cap: int = 100_000) -> int:
    """One walk; returns the hit leaf index or OUTER (-1)."""
    starts = _check_starts(start, geom)
    eps = default_eps_stop(geom) if eps_stop is None else float(eps_stop)
    stack = np.empty(geom.bbox.shape[0] + 8, np.int64)
    key = stream_key(np.uint64(seed), np.uint64(walk_index))
    h, _, _, _ = _walk(starts[0, 0], starts[0, 1], *geom.tree, stack, geom.r_out, eps, key, int(cap))
    if h == CAPPED:
        raise ConvergenceError("walk exceeded the step cap")
    return int(h)


def hit_counts(starts, geom: BoundaryGeometry, n_walks: int, seed: int,
               eps_stop: float | None = None, cap: int = 100_000) -> np.ndarray:
    """(P, n_leaves + 1) integer hit counts; the last column is the outer circle."""
    starts = _check_starts(starts, geom)
    eps = default_eps_stop(geom) if eps_stop is None else float(eps_stop)
    counts = np.zeros((len(starts), geom.n_leaves + 1), np.int64)
    capped = _run_counts(starts, int(n_walks), np.uint64(seed), *geom.tree, geom.r_out, eps, int(cap), counts)
    if capped:
        raise ConvergenceError(f"{capped} walks exceeded the {cap}-step cap")
    return counts


def wos_estimate(points, geom: BoundaryGeometry, data, n_walks: int, seed: int,
                 eps_stop: float | None = None, outer_value=0.0):
    """Monte Carlo value of the Dirichlet solution at points.

    ``data`` is a per-leaf array (piecewise-constant boundary values) or a
    callable evaluated at the terminal boundary points.  ``outer_value`` is a
    constant or, for callables, ignored (the callable sees outer exits too).
    Returns ``(mean, stderr)``.
    """
    if callable(data):
        wr = wos_walks(points, geom, n_walks, seed, eps_stop)
        vals = np.asarray(data(wr.end.reshape(-1, 2)), dtype=np.float64).reshape(wr.hit.shape)
    else:
        data = np.asarray(data, dtype=np.float64)
        c = hit_counts(points, geom, n_walks, seed, eps_stop)
        full = np.concatenate([data, [outer_value]])
        mean = c @ full / n_walks
        second = c @ (full * full) / n_walks
        se = np.sqrt(np.maximum(second - mean * mean, 0) / max(n_walks - 1, 1))
        return mean, se
    return vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(n_walks)


# ---------------------------------------------------------------- tables

@dataclass
class HarmonicMeasureTable:
    """Per-cube hit counts from one batch of walks started at the pole."""

    pole: tuple[float, float]
    depth: int
    n_walks: int
    seed: int
    hits: list[np.ndarray]   # hits[g][i] for generation-g cube of base-4 index i
    outer_hits: int

    @classmethod
    def from_leaf_counts(cls, pole, depth, n_walks, seed, leaf_counts, outer):
        hits = [None] * (depth + 1)
        h = np.asarray(leaf_counts, dtype=np.int64)
        hits[depth] = h
        for g in range(depth - 1, -1, -1):
            h = h.reshape(-1, 4).sum(axis=1)
            hits[g] = h
        return cls(tuple(pole), depth, int(n_walks), int(seed), hits, int(outer))

    def count(self, cube: DyadicCube) -> int:
        return int(self.hits[cube.generation][cube.index])

    def estimate(self, cube: DyadicCube) -> float:
        return self.count(cube) / self.n_walks

    def stderr(self, cube: DyadicCube) -> float:
        p = self.estimate(cube)
        return math.sqrt(p * (1 - p) / self.n_walks)

    @property
    def outer_mass(self) -> float:
        return self.outer_hits / self.n_walks

    def total_hits(self) -> int:
        return int(self.hits[self.depth].sum()) + self.outer_hits

    def rows(self):
        for g in range(self.depth + 1):
            for i, h in enumerate(self.hits[g]):
                q = DyadicCube.from_index(g, i)
                p = h / self.n_walks
                yield q.label() if g else "", g, int(h), p, math.sqrt(p * (1 - p) / self.n_walks)

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("path,gen,hits,estimate,stderr\n")
            for lab, g, h, p, se in self.rows():
                fh.write(f"{lab},{g},{h},{p!r},{se!r}\n")


def harmonic_measure(pole, geom: CantorGeometry, n_walks: int, seed: int,
                     eps_stop: float | None = None, chunk: int = 1 << 18) -> HarmonicMeasureTable:
    pole = np.asarray(pole, dtype=np.float64)
    counts = np.zeros(geom.n_leaves + 1, np.int64)
    eps = default_eps_stop(geom) if eps_stop is None else float(eps_stop)
    starts = _check_starts(pole, geom)
    # chunks keep the same (point 0, walk w) stream ids as a single batch
    done = 0
    while done < n_walks:
        m = min(chunk, n_walks - done)
        c = np.zeros((1, geom.n_leaves + 1), np.int64)
        _run_counts_offset(starts, done, m, np.uint64(seed), *geom.tree, geom.r_out, eps, 100_000, c)
        counts += c[0]
        done += m
    return HarmonicMeasureTable.from_leaf_counts(tuple(pole), geom.depth, n_walks, seed, counts[:-1], counts[-1])


@nb.njit(cache=True)
def _run_counts_offset(starts, first, n_walks, seed, bbox, cstart, ccount, leaf, r_out, eps_stop, cap, counts):
    stack = np.empty(bbox.shape[0] + 8, np.int64)
    nl = counts.shape[1] - 1
    for w in range(first, first + n_walks):
        key = stream_key(seed, np.uint64(w))
        h, x, y, s = _walk(starts[0, 0], starts[0, 1], bbox, cstart, ccount, leaf, stack,
                           r_out, eps_stop, key, cap)
        if h == OUTER:
            counts[0, nl] += 1
        elif h >= 0:
            counts[0, h] += 1
        else:
            raise RuntimeError("walk exceeded the step cap")


def mirror_path(path, axis: str = "y") -> tuple:
    """Path of the reflected cube: across y = 1/2 swaps rows, across x = 1/2 swaps columns."""
    if axis == "y":
        return tuple(d ^ 2 for d in path)
    return tuple(d ^ 1 for d in path)


# ---------------------------------------------------------------- lemma checks

def bourgain_configs(n: int = 20):
    """Deterministic (xi, r, x) triples: xi a cube corner, x inside B(xi, r) in a gap."""
    out = []
    for g in (1, 2):
        for idx in range(4**g):
            q = DyadicCube.from_index(g, idx)
            x0, y0, x1, y1 = q.square
            cx, cy = q.center
            for xi in ((x0, y0), (x1, y1), (x0, y1), (x1, y0)):
                r = q.side
                v = np.array([cx - xi[0], cy - xi[1]])
                x = np.array(xi) + 0.5 * r * v / np.hypot(*v)
                out.append((xi, r, tuple(x)))
    # spread the selection over generations and corners
    step = max(1, len(out) // n)
    return out[::step][:n]


def bourgain_mass(xi, r, x, geom: BoundaryGeometry, n_walks: int, seed: int) -> float:
    """Fraction of walks from x exiting on E inside B(xi, 2r)."""
    wr = wos_walks(np.array([x]), geom, n_walks, seed)
    end = wr.end[0]
    hitE = wr.hit[0] >= 0
    near = np.hypot(end[:, 0] - xi[0], end[:, 1] - xi[1]) <= 2 * r
    return float(np.mean(hitE & near))


def calibrate_bourgain(geom: BoundaryGeometry, n_walks: int = 20_000, seed: int = 0, configs=None):
    configs = bourgain_configs() if configs is None else configs
    masses = [bourgain_mass(xi, r, x, geom, n_walks, seed + k) for k, (xi, r, x) in enumerate(configs)]
    return min(masses), masses


def holder_decay(geom: CantorGeometry, cube: DyadicCube, n_walks: int = 20_000, seed: int = 0,
                 levels: int = 5):
    """Fit u(x) ~ (dist/r)^alpha for u = harmonic measure of the boundary away from the cube.

    Points approach the lower-left corner of the cube diagonally from outside.
    Returns (alpha, distances, values).
    """
    lo, hi = geom.leaf_range(cube)
    data = np.ones(geom.n_leaves)
    data[lo:hi] = 0.0
    xi = np.array(cube.corner)
    r = cube.side
    ds = r * 0.5 ** np.arange(1, levels + 1)
    pts = xi - ds[:, None] * np.array([1.0, 1.0]) / math.sqrt(2)
    u, _ = wos_estimate(pts, geom, data, n_walks, seed, outer_value=1.0)
    alpha = float(np.polyfit(np.log(ds / r), np.log(u), 1)[0])
    return alpha, ds, u
