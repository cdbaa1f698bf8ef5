"""Maximal functions, the maximal-cube linearisation and boundary norms."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CoverageError, EmptySampleError, ParameterError
from .geometry import BoundaryGeometry, CantorGeometry, DyadicCube, in_cone

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


def disc_pattern(m: int = 64) -> np.ndarray:
    """Sunflower pattern of m equal-area points in the unit disc."""
    i = np.arange(m)
    r = np.sqrt((i + 0.5) / m)
    return np.stack([r * np.cos(i * GOLDEN_ANGLE), r * np.sin(i * GOLDEN_ANGLE)], axis=1)


# ---------------------------------------------------------------- functions

@dataclass
class BoundaryFunction:
    """Piecewise-constant (per cube) or sampled (per point) boundary function."""

    values: np.ndarray
    weights: np.ndarray
    kind: str = "cubes"
    cubes: list | None = None
    points: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.values.shape != self.weights.shape:
            raise ParameterError("values and weights must have the same shape")
        if self.kind not in ("cubes", "points"):
            raise ParameterError("kind must be 'cubes' or 'points'")
        if not np.all(np.isfinite(self.values)):
            raise ParameterError("boundary function values must be finite")

    @classmethod
    def from_leaves(cls, geom: BoundaryGeometry, values) -> "BoundaryFunction":
        v = np.broadcast_to(np.asarray(values, dtype=np.float64), (geom.n_leaves,)).copy()
        return cls(v, geom.leaf_weights.copy(), "cubes")

    @classmethod
    def from_cubes(cls, cubes, values, deficit: float = 0.0) -> "BoundaryFunction":
        """Values on disjoint cubes; an uncovered remainder of measure ``deficit`` carries 0."""
        v = list(np.asarray(values, dtype=np.float64))
        w = [c.measure for c in cubes]
        if deficit > 0:
            v.append(0.0)
            w.append(deficit)
        return cls(np.array(v), np.array(w), "cubes", list(cubes))

    def __mul__(self, c: float) -> "BoundaryFunction":
        return BoundaryFunction(self.values * c, self.weights, self.kind, self.cubes, self.points)

    __rmul__ = __mul__

    def total_measure(self) -> float:
        return float(self.weights.sum())


def weak_l1_norm(f: BoundaryFunction) -> float:
    """sup over lambda > 0 of lambda * sigma(|f| > lambda), computed exactly.

    The supremum over lambda just below each attained level ``v`` equals
    ``v * sigma(|f| >= v)``.
    """
    a = np.abs(f.values)
    keep = a > 0
    a, w = a[keep], f.weights[keep]
    if not len(a):
        return 0.0
    order = np.argsort(-a, kind="stable")
    a, w = a[order], w[order]
    cum = np.cumsum(w)
    last = np.r_[a[1:] != a[:-1], True]
    return float(np.max(a[last] * cum[last]))


def weak_l1_bruteforce(f: BoundaryFunction, n_lambda: int = 10_000) -> float:
    """Reference value on a lambda grid refined just below every level."""
    a = np.abs(f.values)
    top = a.max() if len(a) else 0.0
    if top == 0:
        return 0.0
    lam = np.linspace(top / n_lambda, top, n_lambda)
    lev = np.unique(a[a > 0])
    lam = np.concatenate([lam, lev * (1 - 1e-13), lev])
    lam = lam[lam > 0]
    meas = (a[None, :] > lam[:, None]) @ f.weights
    return float(np.max(lam * meas))


def lp_norm(f: BoundaryFunction, p: float) -> float:
    if not p > 0:
        raise ParameterError("p must be positive")
    return float(np.sum(f.weights * np.abs(f.values) ** p) ** (1.0 / p))


def _pairwise_quotients(P, v, chunk: int = 1024):
    n = len(P)
    g = np.zeros(n)
    for lo in range(0, n, chunk):
        d = np.hypot(P[lo:lo + chunk, None, 0] - P[None, :, 0], P[lo:lo + chunk, None, 1] - P[None, :, 1])
        dv = np.abs(v[lo:lo + chunk, None] - v[None, :])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(d > 0, dv / d, 0.0)
        g[lo:lo + chunk] = q.max(axis=1)
    return g


def hajlasz_witness(points, values, weights=None) -> BoundaryFunction:
    """g(x) = max over other samples y of |f(x) - f(y)| / |x - y|.

    Since ``|f(x) - f(y)| <= |x - y| g(x)``, g is a Hajlasz gradient of f on
    the samples; its L1 norm bounds the Hajlasz seminorm from above.
    """
    P = np.asarray(points, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(np.unique(P, axis=0)) != len(P):
        raise ParameterError("sample points must be pairwise distinct")
    w = np.full(len(P), 1.0 / len(P)) if weights is None else np.asarray(weights, dtype=np.float64)
    return BoundaryFunction(_pairwise_quotients(P, v), w, "points", points=P)


def lipschitz_constant(points, values) -> float:
    P = np.asarray(points, dtype=np.float64)
    if len(P) < 2:
        raise ParameterError("need at least two points")
    return float(_pairwise_quotients(P, np.asarray(values, dtype=np.float64)).max())


def write_norms_csv(path, rows):
    """rows: iterable of (name, p, value)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "p", "value"])
        for name, p, value in rows:
            w.writerow([name, p, repr(float(value))])


# ---------------------------------------------------------------- maximal functions

def _field_samples(u):
    """Grid solutions give interior nodes and |u|; otherwise ``(points, values)``."""
    from .solver.grid import INTERIOR, GridSolution
    if isinstance(u, GridSolution):
        xs, ys = u.coords()
        X, Y = np.meshgrid(xs, ys)
        m = u.mask == INTERIOR
        return np.stack([X[m], Y[m]], axis=1), u.values[m]
    P, v = u
    return np.atleast_2d(np.asarray(P, dtype=np.float64)), np.asarray(v, dtype=np.float64)


def nt_max(u, xi, alpha: float, R: float, geom: BoundaryGeometry) -> float:
    """Supremum of |u| over samples in the truncated cone at ``xi``."""
    P, v = _field_samples(u)
    inside = in_cone(xi, P, alpha, R, geom)
    if not inside.any():
        raise EmptySampleError("no samples inside the cone")
    return float(np.abs(v[inside]).max())


def _magnitude(vals) -> np.ndarray:
    vals = np.asarray(vals, dtype=np.float64)
    return np.linalg.norm(vals, axis=-1) if vals.ndim > 1 else np.abs(vals)


def nt_max_modified(field, xi, alpha: float, c: float, R: float, geom: BoundaryGeometry,
                    cone_points=None, radius: str = "point", n_quad: int = 64) -> float:
    """Supremum over cone points y of the RMS of |field| on B(y, c * d).

    ``d`` is ``dist(y, boundary)`` (``radius="point"``) or ``dist(xi, ...)``
    measured at the vertex's cone level, i.e. ``|y - xi| / (1 + alpha)``
    (``radius="vertex"``).  ``field`` is a grid solution (its gradient
    magnitude at the nodes in the ball is averaged) or a callable on points
    (averaged over a fixed sunflower pattern of ``n_quad`` points).
    """
    from .solver.grid import GridSolution
    if not (alpha > 0 and c > 0):
        raise ParameterError("alpha and c must be positive")
    if radius not in ("point", "vertex"):
        raise ParameterError("radius must be 'point' or 'vertex'")
    if isinstance(field, GridSolution):
        xs, ys = field.coords()
        X, Y = np.meshgrid(xs, ys)
        gx, gy = field.gradient()
        gm = np.hypot(gx, gy)
        ok = ~np.isnan(gm)
        if cone_points is None:
            cone_points = np.stack([X[ok], Y[ok]], axis=1)
    elif cone_points is None:
        raise ParameterError("cone_points are required for callable fields")
    Y_ = np.atleast_2d(np.asarray(cone_points, dtype=np.float64))
    inside = in_cone(xi, Y_, alpha, R, geom)
    if not inside.any():
        raise EmptySampleError("no cone points inside the cone")
    Y_ = Y_[inside]
    d = geom.dist_to_boundary(Y_, check=False)
    if radius == "vertex":
        x = np.asarray(xi, dtype=np.float64)
        d = np.hypot(Y_[:, 0] - x[0], Y_[:, 1] - x[1]) / (1 + alpha)
    pat = disc_pattern(n_quad)
    best = -np.inf
    for y, r in zip(Y_, c * d):
        if isinstance(field, GridSolution):
            sel = ok & (np.hypot(X - y[0], Y - y[1]) < r)
            if not sel.any():
                continue
            val = math.sqrt(float(np.mean(gm[sel] ** 2)))
        else:
            m = _magnitude(field(y + r * pat))
            val = math.sqrt(float(np.mean(m * m)))
        best = max(best, val)
    if best == -np.inf:
        raise EmptySampleError("no samples in any cone ball")
    return best


def minimal_aperture(geom: CantorGeometry, c: float = 0.3, n_circle: int = 256) -> float:
    """Smallest alpha with B(x_R, c l(R)) inside the cone of every E point of R.

    Evaluated as the maximum of ``|y - xi| / dist(y) - 1`` over the ball
    pattern plus its bounding circle and the leaf corners ``xi`` of R (the
    farthest points of E in R are leaf corners).
    """
    t = 2 * np.pi * np.arange(n_circle) / n_circle
    unit = np.concatenate([disc_pattern(64), 0.999999 * np.stack([np.cos(t), np.sin(t)], axis=1)])
    worst = 0.0
    for R in geom.all_cubes(geom.depth - 1):
        Y = np.asarray(R.center) + c * R.side * unit
        d = geom.dist_to_boundary(Y, check=False)
        lo, hi = geom.leaf_range(R)
        r = geom.rects[lo:hi]
        xi = np.concatenate([r[:, [0, 1]], r[:, [2, 1]], r[:, [0, 3]], r[:, [2, 3]]])
        far = np.max(np.hypot(Y[:, None, 0] - xi[None, :, 0], Y[:, None, 1] - xi[None, :, 1]), axis=1)
        worst = max(worst, float(np.max(far / d)) - 1.0)
    return worst


# ---------------------------------------------------------------- maximal cubes

@dataclass
class MaximalCubeFamily:
    k: int
    cubes: list
    table: object
    max_gen: int
    pole: tuple = field(default=(20.0, 0.0))

    @property
    def covered_measure(self) -> float:
        return float(sum(q.measure for q in self.cubes))

    @property
    def deficit(self) -> float:
        return max(0.0, 1.0 - self.covered_measure)

    def is_antichain(self) -> bool:
        s = set(self.cubes)
        for q in self.cubes:
            for i in range(1, q.generation + 1):
                if q.ancestor(i) in s:
                    return False
        return True

    def member_containing(self, cube: DyadicCube):
        s = set(self.cubes)
        for i in range(cube.generation + 1):
            a = cube.ancestor(i)
            if a in s:
                return a
        return None

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "path", "gen", "omega_hat"])
            for q in self.cubes:
                w.writerow([self.k, q.label(), q.generation, repr(self.table.estimate(q))])


def satisfies_conditions(table, cube: DyadicCube, k: int) -> bool:
    """hits(Q) * 4**i >= hits(P^i) for 1 <= i <= k-1 (all ancestors must exist)."""
    if cube.generation < k - 1:
        return False
    h = table.count(cube)
    return all(h * 4**i >= table.count(cube.ancestor(i)) for i in range(1, k))


def maximal_cubes(table, k: int, max_gen: int, warn: bool = True) -> MaximalCubeFamily:
    """Shallowest cubes on every branch satisfying the k-1 ancestor-density conditions."""
    if k < 1:
        raise ParameterError("k must be at least 1")
    if max_gen > table.depth:
        raise ParameterError("table does not resolve the requested generations")
    out = []
    stack = [DyadicCube(0, ())]
    while stack:
        q = stack.pop()
        if satisfies_conditions(table, q, k):
            out.append(q)
        elif q.generation < max_gen:
            stack.extend(q.child(d) for d in range(3, -1, -1))
    out.sort(key=lambda q: (q.generation, q.path))
    fam = MaximalCubeFamily(k, out, table, max_gen, tuple(getattr(table, "pole", (20.0, 0.0))))
    if warn and fam.deficit > 0:
        warnings.warn(f"maximal cubes for k={k} miss measure {fam.deficit:.4g} at max_gen={max_gen}",
                      stacklevel=2)
    return fam


def check_maximality(fam: MaximalCubeFamily) -> bool:
    """Every strict ancestor of a member violates at least one condition."""
    for q in fam.cubes:
        for i in range(1, q.generation + 1):
            if satisfies_conditions(fam.table, q.ancestor(i), fam.k):
                return False
    return all(satisfies_conditions(fam.table, q, fam.k) for q in fam.cubes)


def pigeonhole_check(table, k: int, max_gen: int) -> list:
    """Cubes R (gen <= max_gen - k) with no descendant within k generations in the cover.

    An empty list means the property holds.
    """
    fam = maximal_cubes(table, k, max_gen, warn=False)
    members = set(fam.cubes)

    def covered(c):
        return any(c.ancestor(i) in members for i in range(c.generation + 1))

    bad = []
    for g in range(0, max_gen - k + 1):
        for idx in range(4**g):
            R = DyadicCube.from_index(g, idx)
            frontier = [R]
            found = covered(R)
            for _ in range(k):
                if found:
                    break
                frontier = [c.child(d) for c in frontier for d in range(4)]
                found = any(covered(c) for c in frontier)
            if not found:
                bad.append(R)
    return bad


def coverage_profile(table, k: int, gens) -> list[float]:
    """Uncovered measure of the maximal family as max_gen grows."""
    return [maximal_cubes(table, k, g, warn=False).deficit for g in gens]


def nhat_k(ball_values: dict, family: MaximalCubeFamily) -> BoundaryFunction:
    """Piecewise-constant N-hat: the ball average on each member, 0 elsewhere.

    ``ball_values`` maps a cube to its ball average of |F| (missing members
    raise a coverage error).
    """
    vals = []
    for q in family.cubes:
        if q not in ball_values:
            raise CoverageError(f"no samples for the ball of cube {q.label()}")
        vals.append(ball_values[q])
    return BoundaryFunction.from_cubes(family.cubes, vals, family.deficit)
