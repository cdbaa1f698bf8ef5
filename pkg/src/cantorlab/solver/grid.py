"""Five-point finite differences on a window around E_n.

Nodes ``(x0 + i h, y0 + j h)``; values are stored as ``values[j, i]``.  A node
is an E-boundary node when it lies within ``h/2`` of an E_n square, a frame
node when it sits on the window edge, and interior otherwise.  The frame
carries the true solution of the problem on B(0, r_out) minus E_n, taken from
walk on spheres (default), the layer solver, a callable, or zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pyamg
import scipy.sparse as sp

from ..errors import AccuracyError, ConvergenceError, ParameterError
from ..geometry import Ball, BoundaryGeometry
from .wos import hit_counts, wos_estimate

INTERIOR, E_NODE, FRAME = 0, 1, 2
DEFAULT_WINDOW = (-0.5, -0.5, 1.5, 1.5)


@dataclass
class GridSolution:
    x0: float
    y0: float
    h: float
    values: np.ndarray
    mask: np.ndarray
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def nx(self) -> int:
        return self.values.shape[1] - 1

    @property
    def ny(self) -> int:
        return self.values.shape[0] - 1

    @property
    def window(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x0 + self.nx * self.h, self.y0 + self.ny * self.h)

    def coords(self):
        xs = self.x0 + self.h * np.arange(self.nx + 1)
        ys = self.y0 + self.h * np.arange(self.ny + 1)
        return xs, ys

    def gradient(self):
        """Central differences; NaN where a stencil node is within 2h of the boundary."""
        u = self.values
        gx = np.full(u.shape, np.nan)
        gy = np.full(u.shape, np.nan)
        gx[:, 1:-1] = (u[:, 2:] - u[:, :-2]) / (2 * self.h)
        gy[1:-1, :] = (u[2:, :] - u[:-2, :]) / (2 * self.h)
        bad = _dilate(self.mask != INTERIOR, 2)
        gx[bad] = np.nan
        gy[bad] = np.nan
        return gx, gy

    def residual_map(self) -> np.ndarray:
        u = self.values
        r = np.zeros(u.shape)
        r[1:-1, 1:-1] = u[1:-1, 1:-1] - 0.25 * (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2])
        r[self.mask != INTERIOR] = 0.0
        return r

    def value_at(self, pts) -> np.ndarray:
        """Bilinear interpolation of the node values."""
        P = np.atleast_2d(pts)
        fx = (P[:, 0] - self.x0) / self.h
        fy = (P[:, 1] - self.y0) / self.h
        i = np.clip(np.floor(fx).astype(int), 0, self.nx - 1)
        j = np.clip(np.floor(fy).astype(int), 0, self.ny - 1)
        tx, ty = fx - i, fy - j
        u = self.values
        return ((1 - tx) * (1 - ty) * u[j, i] + tx * (1 - ty) * u[j, i + 1]
                + (1 - tx) * ty * u[j + 1, i] + tx * ty * u[j + 1, i + 1])

    def save(self, path):
        """CSV dump: header line ``x0,y0,h,nx,ny``, its values, then one row per y."""
        with open(path, "w") as fh:
            fh.write("x0,y0,h,nx,ny\n")
            fh.write(f"{self.x0!r},{self.y0!r},{self.h!r},{self.nx},{self.ny}\n")
            for row in self.values:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def load(cls, path) -> "GridSolution":
        with open(path) as fh:
            fh.readline()
            x0, y0, h, nx, ny = fh.readline().strip().split(",")
            vals = np.loadtxt(fh, delimiter=",", ndmin=2)
        nx, ny = int(nx), int(ny)
        if vals.shape != (ny + 1, nx + 1):
            raise ParameterError("grid dump has inconsistent shape")
        return cls(float(x0), float(y0), float(h), vals, np.zeros(vals.shape, np.int8))


def _dilate(m: np.ndarray, k: int) -> np.ndarray:
    out = m.copy()
    for _ in range(k):
        g = out.copy()
        g[1:, :] |= out[:-1, :]
        g[:-1, :] |= out[1:, :]
        g[:, 1:] |= out[:, :-1]
        g[:, :-1] |= out[:, 1:]
        out = g
    return out


def _frame_indices(nx: int, ny: int):
    """Frame nodes in counter-clockwise order as (j, i) arrays."""
    b = [(0, i) for i in range(nx)] + [(j, nx) for j in range(ny)]
    b += [(ny, i) for i in range(nx, 0, -1)] + [(j, 0) for j in range(ny, 0, -1)]
    a = np.array(b)
    return a[:, 0], a[:, 1]


class GridProblem:
    """Node classification, the reduced five-point system and its multigrid solver.

    Build once per (geometry, window, h); every call to :meth:`solve`
    reuses the hierarchy, so superposition over many data sets is cheap.
    """

    def __init__(self, geom: BoundaryGeometry | None, window=DEFAULT_WINDOW, h: float = 1 / 256):
        x0, y0, x1, y1 = map(float, window)
        nx = (x1 - x0) / h
        ny = (y1 - y0) / h
        if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
            raise ParameterError("h must divide the window sides")
        self.geom = geom
        self.x0, self.y0, self.h = x0, y0, float(h)
        self.nx, self.ny = int(round(nx)), int(round(ny))
        xs = x0 + h * np.arange(self.nx + 1)
        ys = y0 + h * np.arange(self.ny + 1)
        X, Y = np.meshgrid(xs, ys)
        self.nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
        mask = np.zeros((self.ny + 1, self.nx + 1), np.int8)
        if geom is not None and geom.n_leaves:
            d = geom.dist_to_E(self.nodes).reshape(mask.shape)
            mask[d <= 0.5 * h] = E_NODE
        mask[0, :] = mask[-1, :] = mask[:, 0] = mask[:, -1] = FRAME
        self.mask = mask
        self.fj, self.fi = _frame_indices(self.nx, self.ny)
        self.e_nodes = np.flatnonzero(mask.ravel() == E_NODE)
        self._leaf = None
        self._build()

    # ------------------------------------------------------------ assembly
    def _build(self):
        shape = self.mask.shape
        free = self.mask.ravel() == INTERIOR
        num = np.full(free.size, -1, np.int64)
        num[free] = np.arange(free.sum())
        self.free = np.flatnonzero(free)
        self.num = num
        rows, cols = [], []
        brow, bcol = [], []
        J, I = np.unravel_index(self.free, shape)
        for dj, di in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nb = np.ravel_multi_index((J + dj, I + di), shape)
            k = num[nb]
            inner = k >= 0
            rows.append(num[self.free][inner])
            cols.append(k[inner])
            brow.append(num[self.free][~inner])
            bcol.append(nb[~inner])
        n = len(self.free)
        off = sp.csr_matrix((-np.ones(sum(len(r) for r in rows)), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n))
        self.A = (sp.identity(n, format="csr") * 4.0 + off).tocsr()
        self.B = sp.csr_matrix((np.ones(sum(len(r) for r in brow)), (np.concatenate(brow), np.concatenate(bcol))),
                               shape=(n, free.size))
        self.ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric", max_coarse=500)

    # ------------------------------------------------------------ data
    @property
    def frame_points(self) -> np.ndarray:
        return np.stack([self.x0 + self.h * self.fi, self.y0 + self.h * self.fj], axis=1)

    def e_node_leaves(self) -> np.ndarray:
        if self._leaf is None:
            self._leaf = self.geom.nearest_leaf(self.nodes[self.e_nodes])[1]
        return self._leaf

    def e_values(self, data) -> np.ndarray:
        """Data on E-boundary nodes: constant, per-leaf array, or callable on points."""
        if callable(data):
            return np.asarray(data(self.nodes[self.e_nodes]), dtype=np.float64)
        data = np.asarray(data, dtype=np.float64)
        if data.ndim == 0:
            return np.full(len(self.e_nodes), float(data))
        return data[self.e_node_leaves()]

    def frame_values(self, data, frame="wos", n_walks: int = 4096, seed: int = 0,
                     stride: int | None = None) -> np.ndarray:
        """Frame data for ``data`` on E (zero on the outer circle).

        ``frame`` is "wos", "bie", "zero", a constant, or a callable on points.
        Walks start at every ``stride``-th frame node (default: spacing close
        to 1/16) and are linearly interpolated along the frame.
        """
        P = self.frame_points
        if callable(frame):
            return np.asarray(frame(P), dtype=np.float64)
        if isinstance(frame, (int, float)) and not isinstance(frame, bool):
            return np.full(len(P), float(frame))
        if frame == "zero":
            return np.zeros(len(P))
        if frame == "bie":
            from .bie import LayerSolver
            S = self.layer_solver()
            if callable(data):
                q = S.solve(data(S.mid))
            else:
                d = np.asarray(data, dtype=np.float64)
                q = S.solve_leaves(np.broadcast_to(d, (self.geom.n_leaves,)) if d.ndim == 0 else d)
            return S.potential(P, q)
        if frame != "wos":
            raise ParameterError(f"unknown frame mode {frame!r}")
        if stride is None:
            stride = max(1, int(round(1 / (16 * self.h))))
        m = len(P)
        coarse = np.arange(0, m, stride)
        if callable(data):
            est, _ = wos_estimate(P[coarse], self.geom, data, n_walks, seed)
        else:
            d = np.asarray(data, dtype=np.float64)
            if d.ndim == 0:
                d = np.full(self.geom.n_leaves, float(d))
            est, _ = wos_estimate(P[coarse], self.geom, d, n_walks, seed)
        t = np.arange(m)
        return np.interp(t, np.concatenate([coarse, [m]]), np.concatenate([est, est[:1]]))

    def frame_hits(self, n_walks: int = 4096, seed: int = 0, stride: int | None = None) -> np.ndarray:
        """Interpolated per-leaf hit frequencies at every frame node, shape (frame, n_leaves)."""
        P = self.frame_points
        if stride is None:
            stride = max(1, int(round(1 / (16 * self.h))))
        m = len(P)
        coarse = np.arange(0, m, stride)
        c = hit_counts(P[coarse], self.geom, n_walks, seed)[:, :-1] / n_walks
        c = np.concatenate([c, c[:1]])
        knots = np.concatenate([coarse, [m]])
        t = np.arange(m)
        k = np.searchsorted(knots, t, side="right") - 1
        k = np.minimum(k, len(knots) - 2)
        w = (t - knots[k]) / (knots[k + 1] - knots[k])
        return (1 - w)[:, None] * c[k] + w[:, None] * c[k + 1]

    def layer_solver(self):
        from .bie import LayerSolver
        if not hasattr(self, "_bie"):
            self._bie = LayerSolver(self.geom)
        return self._bie

    # ------------------------------------------------------------ solve
    def solve(self, e_values, frame_values, tol: float = 1e-9, maxiter: int = 400) -> GridSolution:
        """Solve with given boundary node values; tol bounds |u - mean of neighbours|."""
        full = np.zeros(self.mask.size)
        full[self.e_nodes] = e_values
        fidx = np.ravel_multi_index((self.fj, self.fi), self.mask.shape)
        full[fidx] = frame_values
        b = self.B @ full
        x = np.zeros(len(self.free))
        scale = max(np.abs(full).max(), 1e-300)
        res = math.inf
        rtol = min(1e-2, tol / scale)
        for _ in range(6):
            x = self.ml.solve(b, x0=x, tol=rtol, accel="cg", maxiter=maxiter)
            res = float(np.abs(self.A @ x - b).max()) / 4.0
            if res <= tol:
                break
            rtol *= 1e-2
        if res > tol:
            raise ConvergenceError(f"grid residual {res:.3e} above tolerance {tol:.3e}")
        full[self.free] = x
        return GridSolution(self.x0, self.y0, self.h, full.reshape(self.mask.shape), self.mask, res)


def grid_solve(data, geom: BoundaryGeometry | None, window=DEFAULT_WINDOW, h: float = 1 / 256,
               tol: float = 1e-9, frame="wos", n_walks: int = 4096, seed: int = 0,
               problem: GridProblem | None = None) -> GridSolution:
    """Discrete Dirichlet solution with ``data`` on E_n and hybrid frame data."""
    x0, y0, x1, y1 = window
    if geom is not None and not (x0 <= -0.5 and y0 <= -0.5 and x1 >= 1.5 and y1 >= 1.5):
        raise ParameterError("window must contain [-0.5, 1.5]^2")
    prob = problem or GridProblem(geom, window, h)
    e = prob.e_values(data) if len(prob.e_nodes) else np.zeros(0)
    fr = prob.frame_values(data, frame, n_walks, seed) if geom is not None else prob.frame_values(None, frame)
    return prob.solve(e, fr, tol)


def gradient_avg(sol: GridSolution, ball: Ball) -> tuple[float, float]:
    """Mean and root-mean-square of |grad u| over nodes inside the ball."""
    xs, ys = sol.coords()
    X, Y = np.meshgrid(xs, ys)
    inside = np.hypot(X - ball.center[0], Y - ball.center[1]) < ball.radius
    if not inside.any():
        raise AccuracyError("ball contains no grid nodes")
    gx, gy = sol.gradient()
    g = np.hypot(gx[inside], gy[inside])
    if np.isnan(g).any():
        raise AccuracyError("ball comes within 2h of the boundary")
    return float(g.mean()), float(np.sqrt(np.mean(g * g)))


def gradient_at(sol: GridSolution, pts) -> np.ndarray:
    """Bilinear interpolation of the central-difference gradient at points."""
    gx, gy = sol.gradient()
    P = np.atleast_2d(pts)
    fx = (P[:, 0] - sol.x0) / sol.h
    fy = (P[:, 1] - sol.y0) / sol.h
    i = np.floor(fx).astype(int)
    j = np.floor(fy).astype(int)
    if np.any((i < 0) | (j < 0) | (i >= sol.nx) | (j >= sol.ny)):
        raise AccuracyError("sample point outside the grid window")
    tx, ty = fx - i, fy - j
    out = np.empty((len(P), 2))
    for k, g in enumerate((gx, gy)):
        out[:, k] = ((1 - tx) * (1 - ty) * g[j, i] + tx * (1 - ty) * g[j, i + 1]
                     + (1 - tx) * ty * g[j + 1, i] + tx * ty * g[j + 1, i + 1])
    if np.isnan(out).any():
        raise AccuracyError("sample point within 2h of the boundary")
    return out


# ---------------------------------------------------------------- pairings

def extension(sol: GridSolution, phi, geom: BoundaryGeometry, collar: float | None = None) -> np.ndarray:
    """Node values of a Lipschitz extension of per-leaf values ``phi``.

    Equal to phi at the nearest square on E-boundary nodes, decaying linearly
    in the distance to E_n and vanishing beyond ``collar`` (default one leaf
    side, at least 2h).
    """
    xs, ys = sol.coords()
    X, Y = np.meshgrid(xs, ys)
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    if collar is None:
        collar = float(np.min(geom.rects[:, 2] - geom.rects[:, 0]))
    collar = max(collar, 2 * sol.h)
    d = geom.dist_to_E(P)
    near = d < collar
    vals = np.zeros(len(P))
    leaf = geom.nearest_leaf(P[near])[1]
    phi = np.asarray(phi, dtype=np.float64)
    ramp = np.clip(1.0 - (d[near] - 0.5 * sol.h) / (collar - 0.5 * sol.h), 0.0, 1.0)
    vals[near] = phi[leaf] * ramp
    out = vals.reshape(sol.values.shape)
    out[sol.mask == FRAME] = 0.0
    return out


def edge_pairing(sol: GridSolution, ext: np.ndarray) -> float:
    """Discrete Dirichlet form sum over grid edges of (u_i - u_j)(v_i - v_j)."""
    u = sol.values
    s = np.sum((u[:, 1:] - u[:, :-1]) * (ext[:, 1:] - ext[:, :-1]))
    s += np.sum((u[1:, :] - u[:-1, :]) * (ext[1:, :] - ext[:-1, :]))
    return float(s)


def weak_normal_pairing(sol: GridSolution, phi, geom: BoundaryGeometry, collar: float | None = None) -> float:
    """Discrete volume integral of grad u . grad phi~ over the window."""
    return edge_pairing(sol, extension(sol, phi, geom, collar))


def contour_flux(sol: GridSolution, rect) -> float:
    """Sum over grid edges leaving the node box ``rect`` of (u_inside - u_outside)."""
    xs, ys = sol.coords()
    i0 = int(np.searchsorted(xs, rect[0] - 1e-12))
    i1 = int(np.searchsorted(xs, rect[2] + 1e-12)) - 1
    j0 = int(np.searchsorted(ys, rect[1] - 1e-12))
    j1 = int(np.searchsorted(ys, rect[3] + 1e-12)) - 1
    u = sol.values
    f = np.sum(u[j0:j1 + 1, i0] - u[j0:j1 + 1, i0 - 1]) + np.sum(u[j0:j1 + 1, i1] - u[j0:j1 + 1, i1 + 1])
    f += np.sum(u[j0, i0:i1 + 1] - u[j0 - 1, i0:i1 + 1]) + np.sum(u[j1, i0:i1 + 1] - u[j1 + 1, i0:i1 + 1])
    return float(f)


def cube_bump(geom, cube) -> np.ndarray:
    """Per-leaf indicator of a lattice cube (the per-cube test function)."""
    phi = np.zeros(geom.n_leaves)
    lo, hi = geom.leaf_range(cube)
    phi[lo:hi] = 1.0
    return phi


def cube_variation(sol: GridSolution, family, geom, collar: float | None = None):
    """Sum over a disjoint cube family of |pairing with the cube's bump|.

    Returns ``(total, per_cube)``.
    """
    per = np.array([weak_normal_pairing(sol, cube_bump(geom, q), geom, collar) for q in family])
    return float(np.abs(per).sum()), per
