"""Dirichlet problems on B(0, r_out) minus a union of rectangles by a first-kind
single-layer equation.

The kernel is the Green function of the disc,

    G(x, y) = -(1/2pi) [ log|x - y| - log(| |y| x - r_out^2 y/|y| | / r_out) ],

so every potential vanishes on the outer circle.  Rectangle sides are cut
into panels carrying constant densities; the free-space part is integrated
in closed form, the image part by 4-point Gauss-Legendre.  Collocation at
panel midpoints gives a dense system that is LU-factored once and reused for
every right-hand side.

For a solution ``u = S q``, the weak normal derivative paired with a test
function ``phi`` (extended by zero near the outer circle) is
``sum_panels phi * q * length``: the density is the flux into the obstacles.
"""
from __future__ import annotations

import math

import numba as nb
import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ..errors import AccuracyError
from ..geometry import BoundaryGeometry

INV_2PI = 1.0 / (2.0 * math.pi)
_GX = np.array([-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526])
_GW = np.array([0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538])


@nb.njit(cache=True, inline="always")
def _F(w, d):
    r2 = w * w + d * d
    a = 0.5 * w * math.log(r2) if w != 0.0 else 0.0
    b = d * math.atan(w / d) if d != 0.0 else 0.0
    return a - w + b


@nb.njit(cache=True, inline="always")
def _slp(px, py, ax, ay, tx, ty, nx, ny, L):
    """-(1/2pi) * integral over the panel of log|x - y|."""
    rx = px - ax
    ry = py - ay
    s = rx * tx + ry * ty
    d = rx * nx + ry * ny
    return -INV_2PI * (_F(s, d) - _F(s - L, d))


@nb.njit(cache=True, inline="always")
def _slp_grad(px, py, ax, ay, tx, ty, nx, ny, L):
    rx = px - ax
    ry = py - ay
    s = rx * tx + ry * ty
    d = rx * nx + ry * ny
    ra = s * s + d * d
    rb = (s - L) * (s - L) + d * d
    gt = 0.5 * math.log(ra / rb)
    gn = math.atan2(d * L, d * d + s * (s - L))
    return -INV_2PI * (gt * tx + gn * nx), -INV_2PI * (gt * ty + gn * ny)


@nb.njit(cache=True)
def _image(px, py, ax, ay, tx, ty, L, R, gx, gw):
    v = 0.0
    for k in range(gx.shape[0]):
        u = 0.5 * L * (gx[k] + 1.0)
        yx = ax + u * tx
        yy = ay + u * ty
        ry = math.sqrt(yx * yx + yy * yy)
        zx = ry * px - R * R * yx / ry
        zy = ry * py - R * R * yy / ry
        v += 0.5 * L * gw[k] * math.log(math.sqrt(zx * zx + zy * zy) / R)
    return INV_2PI * v


@nb.njit(cache=True)
def _image_grad(px, py, ax, ay, tx, ty, L, R, gx, gw):
    gxs = 0.0
    gys = 0.0
    for k in range(gx.shape[0]):
        u = 0.5 * L * (gx[k] + 1.0)
        yx = ax + u * tx
        yy = ay + u * ty
        ry = math.sqrt(yx * yx + yy * yy)
        zx = ry * px - R * R * yx / ry
        zy = ry * py - R * R * yy / ry
        z2 = zx * zx + zy * zy
        w = 0.5 * L * gw[k] * ry / z2
        gxs += w * zx
        gys += w * zy
    return INV_2PI * gxs, INV_2PI * gys


@nb.njit(cache=True)
def _potential_matrix(P, A, T, N, L, R, gx, gw, out):
    for i in range(P.shape[0]):
        px = P[i, 0]
        py = P[i, 1]
        for j in range(A.shape[0]):
            v = _slp(px, py, A[j, 0], A[j, 1], T[j, 0], T[j, 1], N[j, 0], N[j, 1], L[j])
            if R > 0:
                v += _image(px, py, A[j, 0], A[j, 1], T[j, 0], T[j, 1], L[j], R, gx, gw)
            out[i, j] = v


@nb.njit(cache=True)
def _gradient_matrix(P, A, T, N, L, R, gx, gw, out):
    for i in range(P.shape[0]):
        px = P[i, 0]
        py = P[i, 1]
        for j in range(A.shape[0]):
            g0, g1 = _slp_grad(px, py, A[j, 0], A[j, 1], T[j, 0], T[j, 1], N[j, 0], N[j, 1], L[j])
            if R > 0:
                h0, h1 = _image_grad(px, py, A[j, 0], A[j, 1], T[j, 0], T[j, 1], L[j], R, gx, gw)
                g0 += h0
                g1 += h1
            out[i, 0, j] = g0
            out[i, 1, j] = g1


def panelize(rects, per_side: int = 1):
    """Panels on the frontier of every rectangle, counter-clockwise.

    Returns start points, unit tangents, outward normals, lengths and the
    owning rectangle of every panel.
    """
    A, T, N, L, own = [], [], [], [], []
    for k, (x0, y0, x1, y1) in enumerate(np.asarray(rects, dtype=np.float64)):
        corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        for s in range(4):
            a = np.array(corners[s])
            b = np.array(corners[(s + 1) % 4])
            ln = float(np.hypot(*(b - a)))
            if ln == 0:
                continue
            t = (b - a) / ln
            n = np.array([t[1], -t[0]])
            for m in range(per_side):
                A.append(a + (m / per_side) * (b - a))
                T.append(t)
                N.append(n)
                L.append(ln / per_side)
                own.append(k)
    return (np.array(A).reshape(-1, 2), np.array(T).reshape(-1, 2), np.array(N).reshape(-1, 2),
            np.array(L), np.array(own, dtype=np.int64))


class LayerSolver:
    """Factored single-layer system for one geometry."""

    def __init__(self, geom: BoundaryGeometry, per_side: int = 1, image: bool = True):
        self.geom = geom
        self.per_side = per_side
        self.A, self.T, self.N, self.L, self.owner = panelize(geom.rects, per_side)
        self.mid = self.A + 0.5 * self.L[:, None] * self.T
        self.R = geom.r_out if image else 0.0
        n = len(self.L)
        K = np.empty((n, n))
        _potential_matrix(self.mid, self.A, self.T, self.N, self.L, self.R, _GX, _GW, K)
        self.lu = lu_factor(K, overwrite_a=True, check_finite=False)

    @property
    def n_panels(self) -> int:
        return len(self.L)

    def panel_data(self, leaf_values) -> np.ndarray:
        """Expand per-rectangle values (vector or columns) to panels."""
        return np.asarray(leaf_values, dtype=np.float64)[self.owner]

    def solve(self, data) -> np.ndarray:
        """Densities for panel data (shape (n,) or (n, k))."""
        return lu_solve(self.lu, np.asarray(data, dtype=np.float64), check_finite=False)

    def solve_leaves(self, leaf_values) -> np.ndarray:
        return self.solve(self.panel_data(leaf_values))

    def potential(self, pts, q, chunk: int = 512) -> np.ndarray:
        P = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
        out = []
        for lo in range(0, len(P), chunk):
            p = P[lo:lo + chunk]
            M = np.empty((len(p), self.n_panels))
            _potential_matrix(p, self.A, self.T, self.N, self.L, self.R, _GX, _GW, M)
            out.append(M @ q)
        return np.concatenate(out)

    def gradient(self, pts, q, chunk: int = 256, dtype=np.float64) -> np.ndarray:
        """Gradients at points: shape (P, 2) or (P, 2, k) for k density columns."""
        P = np.ascontiguousarray(np.atleast_2d(pts), dtype=np.float64)
        q = np.asarray(q)
        shape = (len(P), 2) + q.shape[1:]
        res = np.empty(shape, dtype=dtype)
        for lo in range(0, len(P), chunk):
            p = P[lo:lo + chunk]
            M = np.empty((len(p), 2, self.n_panels))
            _gradient_matrix(p, self.A, self.T, self.N, self.L, self.R, _GX, _GW, M)
            res[lo:lo + len(p)] = (M.reshape(-1, self.n_panels) @ q).reshape((len(p), 2) + q.shape[1:])
        return res

    def leaf_charges(self, q) -> np.ndarray:
        """Flux of the solution into each rectangle: sum of density times length."""
        q = np.asarray(q)
        w = q * (self.L if q.ndim == 1 else self.L[:, None])
        out = np.zeros((self.geom.n_leaves,) + q.shape[1:])
        np.add.at(out, self.owner, w)
        return out

    def check_points(self, pts, min_dist: float):
        d = self.geom.dist_to_E(pts)
        if np.any(d < min_dist):
            raise AccuracyError("evaluation point too close to the boundary for panel resolution")


def disc_green(x, y, r_out: float) -> np.ndarray:
    """Green function of B(0, r_out) with pole y, evaluated at points x."""
    x = np.atleast_2d(x)
    y = np.asarray(y, dtype=np.float64)
    ry = np.hypot(*y)
    d = np.hypot(x[:, 0] - y[0], x[:, 1] - y[1])
    if ry == 0:
        return -INV_2PI * (np.log(d) - np.log(r_out))
    z = ry * x - r_out**2 * y / ry
    return -INV_2PI * (np.log(d) - np.log(np.hypot(z[:, 0], z[:, 1]) / r_out))


def green_estimate(pole, x, geom: BoundaryGeometry, method: str = "bie", solver: LayerSolver | None = None,
                   n_walks: int = 20_000, seed: int = 0, min_dist: float = 1e-3):
    """Green function of B(0, r_out) minus E_n with pole ``pole``, at points ``x``.

    ``G = G_disc(pole, x) - w(x)`` where ``w`` is harmonic, equals
    ``G_disc(pole, .)`` on E_n and vanishes on the outer circle.  The
    correction comes from the layer solver or from walk on spheres (the
    disc Green function already vanishes on the circle, so both routes
    agree with the free-space form ``E(pole - x) - h(x)``).
    """
    from .wos import wos_estimate
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    p = np.asarray(pole, dtype=np.float64)
    if np.any(np.hypot(X[:, 0] - p[0], X[:, 1] - p[1]) < min_dist):
        raise AccuracyError("evaluation point too close to the pole")
    g0 = disc_green(X, p, geom.r_out)
    inside = ~geom.in_E(X)
    out = np.zeros(len(X))
    if not inside.any():
        return out if np.ndim(x) > 1 else out[0]

    def data(pts):
        v = disc_green(pts, p, geom.r_out)
        r = np.hypot(pts[:, 0], pts[:, 1])
        return np.where(r >= geom.r_out * (1 - 1e-9), 0.0, v)

    if method == "bie":
        S = solver or LayerSolver(geom, per_side=2)
        w = S.potential(X[inside], S.solve(data(S.mid)))
    elif method == "wos":
        w, _ = wos_estimate(X[inside], geom, data, n_walks, seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    out[inside] = g0[inside] - w
    return out if np.ndim(x) > 1 else out[0]
