"""Single and double layer potentials by quadrature.

The fundamental solution is ``E(z) = -(1/2pi) log|z|`` (so ``-Laplace E``
is the Dirac mass).  On E_n the boundary measure gives each
generation-n square the weight ``4**-n``.  For the double layer the frontier
of each square is the integration curve, with its outward normal; the curve
measure is optionally rescaled so that each square carries total weight
``sigma(Q)``.
"""
from __future__ import annotations

import math

import numpy as np

from ..errors import AccuracyError
from ..geometry import BoundaryGeometry

INV_2PI = 1.0 / (2.0 * math.pi)
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


def fundamental(z) -> np.ndarray:
    z = np.atleast_2d(z)
    return -INV_2PI * np.log(np.hypot(z[:, 0], z[:, 1]))


def _cells(geom: BoundaryGeometry):
    r = geom.rects
    centers = 0.5 * (r[:, :2] + r[:, 2:])
    return centers, geom.leaf_weights


def _check(x, geom: BoundaryGeometry):
    r = geom.rects
    diam = float(np.max(np.hypot(r[:, 2] - r[:, 0], r[:, 3] - r[:, 1])))
    if np.any(geom.dist_to_E(x) <= diam):
        raise AccuracyError("point within one cell diameter of E_n; midpoint quadrature unreliable")


def single_layer(density, x, geom: BoundaryGeometry) -> np.ndarray:
    """Midpoint rule: sum over squares of E(x - c_Q) f_Q sigma(Q)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check(X, geom)
    c, w = _cells(geom)
    f = np.broadcast_to(np.asarray(density, dtype=np.float64), (geom.n_leaves,))
    d = X[:, None, :] - c[None, :, :]
    val = -INV_2PI * np.log(np.hypot(d[..., 0], d[..., 1])) @ (f * w)
    return val if np.ndim(x) > 1 else val[0]


def single_layer_grad(density, x, geom: BoundaryGeometry) -> np.ndarray:
    """Gradient of the midpoint rule, kernel -(x - y) / (2 pi |x - y|^2)."""
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    _check(X, geom)
    c, w = _cells(geom)
    f = np.broadcast_to(np.asarray(density, dtype=np.float64), (geom.n_leaves,)) * w
    d = X[:, None, :] - c[None, :, :]
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    g = -INV_2PI * np.stack([(d[..., 0] / r2) @ f, (d[..., 1] / r2) @ f], axis=1)
    return g if np.ndim(x) > 1 else g[0]


def _square_faces(rects):
    """Faces of every square, counter-clockwise: start, end, outward normal, owner."""
    A, B, N, own = [], [], [], []
    for k, (x0, y0, x1, y1) in enumerate(rects):
        c = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)]
        for s, n in enumerate(((0, -1), (1, 0), (0, 1), (-1, 0))):
            A.append(c[s])
            B.append(c[(s + 1) % 4])
            N.append(n)
            own.append(k)
    return np.array(A, float), np.array(B, float), np.array(N, float), np.array(own)


def _face_angle(X, A, B, N):
    """Integral over each face of nu . (x - y) / |x - y|^2 ds (the subtended angle)."""
    L = np.hypot(*(B - A).T)
    T = (B - A) / L[:, None]
    R = X[:, None, :] - A[None, :, :]
    s = R[..., 0] * T[:, 0] + R[..., 1] * T[:, 1]
    d = R[..., 0] * N[:, 0] + R[..., 1] * N[:, 1]
    return np.arctan2(d * L, d * d + s * (s - L))


def double_layer(density, x, geom: BoundaryGeometry, renormalize: bool = True) -> np.ndarray:
    """Double layer over the square frontiers.

    ``density`` is per square (constant on each frontier, integrated exactly)
    or a callable on boundary points (8-point Gauss-Legendre per face).
    With ``renormalize`` each frontier's curve measure is scaled to sigma(Q).
    """
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    A, B, N, own = _square_faces(geom.rects)
    L = np.hypot(*(B - A).T)
    scale = np.ones(len(own))
    if renormalize:
        scale = geom.leaf_weights[own] / (4 * L)
    if callable(density):
        _check(X, geom)
        u = 0.5 * (_GL_X + 1)
        Y = A[:, None, :] + u[None, :, None] * (B - A)[:, None, :]
        f = np.asarray(density(Y.reshape(-1, 2)), dtype=np.float64).reshape(Y.shape[:2])
        wts = 0.5 * L[:, None] * _GL_W[None, :] * f * scale[:, None]
        D = X[:, None, None, :] - Y[None, :, :, :]
        r2 = D[..., 0] ** 2 + D[..., 1] ** 2
        k = (D[..., 0] * N[None, :, None, 0] + D[..., 1] * N[None, :, None, 1]) / r2
        val = INV_2PI * np.einsum("pfq,fq->p", k, wts)
    else:
        f = np.broadcast_to(np.asarray(density, dtype=np.float64), (geom.n_leaves,))
        val = INV_2PI * _face_angle(X, A, B, N) @ (f[own] * scale)
    return val if np.ndim(x) > 1 else val[0]


# ---------------------------------------------------------------- curves

def circle_nodes(radius: float, m: int, center=(0.0, 0.0)):
    """Trapezoid nodes on a circle: points, outward normals, arc weights."""
    t = 2 * np.pi * np.arange(m) / m
    n = np.stack([np.cos(t), np.sin(t)], axis=1)
    return np.asarray(center) + radius * n, n, np.full(m, 2 * np.pi * radius / m)


def single_layer_curve(pts, weights, density, x) -> np.ndarray:
    X = np.atleast_2d(x)
    d = X[:, None, :] - pts[None, :, :]
    return -INV_2PI * np.log(np.hypot(d[..., 0], d[..., 1])) @ (density * weights)


def double_layer_curve(pts, normals, weights, density, x) -> np.ndarray:
    X = np.atleast_2d(x)
    d = X[:, None, :] - pts[None, :, :]
    r2 = d[..., 0] ** 2 + d[..., 1] ** 2
    k = (d[..., 0] * normals[None, :, 0] + d[..., 1] * normals[None, :, 1]) / r2
    return INV_2PI * k @ (density * weights)


def green_representation(pts, normals, weights, u_vals, dnu_vals, x) -> np.ndarray:
    """S(du/dnu) - D(u): reproduces a harmonic u inside the curve with this kernel sign."""
    return (single_layer_curve(pts, weights, dnu_vals, x)
            - double_layer_curve(pts, normals, weights, u_vals, x))
