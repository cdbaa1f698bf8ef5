"""Gradients of the basis solutions u_Q at fixed quadrature points.

Every basis solution is a combination of per-leaf solutions
(``u_Q = l(Q) * sum of u_leaf over the leaves of Q``), so one solve per leaf
serves the whole lattice, and any signed combination of basis solutions has
gradient ``sum_Q eps_Q grad u_Q`` exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AccuracyError
from ..geometry import CantorGeometry, DyadicCube
from ..functionals import disc_pattern


@dataclass
class GradientField:
    ball_cubes: list          # cube R owning each block of quadrature points
    basis: list               # basis cubes Q (columns)
    points: np.ndarray        # (P, 2)
    owner: np.ndarray         # (P,) index into ball_cubes
    grads: np.ndarray         # (P, 2, m)
    c: float = 0.3

    @property
    def n_quad(self) -> int:
        return len(self.points) // max(len(self.ball_cubes), 1)

    def column(self, cube: DyadicCube) -> np.ndarray:
        return self.grads[:, :, self.basis.index(cube)]

    def combine(self, signs) -> np.ndarray:
        """Gradient of sum_Q signs[Q] u_Q at every point, shape (P, 2)."""
        s = np.asarray(signs, dtype=self.grads.dtype)
        return self.grads @ s

    def combine_many(self, sign_rows) -> np.ndarray:
        """(trials, P, 2) for a block of sign vectors."""
        S = np.asarray(sign_rows, dtype=self.grads.dtype)
        return np.einsum("pdm,tm->tpd", self.grads, S)

    def ball_mean(self, values) -> np.ndarray:
        """Average of per-point values over each ball (last axis = points)."""
        v = np.asarray(values)
        q = self.n_quad
        return v.reshape(v.shape[:-1] + (len(self.ball_cubes), q)).mean(axis=-1)

    def ball_mean_abs(self, vec) -> np.ndarray:
        """Ball averages of |F| for a field (..., P, 2)."""
        return self.ball_mean(np.linalg.norm(vec, axis=-1))

    def ball_rms(self, vec) -> np.ndarray:
        return np.sqrt(self.ball_mean(np.sum(np.asarray(vec) ** 2, axis=-1)))


def ball_points(cubes, c: float = 0.3, n_quad: int = 64):
    pat = disc_pattern(n_quad)
    pts = np.concatenate([np.asarray(q.center) + c * q.side * pat for q in cubes])
    owner = np.repeat(np.arange(len(cubes)), n_quad)
    return pts, owner


def aggregation_matrix(geom: CantorGeometry, basis) -> np.ndarray:
    """(n_leaves, m) with l(Q) on the leaves of each basis cube Q."""
    A = np.zeros((geom.n_leaves, len(basis)))
    for j, q in enumerate(basis):
        lo, hi = geom.leaf_range(q)
        A[lo:hi, j] = q.side
    return A


def gradient_field(basis, ball_cubes, geom: CantorGeometry, method: str = "bie", c: float = 0.3,
                   n_quad: int = 64, dtype=np.float32, h: float = 1 / 1024, window=None,
                   tol: float = 1e-9, n_walks: int = 4096, seed: int = 0, per_side: int = 1,
                   solver=None) -> GradientField:
    """Gradients of u_Q for every basis cube at the quadrature points of every ball."""
    pts, owner = ball_points(ball_cubes, c, n_quad)
    d = geom.dist_to_E(pts)
    A = aggregation_matrix(geom, basis)
    if method == "bie":
        from .bie import LayerSolver
        S = solver or LayerSolver(geom, per_side=per_side)
        if np.any(d < 0.05 * S.L.max()):
            raise AccuracyError("quadrature points closer to E_n than 1/20 panel length")
        q_leaf = S.solve(np.eye(geom.n_leaves)[S.owner])
        G = S.gradient(pts, q_leaf @ A, dtype=dtype)
    elif method == "grid":
        from .grid import DEFAULT_WINDOW, GridProblem, gradient_at
        prob = GridProblem(geom, window or DEFAULT_WINDOW, h)
        if np.any(d < prob.h):
            raise AccuracyError("quadrature points within h of E_n")
        hits = prob.frame_hits(n_walks, seed)
        leaf_grads = np.empty((len(pts), 2, geom.n_leaves))
        for i in range(geom.n_leaves):
            e = np.zeros(geom.n_leaves)
            e[i] = 1.0
            sol = prob.solve(prob.e_values(e), hits[:, i], tol)
            leaf_grads[:, :, i] = gradient_at(sol, pts)
        G = (leaf_grads.reshape(-1, geom.n_leaves) @ A).reshape(len(pts), 2, -1).astype(dtype)
    else:
        raise ValueError(f"unknown method {method!r}")
    return GradientField(list(ball_cubes), list(basis), pts, owner, G, c)
