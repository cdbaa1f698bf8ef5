"""Signed sums of cube indicators on the Cantor set and the growth of N-hat_k.

Basis functions are ``f_Q = l(Q) 1_Q``; their Lipschitz extensions are
sup-norm ramps around slightly enlarged squares.  Solutions for every basis
cube are superposed from per-leaf solutions, so any sign vector costs one
matrix product.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import CoverageError, ParameterError
from .functionals import (BoundaryFunction, lipschitz_constant, maximal_cubes,
                          nhat_k, weak_l1_norm)
from .geometry import CantorGeometry, DyadicCube
from .solver.fields import GradientField, gradient_field
from .stochastics import all_sign_patterns, rademacher_block

PLATEAU = 1.05      # side of the plateau square, in units of l(Q)
OUTER = 1.10        # side of the support square
EXACT_MAX = 12      # enumerate all sign patterns up to this basis size


@dataclass
class SignVector:
    cubes: list
    values: np.ndarray
    seed: int | None = None
    trial: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.int8)
        if len(self.values) != len(self.cubes):
            raise ParameterError("one sign per cube")
        if not np.all(np.abs(self.values) == 1):
            raise ParameterError("signs must be +1 or -1")

    @classmethod
    def random(cls, cubes, seed: int, trial: int) -> "SignVector":
        return cls(list(cubes), rademacher_block(len(cubes), seed, 1, trial)[0], seed, trial)

    def __neg__(self) -> "SignVector":
        return SignVector(self.cubes, -self.values, self.seed, self.trial)

    def as_dict(self) -> dict:
        return dict(zip(self.cubes, self.values.tolist()))


# ---------------------------------------------------------------- basis

def basis_cubes(geom: CantorGeometry, max_gen: int | None = None) -> list:
    return geom.all_cubes(geom.depth if max_gen is None else max_gen)


def f_basis(cube: DyadicCube, geom: CantorGeometry) -> BoundaryFunction:
    """l(Q) on the leaves of Q, 0 on the rest of E_n."""
    if cube.generation > geom.depth:
        raise ParameterError("cube is finer than the geometry")
    v = np.zeros(geom.n_leaves)
    lo, hi = geom.leaf_range(cube)
    v[lo:hi] = cube.side
    return BoundaryFunction.from_leaves(geom, v)


def bump_extension(cube: DyadicCube):
    """Plane function: l(Q) on the square of side 1.05 l(Q) about x_Q, 0 outside side 1.1 l(Q).

    The ramp is linear in the sup-norm distance from x_Q, slope 1/0.025.
    """
    l = cube.side
    cx, cy = cube.center
    a, b = 0.5 * PLATEAU * l, 0.5 * OUTER * l

    def f(pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        d = np.maximum(np.abs(P[:, 0] - cx), np.abs(P[:, 1] - cy))
        return l * np.clip((b - d) / (b - a), 0.0, 1.0)

    return f


def _ramp_contains(cubes, P) -> np.ndarray:
    c = np.array([q.center for q in cubes])
    l = np.array([q.side for q in cubes])
    d = np.maximum(np.abs(P[:, None, 0] - c[None, :, 0]), np.abs(P[:, None, 1] - c[None, :, 1]))
    return (d > 0.5 * PLATEAU * l) & (d < 0.5 * OUTER * l)


@lru_cache(maxsize=16)
def _ramp_overlap(cubes: tuple, per_ramp: int) -> int:
    rng = np.random.default_rng(0)
    best = 0
    for q in cubes:
        # sample the annulus of q: sup-norm radius uniform in the ramp band
        t = rng.uniform(0.5 * PLATEAU, 0.5 * OUTER, per_ramp) * q.side
        s = rng.uniform(-1, 1, per_ramp)
        side = rng.integers(0, 4, per_ramp)
        x = np.where(side < 2, np.where(side == 0, t, -t), s * t)
        y = np.where(side < 2, s * t, np.where(side == 2, t, -t))
        P = np.stack([x, y], axis=1) + np.asarray(q.center)
        best = max(best, int(_ramp_contains(cubes, P).sum(axis=1).max()))
    return best


def ramp_overlap(cubes, per_ramp: int = 64) -> int:
    """Largest number of ramp annuli sharing a point, sampled on every annulus."""
    return _ramp_overlap(tuple(cubes), per_ramp)


def random_sum(basis, signs, geom: CantorGeometry, max_overlap: int | None = 4) -> BoundaryFunction:
    """sum_Q eps_Q f_Q on the leaves; asserts the ramp overlap bound when requested."""
    s = signs.values if isinstance(signs, SignVector) else np.asarray(signs)
    if len(s) != len(basis):
        raise ParameterError("one sign per basis cube")
    if max_overlap is not None:
        c = ramp_overlap(basis)
        if c > max_overlap:
            raise ParameterError(f"ramp regions overlap {c} times (bound {max_overlap})")
    v = np.zeros(geom.n_leaves)
    for q, e in zip(basis, s):
        lo, hi = geom.leaf_range(q)
        v[lo:hi] += e * q.side
    return BoundaryFunction.from_leaves(geom, v)


def extension_sum(basis, signs):
    """Plane function sum_Q eps_Q (bump extension of f_Q)."""
    s = signs.values if isinstance(signs, SignVector) else np.asarray(signs)
    bumps = [bump_extension(q) for q in basis]

    def f(pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        out = np.zeros(len(P))
        for e, b in zip(s, bumps):
            out += e * b(P)
        return out

    return f


def random_sum_lipschitz(basis, signs, geom: CantorGeometry) -> float:
    """Lipschitz constant of the signed sum sampled on the corners of every leaf."""
    P = geom.corner_points()
    return lipschitz_constant(P, extension_sum(basis, signs)(P))


# ---------------------------------------------------------------- comparability

@dataclass
class LemmaRow:
    Q: DyadicCube
    R: DyadicCube
    mean: float
    rms: float
    predicted: float

    @property
    def ratio(self) -> float:
        return self.mean / self.predicted


@dataclass
class LemmaReport:
    rows: list
    depth: int
    method: str
    c: float

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])

    @property
    def min(self) -> float:
        return float(self.ratios.min())

    @property
    def max(self) -> float:
        return float(self.ratios.max())

    @property
    def geometric_mean(self) -> float:
        return float(np.exp(np.mean(np.log(self.ratios))))

    @property
    def rms_factor(self) -> float:
        """Largest max(mean/rms, rms/mean) over the pairs."""
        f = [max(r.mean / r.rms, r.rms / r.mean) for r in self.rows]
        return float(max(f))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["Q", "R", "mean", "rms", "predicted", "ratio"])
            for r in self.rows:
                w.writerow([r.Q.label(), r.R.label(), repr(r.mean), repr(r.rms), repr(r.predicted), repr(r.ratio)])


def verify_gradient_lemma(depth: int, table, method: str = "grid", h: float = 1 / 1024, c: float = 0.3,
                          n_walks: int = 4096, seed: int = 0, geom: CantorGeometry | None = None,
                          field: GradientField | None = None) -> LemmaReport:
    """Ball averages of |grad u_Q| on B-hat_R against l(Q) w(R) / (l(R) w(Q)) for all R inside Q.

    Balls exist for generations below ``depth``; ``table`` supplies w.
    """
    geom = geom or CantorGeometry(depth)
    cubes = geom.all_cubes(depth - 1)
    if field is None:
        field = gradient_field(cubes, cubes, geom, method=method, c=c, h=h, n_walks=n_walks,
                               seed=seed, dtype=np.float64)
    rows = []
    for j, Q in enumerate(cubes):
        g = field.grads[:, :, j]
        mean = field.ball_mean_abs(g)
        rms = field.ball_rms(g)
        for i, R in enumerate(cubes):
            if not Q.contains(R):
                continue
            wq, wr = table.estimate(Q), table.estimate(R)
            if wq == 0 or wr == 0:
                raise CoverageError(f"no walks reached {R.label() or 'root'}; raise n_walks")
            pred = Q.side * wr / (R.side * wq)
            rows.append(LemmaRow(Q, R, float(mean[i]), float(rms[i]), pred))
    return LemmaReport(rows, depth, method, c)


# ---------------------------------------------------------------- growth

@dataclass
class GrowthRow:
    k: int
    mean: float
    stderr: float
    trials: int
    family_size: int
    coverage: float
    pz_min: float
    khintchine_min: float
    khintchine_max: float
    sqrtk_ratio: float = float("nan")


@dataclass
class GrowthReport:
    rows: list
    depth: int
    seed: int
    min_trials: int = 1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for r in self.rows:
            if r.trials < self.min_trials:
                raise ParameterError(f"k={r.k}: {r.trials} trials below the minimum {self.min_trials}")

    def row(self, k: int) -> GrowthRow:
        return next(r for r in self.rows if r.k == k)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "mean", "stderr", "trials", "depth", "seed", "sqrtk_ratio"])
            for r in self.rows:
                w.writerow([r.k, repr(r.mean), repr(r.stderr), r.trials, self.depth, self.seed, repr(r.sqrtk_ratio)])


def sign_rows(m: int, trials: int, seed: int) -> tuple[np.ndarray, bool]:
    """All 2^m patterns for small bases, otherwise ``trials`` streamed rows."""
    if m <= EXACT_MAX:
        return all_sign_patterns(m), True
    return rademacher_block(m, seed, trials), False


def nk_experiment(k_max: int, depth: int, trials: int, seed: int, table=None, n_walks: int = 1_000_000,
                  method: str = "bie", c: float = 0.3, field: GradientField | None = None,
                  geom: CantorGeometry | None = None, chunk: int = 8, pole=(20.0, 0.0)) -> GrowthReport:
    """Weak-L1 norm of N-hat_k(|grad u|) for random signed sums, for k = 1..k_max."""
    from .solver.wos import harmonic_measure
    geom = geom or CantorGeometry(depth)
    if table is None:
        table = harmonic_measure(pole, geom, n_walks, seed)
    balls = geom.all_cubes(depth - 1)
    basis = basis_cubes(geom)
    if field is None:
        field = gradient_field(basis, balls, geom, method=method, c=c)
    S, exact = sign_rows(len(basis), trials, seed)
    n = len(S)
    pos = {q: i for i, q in enumerate(balls)}
    # Khintchine denominators: ball average of (sum_Q |grad u_Q|^2)^(1/2)
    square = np.sqrt(np.einsum("pdm,pdm->p", field.grads.astype(np.float64), field.grads.astype(np.float64)))
    sq_ball = field.ball_mean(square)

    ball_avg = np.empty((n, len(balls)))
    for lo in range(0, n, chunk):
        F = field.combine_many(S[lo:lo + chunk]).astype(np.float64)
        ball_avg[lo:lo + chunk] = field.ball_mean_abs(F)

    rows = []
    for k in range(1, k_max + 1):
        fam = maximal_cubes(table, k, depth - 1, warn=False)
        if not fam.cubes:
            raise CoverageError(f"no maximal cubes for k={k} at depth {depth}")
        idx = np.array([pos[q] for q in fam.cubes])
        vals = np.array([weak_l1_norm(nhat_k(dict(zip(fam.cubes, ball_avg[t, idx])), fam)) for t in range(n)])
        v = ball_avg[:, idx]
        pz = np.mean(v >= 0.5 * v.mean(axis=0), axis=0)
        kh = v.mean(axis=0) / sq_ball[idx]
        se = 0.0 if exact else float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
        rows.append(GrowthRow(k, float(vals.mean()), se, n, len(fam.cubes), 1.0 - fam.deficit,
                              float(pz.min()), float(kh.min()), float(kh.max())))
    base = rows[0].mean
    for r in rows:
        r.sqrtk_ratio = r.mean / base / math.sqrt(r.k)
    return GrowthReport(rows, depth, seed, min(trials, n), {"exact": exact, "method": method, "c": c,
                                                            "n_walks": table.n_walks})
