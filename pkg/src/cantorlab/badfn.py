"""Bad Lipschitz functions over families of epsilon-boxes, their energy regions,
layered families and the growth of normal-derivative mass.

Everything is procedural: a bad function is the base profile of its box
followed by an ordered list of plateau blends, one per processed sub-box,
so evaluation at any plane point is exact and total.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import shapely
from shapely.geometry import Point, box as shp_box
from shapely.ops import unary_union

from .boxes import BoxWitness, EpsBox, witness_for_cube
from .errors import (AccuracyError, CapacityError, ClassificationError, ConstructionError,
                     ParameterError)
from .functionals import hajlasz_witness, lp_norm
from .geometry import BoundaryGeometry, CantorGeometry, DyadicCube
from .stochastics import all_sign_patterns, rademacher_block

BASE_SLOPE = 24.0   # slope (in 1/eps) of the ramp down to the inner hull frontier
C_CK = 0.25         # corkscrew constant of the energy ball


def _as_box(b) -> EpsBox:
    return b.box if isinstance(b, BoxWitness) else b


def _world_poly(box: EpsBox, a, b, lo, hi):
    return shp_box(*box.world_rect(a, b, lo, hi))


# ---------------------------------------------------------------- profiles

def _f0_local(x1, h, eps):
    a = 1 - 2 * eps / 3
    delta = np.maximum(0.0, np.minimum.reduce([a - np.abs(x1), h - 2 * eps / 3, 10 * eps - h]))
    return np.minimum(np.maximum(0.0, (9 * eps - h) / eps), BASE_SLOPE / eps * delta)


def build_f0(box: EpsBox):
    """Base profile ``(9 eps - h)/eps`` in box-local units, times the box scale.

    Cut down by a slope-24/eps ramp to zero on the frontier of the inner hull,
    and zero above height 9 eps.
    """
    def f(pts):
        x1, h = box.to_local(pts)
        return box.scale * _f0_local(x1, h, box.eps)

    return f


def _plateau_weight(box: EpsBox, pts):
    """1 on the inner hull, 0 outside the middle hull or above the top, linear between."""
    x1, h = box.to_local(pts)
    e = box.eps
    d = np.maximum.reduce([np.abs(x1) - (1 - 2 * e / 3), 2 * e / 3 - h, np.zeros_like(h)])
    w = np.clip(1.0 - d / (e / 3), 0.0, 1.0)
    return np.where(h > 10 * e, 0.0, w)


def _inside(inner: np.ndarray, outer: np.ndarray, tol: float = 1e-12) -> bool:
    return bool(np.all(inner[:2] >= outer[:2] - tol) and np.all(inner[2:] <= outer[2:] + tol))


@dataclass
class BadFunction:
    box: EpsBox
    subfamily: list                                   # EpsBoxes, decreasing diameter
    constants: list = field(default_factory=list)     # (index into subfamily, plateau constant)
    skipped: list = field(default_factory=list)

    @property
    def processed(self) -> list:
        return [self.subfamily[i] for i, _ in self.constants]

    def __call__(self, pts) -> np.ndarray:
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        v = build_f0(self.box)(P)
        for i, c in self.constants:
            w = _plateau_weight(self.subfamily[i], P)
            v = w * c + (1 - w) * v
        return v

    def lipschitz_bound(self) -> float:
        """Analytic bound 31/eps (24/eps on the base ramp, 30/eps + 1/eps on the blends)."""
        return 31.0 / self.box.eps


def interior_overlaps(a: EpsBox, b: EpsBox) -> bool:
    r, s = a.interior_rect(), b.interior_rect()
    return min(r[2], s[2]) - max(r[0], s[0]) > 0 and min(r[3], s[3]) - max(r[1], s[1]) > 0


def build_bad_function(box, subfamily, geom: BoundaryGeometry | None = None, top_tol: float = 1e-12) -> BadFunction:
    """Process sub-boxes by decreasing diameter, freezing each onto its top value."""
    box = _as_box(box)
    subs = sorted((_as_box(b) for b in subfamily), key=lambda b: -b.diam)
    fn = BadFunction(box, subs)
    for j, b in enumerate(subs):
        if any(_inside(b.hull_rect(), subs[i].hull_rect()) for i in range(j) if subs[i].diam > b.diam):
            fn.skipped.append(j)
            continue
        vals = fn(b.top_points(8))
        c = float(np.mean(vals))
        if np.ptp(vals) > top_tol * max(abs(c), box.scale):
            raise ConstructionError(f"function not constant on the top of sub-box {j} (spread {np.ptp(vals):.3g})")
        fn.constants.append((j, c))
    return fn


def sampled_lipschitz(fn, region_rect, n_pairs: int = 1000, seed: int = 0, short: float | None = None):
    """Largest difference quotient over random pairs: half long-range, half short."""
    rng = np.random.default_rng(seed)
    x0, y0, x1, y1 = region_rect
    P, Q = _pair_points(rng, region_rect, n_pairs, short)
    d = np.hypot(*(P - Q).T)
    return float(np.max(np.abs(fn(P) - fn(Q)) / d))


def _pair_points(rng, rect, n_pairs, short=None):
    x0, y0, x1, y1 = rect
    size = max(x1 - x0, y1 - y0)
    short = size * 1e-3 if short is None else short
    P = rng.uniform([x0, y0], [x1, y1], (n_pairs, 2))
    Q = rng.uniform([x0, y0], [x1, y1], (n_pairs, 2))
    k = n_pairs // 2
    ang = rng.uniform(0, 2 * np.pi, k)
    r = rng.uniform(0.1, 1.0, k) * short
    Q[:k] = P[:k] + np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    return P, Q


# ---------------------------------------------------------------- lemma checks

@dataclass
class TwoPointReport:
    status: str          # "ok", "fail" or "inconclusive"
    c_tp: float
    n_pairs: int
    gate: float


def _sample_points(geom: BoundaryGeometry) -> np.ndarray:
    r = geom.rects
    centers = 0.5 * (r[:, :2] + r[:, 2:])
    return np.concatenate([geom.corner_points(), centers])


def check_two_point(fn: BadFunction, geom: BoundaryGeometry, mu: float, points=None,
                    floor: float = 0.0) -> TwoPointReport:
    """Height-monotonicity of f on E inside the box interior.

    For pairs z_lo, z_hi of E-sample points in the interior with height gap above
    the gate, reports the smallest ``(f(z_lo) - f(z_hi)) / (h(z_hi) - h(z_lo))``.
    The gate is ``mu**2 * diam`` widened to the tallest sub-box height so that
    two points frozen onto one plateau never qualify.
    """
    box = fn.box
    Z = _sample_points(geom) if points is None else np.atleast_2d(points)
    x1, h = box.to_local(Z)
    e = box.eps
    keep = (np.abs(x1) <= 1 - e) & (h >= e) & (h <= 9 * e)
    Z = Z[keep]
    gate = mu**2 * box.diam
    if fn.subfamily:
        gate = max(gate, max(10 * b.eps * b.scale for b in fn.subfamily))
    if len(Z) < 2:
        return TwoPointReport("inconclusive", float("nan"), 0, gate)
    ht = box.height_of(Z)
    v = fn(Z)
    dh = ht[None, :] - ht[:, None]          # h(j) - h(i)
    ok = dh > gate
    if not ok.any():
        return TwoPointReport("inconclusive", float("nan"), 0, gate)
    ratio = (v[:, None] - v[None, :])[ok] / dh[ok]
    c = float(ratio.min())
    return TwoPointReport("ok" if c > floor else "fail", c, int(ok.sum()), gate)


def gradient_regions(fn: BadFunction):
    """Regions outside which grad f vanishes: the truncated inner hull minus every
    sub-box middle hull, and the middle bands of the processed sub-boxes."""
    b, e = fn.box, fn.box.eps
    g1 = _world_poly(b, -(1 - 2 * e / 3), 1 - 2 * e / 3, 2 * e / 3, 9 * e)
    holes = [shp_box(*s.middle_hull_rect()) for s in fn.subfamily]
    if holes:
        g1 = g1.difference(unary_union(holes))
    bands = [shp_box(*s.middle_hull_rect()).difference(shp_box(*s.inner_hull_rect())) for s in fn.processed]
    g2 = unary_union(bands) if bands else shapely.Polygon()
    return g1, g2


@dataclass
class SumLipschitzReport:
    overlaps: list            # (i, j, area) for offending pairs
    single: float             # max over functions of the sampled constant
    sums: np.ndarray          # sampled constant per sign vector

    @property
    def disjoint(self) -> bool:
        return not self.overlaps

    @property
    def ratio(self) -> float:
        return float(self.sums.max() / self.single)


def check_sum_lipschitz(fns, signs, n_pairs: int = 20_000, seed: int = 0, tol: float = 1e-14) -> SumLipschitzReport:
    """Pairwise disjointness of gradient supports and sampled Lipschitz constants of signed sums.

    ``signs`` is one sign vector or a (trials, m) array.
    """
    S = np.atleast_2d(np.asarray(signs))
    if S.shape[1] != len(fns):
        raise ParameterError("one sign per function")
    regions = [unary_union(gradient_regions(f)) for f in fns]
    overlaps = []
    for i in range(len(fns)):
        for j in range(i + 1, len(fns)):
            a = regions[i].intersection(regions[j]).area
            if a > tol * min(regions[i].area, regions[j].area):
                overlaps.append((i, j, a))
    rects = np.array([f.box.hull_rect() for f in fns])
    lo, hi = rects[:, :2].min(axis=0), rects[:, 2:].max(axis=0)
    pad = 0.05 * (hi - lo)
    rng = np.random.default_rng(seed)
    short = min(f.box.eps * f.box.scale for f in fns) / 20
    # half the pairs inside individual hulls so small boxes are sampled too
    P, Q = [], []
    per = max(n_pairs // (2 * len(fns)), 1)
    for f in fns:
        p, q = _pair_points(rng, f.box.hull_rect(), per, short)
        P.append(p)
        Q.append(q)
    p, q = _pair_points(rng, (*(lo - pad), *(hi + pad)), n_pairs // 2, short)
    P, Q = np.concatenate(P + [p]), np.concatenate(Q + [q])
    d = np.hypot(*(P - Q).T)
    D = np.array([f(P) - f(Q) for f in fns])            # (m, pairs)
    single = float(np.max(np.abs(D) / d))
    sums = np.max(np.abs(S.astype(float) @ D) / d, axis=1)
    return SumLipschitzReport(overlaps, single, sums)


# ---------------------------------------------------------------- energy regions

CASES = {1: "side-touch", 2: "interior-only", 3: "box-in-complement"}


@dataclass
class EnergyRegion:
    case: int
    polygon: object
    box: EpsBox
    ball: tuple | None = None          # (center, radius) in case 3
    xi1: np.ndarray | None = None
    xi2: np.ndarray | None = None

    @property
    def tag(self) -> str:
        return CASES[self.case]

    @property
    def area(self) -> float:
        return float(self.polygon.area)


def _e_polygons(geom: BoundaryGeometry, rect):
    x0, y0, x1, y1 = rect
    pad = 0.01 * max(x1 - x0, y1 - y0)
    idx = geom.leaves_in_rect(np.array([x0 - pad, y0 - pad, x1 + pad, y1 + pad]))
    return unary_union([shp_box(*geom.rects[i]) for i in np.atleast_1d(idx)])


def _local_bounds(box: EpsBox, poly):
    """Range of local (x1, h) over the vertices of a polygon."""
    if poly.is_empty:
        return None
    geoms = getattr(poly, "geoms", [poly])
    V = np.concatenate([np.asarray(g.exterior.coords) for g in geoms if g.area > 0])
    x1, h = box.to_local(V)
    return x1.min(), x1.max(), h.min(), h.max()


def _assert_in_domain(poly, geom: BoundaryGeometry, spacing: float):
    x0, y0, x1, y1 = poly.bounds
    xs = np.arange(x0 + spacing / 2, x1, spacing)
    ys = np.arange(y0 + spacing / 2, y1, spacing)
    X, Y = np.meshgrid(xs, ys)
    P = np.stack([X.ravel(), Y.ravel()], axis=1)
    P = P[shapely.contains_xy(poly, P[:, 0], P[:, 1])]
    if len(P) == 0:
        raise AccuracyError("energy region not resolved by the sampling spacing")
    if np.any(geom.dist_to_E(P) <= 0) or not np.all(geom.in_domain(P)):
        raise ConstructionError("energy region leaves the domain")
    return len(P)


def _exit_point(box: EpsBox, geom: BoundaryGeometry, x, direction, r):
    """First E-point met by the cylinder of radius r from x along a local direction."""
    d = box.to_world(*direction) - box.to_world(0.0, 0.0)
    d = d / np.hypot(*d)
    nrm = np.array([-d[1], d[0]])
    best, hit = np.inf, None
    for R in geom.rects:
        C = np.array([[R[0], R[1]], [R[2], R[1]], [R[2], R[3]], [R[0], R[3]]]) - x
        s, t = C @ d, C @ nrm
        if t.max() < -r or t.min() > r or s.max() <= 0:
            continue
        # entry along the axis: the rectangle face nearest to x within the strip
        t0, t1 = max(t.min(), -r), min(t.max(), r)
        s_in = max(s.min(), 0.0)
        if s_in < best:
            best = s_in
            tm = 0.5 * (t0 + t1)
            hit = x + s_in * d + tm * nrm
    if hit is None:
        raise ClassificationError("cylinder never meets E")
    return best, hit


def build_PQ(box, geom: BoundaryGeometry, mu: float, spacing: float | None = None) -> EnergyRegion:
    """Classify the box against E and build its energy region."""
    box = _as_box(box)
    e, s = box.eps, box.scale
    hull = box.hull_rect()
    Ep = _e_polygons(geom, hull)
    M = unary_union([shp_box(*r) for r in box.m_rects()])
    hull_p = shp_box(*hull)
    E_in = Ep.intersection(hull_p)
    spacing = spacing or box.diam / 400
    if M.difference(Ep).area <= 1e-12 * M.area:
        reg = _case3(box, geom, Ep, mu)
    else:
        if M.intersection(Ep).area > 0:
            raise ClassificationError("box frame partly covered by E: neither inside the domain nor its complement")
        interior = shp_box(*box.interior_rect())
        band = _world_poly(box, -(1 - 2 * e / 3), 1 - 2 * e / 3, 9 * e, 10 * e)
        touch = E_in.intersection(band)
        if touch.area > 0:
            kx0, kx1, _, _ = _local_bounds(box, touch)
            parts = [M, _world_poly(box, -1, kx0, 9 * e, 10 * e), _world_poly(box, kx1, 1, 9 * e, 10 * e)]
            b = _local_bounds(box, E_in)
            if b is not None and b[2] > 0:
                parts.append(_world_poly(box, -1, 1, 0, b[2]))
            reg = EnergyRegion(1, unary_union(parts), box)
        else:
            outside = E_in.difference(interior).area
            if outside > 0:
                raise ClassificationError(f"E meets the hull outside the interior (area {outside:.3g}) "
                                          "without reaching the top band")
            b = _local_bounds(box, E_in.intersection(interior))
            parts = [M]
            if b is None:
                parts.append(hull_p)
            else:
                parts += [_world_poly(box, -1, 1, b[3], 10 * e), _world_poly(box, -1, 1, 0, b[2])]
            reg = EnergyRegion(2, unary_union(parts), box)
    if reg.polygon.geom_type != "Polygon":
        raise ConstructionError(f"energy region of case {reg.case} is not connected")
    _assert_in_domain(reg.polygon, geom, spacing if reg.case != 3 else mu * s * C_CK / 20)
    return reg


def _case3(box: EpsBox, geom: BoundaryGeometry, Ep, mu: float) -> EnergyRegion:
    e, s = box.eps, box.scale
    interior = shp_box(*box.interior_rect())
    E_int = Ep.intersection(interior)
    r = mu * C_CK * s
    # candidate anchors: vertices and edge midpoints of E inside the interior, highest first
    cands = []
    for g in getattr(E_int, "geoms", [E_int]):
        if g.is_empty or g.area == 0:
            continue
        V = np.asarray(g.exterior.coords)[:-1]
        cands.append(V)
        cands.append(0.5 * (V + np.roll(V, -1, axis=0)))
    if not cands:
        raise ClassificationError("complement box with no E inside its interior")
    C = np.concatenate(cands)
    order = np.lexsort((box.to_local(C)[0], -box.height_of(C)))
    dirs = [(0.0, 1.0), (1.0, 0.0), (-1.0, 0.0), (0.0, -1.0)]
    # upward offsets first: the ball then sits on top of E, as in a cavity floor
    for dx, dh in dirs:
        for z in C[order]:
            c = z + 0.5 * mu * (box.to_world(dx, dh) - box.to_world(0.0, 0.0))  # offset mu/2 in local units
            if not interior.contains(Point(c)):
                continue
            if geom.dist_to_E(c[None])[0] >= r * (1 + 1e-9):
                t1, xi1 = _exit_point(box, geom, c, (-1.0, 0.0), r / 4)
                t2, xi2 = _exit_point(box, geom, c, (0.0, -1.0), r / 4)
                ball = Point(c).buffer(r, 64)
                cyl1 = shp_box(*_strip(box, c, (-1.0, 0.0), t1, r / 4))
                cyl2 = shp_box(*_strip(box, c, (0.0, -1.0), t2, r / 4))
                poly = unary_union([ball, cyl1, cyl2])
                return EnergyRegion(3, poly, box, (tuple(c), r), xi1, xi2)
    raise ClassificationError("no corkscrew ball fits near E inside the interior")


def _strip(box: EpsBox, x, direction, length, r):
    """World rectangle of the cylinder from x along a local axis direction."""
    d = box.to_world(*direction) - box.to_world(0.0, 0.0)
    d = d / np.hypot(*d)
    nrm = np.array([-d[1], d[0]])
    pts = np.array([x + r * nrm, x - r * nrm, x + length * d + r * nrm, x + length * d - r * nrm])
    return (*pts.min(axis=0), *pts.max(axis=0))


def pi_gap(reg: EnergyRegion) -> float:
    """|h(xi_1) - h(xi_{n+1})| for a case-3 region."""
    return float(abs(reg.box.height_of(reg.xi1)[0] - reg.box.height_of(reg.xi2)[0]))


# ---------------------------------------------------------------- energy

def energy_check(box, fn, geom: BoundaryGeometry, region: EnergyRegion | None = None, h: float | None = None,
                 pad: float = 0.5, frame: str = "bie", mu: float | None = None, min_nodes: int = 64,
                 tol: float = 1e-9) -> float:
    """Mean of |grad u|^2 over the energy region, in units where diam M = 1 and the data amplitude is 1."""
    from .solver.grid import GridProblem
    box = _as_box(box)
    region = region or build_PQ(box, geom, box.eps / 100 if mu is None else mu)
    diam = box.diam
    h = h or diam / 256
    x0, y0, x1, y1 = box.hull_rect()
    p = pad * diam
    window = tuple(np.round(np.array([x0 - p, y0 - p, x1 + p, y1 + p]) / h) * h)
    prob = GridProblem(geom, window, h)
    ev = prob.e_values(fn)
    amp = float(np.max(np.abs(ev))) if len(ev) else 0.0
    if amp == 0:
        return 0.0
    sol = prob.solve(ev, prob.frame_values(fn, frame=frame), tol)
    gx, gy = sol.gradient()
    X, Y = np.meshgrid(*sol.coords())
    inside = shapely.contains_xy(region.polygon, X.ravel(), Y.ravel()).reshape(X.shape)
    g2 = (gx**2 + gy**2)[inside]
    g2 = g2[np.isfinite(g2)]
    if len(g2) < min_nodes:
        raise AccuracyError(f"energy region holds {len(g2)} usable grid nodes (< {min_nodes}); refine h")
    return float(np.mean(g2) * (diam / amp) ** 2)


# ---------------------------------------------------------------- fixtures

def fixture_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("cantorlab.fixtures").iterdir() if p.name.endswith(".json"))


@dataclass
class Fixture:
    name: str
    case: int
    box: EpsBox
    geom: BoundaryGeometry
    mu: float
    probes: list


def load_fixture(name: str, scale: float | None = None) -> Fixture:
    """Load a shipped box configuration; rectangles are stored in box-local units."""
    data = json.loads(resources.files("cantorlab.fixtures").joinpath(f"{name}.json").read_text())
    b = data["box"]
    s = float(b["scale"] if scale is None else scale)
    box = EpsBox(float(data["eps"]), tuple(float(v) * s / b["scale"] for v in b["anchor"]), s, b["orientation"])
    rects = np.array([box.world_rect(a, bb, lo, hi) for a, lo, bb, hi in data["rects_local"]])
    geom = BoundaryGeometry(rects, r_out=float(data.get("r_out", 100.0)))
    return Fixture(name, int(data["case"]), box, geom, float(data["mu"]), data.get("probes", []))


# ---------------------------------------------------------------- layers

@dataclass
class LayerFamilies:
    Q0: DyadicCube
    families: list
    stride: int = 1

    @property
    def k(self) -> int:
        return len(self.families)

    def check(self) -> dict:
        """Properties: disjoint layers, strict ancestry, containment in Q0, coverage."""
        out = {"disjoint": True, "ancestry": True, "inside": True, "coverage": True}
        for i, F in enumerate(self.families):
            if len(set(F)) != len(F) or len({q.generation for q in F}) > 1:
                out["disjoint"] = False
            out["inside"] &= all(self.Q0.contains(q) and q != self.Q0 for q in F)
            if i:
                prev = set(self.families[i - 1])
                out["ancestry"] &= all(any(q.ancestor(t) in prev for t in range(1, q.generation + 1)) for q in F)
        last = self.families[-1]
        out["coverage"] = sum(q.measure for q in last) >= 0.5 * self.Q0.measure
        return out


def build_layer_families(Q0: DyadicCube, k: int, geom: CantorGeometry, stride: int = 1) -> LayerFamilies:
    if k < 1 or stride < 1:
        raise ParameterError("k and stride must be positive")
    if Q0.generation + k * stride > geom.depth:
        raise CapacityError(f"{k} layers of stride {stride} below generation {Q0.generation} need depth "
                            f"{Q0.generation + k * stride} > {geom.depth}")
    fams = []
    for i in range(1, k + 1):
        g = Q0.generation + i * stride
        fams.append([q for q in geom.cubes(g) if Q0.contains(q)])
    return LayerFamilies(Q0, fams, stride)


def layer_bad_functions(layers: LayerFamilies, geom: CantorGeometry, eps: float, mu: float):
    """Bad function of every layer cube over the family Q0 plus all layers."""
    cubes = [layers.Q0] + [q for F in layers.families for q in F]
    boxes = {}
    for q in cubes:
        w = witness_for_cube(q, geom, eps, mu)
        if w is None:
            raise ConstructionError(f"no box witness for cube {q.label() or 'root'}")
        boxes[q] = w.box
    fns = []
    for F in layers.families:
        row = []
        for q in F:
            b = boxes[q]
            subs = [boxes[r] for r in cubes if r != q and boxes[r].diam < b.diam and interior_overlaps(boxes[r], b)]
            row.append(build_bad_function(b, subs, geom))
        fns.append(row)
    return fns


# ---------------------------------------------------------------- Rellich growth

@dataclass
class RellichRow:
    k: int
    ratio: float
    stderr: float
    trials: int
    layer_variation: list          # stage-1 value over sigma(Q0), per layer
    khintchine_min: float          # min over cubes of E|sum eps a| / (sum |a| / sqrt k)
    numerator: float
    denominator: float


@dataclass
class RellichReport:
    rows: list
    depth: int
    seed: int
    meta: dict = field(default_factory=dict)

    def row(self, k: int) -> RellichRow:
        return next(r for r in self.rows if r.k == k)

    def growth(self, k: int) -> float:
        return self.row(k).ratio / self.row(1).ratio

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "ratio", "stderr", "trials", "depth", "seed"])
            for r in self.rows:
                w.writerow([r.k, repr(r.ratio), repr(r.stderr), r.trials, self.depth, self.seed])


def _cube_fluxes(charges: np.ndarray, geom: CantorGeometry, cubes) -> np.ndarray:
    """Total flux into each cube, from per-leaf charges (leaves x columns)."""
    return np.array([charges[slice(*geom.leaf_range(q))].sum(axis=0) for q in cubes])


def _draw(m: int, trials: int, seed: int, stream: int, exact_max: int = 12):
    if m <= exact_max:
        return all_sign_patterns(m), True
    return rademacher_block(m, seed * 1_000_003 + stream, trials), False


def rellich_failure_experiment(k_max: int, depth: int, trials: int, seed: int, eps: float = 0.1,
                               mu: float | None = None, Q0: DyadicCube | None = None, per_side: int = 1,
                               solver=None, geom: CantorGeometry | None = None) -> RellichReport:
    """Normal-derivative mass of layered bad functions against their Hajlasz norms.

    Stage 1 picks, per layer, the sign vector with the largest cube variation of
    the flux; stage 2 averages over layer signs the flux variation on the
    finest layer and the L1 norm of a Hajlasz gradient of the boundary data.
    """
    from .solver.bie import LayerSolver
    geom = geom or CantorGeometry(depth)
    mu = eps / 100 if mu is None else mu
    Q0 = Q0 or geom.root
    S = solver or LayerSolver(geom, per_side=per_side)
    Z = geom.corner_points()
    zw = np.repeat(geom.leaf_weights, 4) / 4 if len(Z) == 4 * geom.n_leaves else None
    rows = []
    for k in range(1, k_max + 1):
        layers = build_layer_families(Q0, k, geom)
        if Q0.generation + k > geom.depth - 2:
            raise CapacityError("layer cubes need box witnesses, which exist two generations above the leaves")
        fns = layer_bad_functions(layers, geom, eps, mu)
        finest = layers.families[-1]
        chosen, variation = [], []
        for j, (F, row) in enumerate(zip(layers.families, fns)):
            D = np.stack([f(S.mid) for f in row], axis=1)
            ch = S.leaf_charges(S.solve(D))                  # (leaves, |F|)
            own = _cube_fluxes(ch, geom, F)                   # flux of each f_Q into each cube of F
            signs, _ = _draw(len(F), trials, seed, j)
            var = np.abs(own @ signs.T.astype(float)).sum(axis=0)
            best = signs[int(np.argmax(var))].astype(float)
            variation.append(float(var.max() / Q0.measure))
            a = _cube_fluxes(ch @ best, geom, finest)        # flux of f_j* into each finest cube
            vals = sum(e * f(Z) for e, f in zip(best, row))
            chosen.append((a, vals))
        A = np.stack([c[0] for c in chosen], axis=1)           # (finest cubes, k)
        V = np.stack([c[1] for c in chosen], axis=1)           # (points, k)
        L, exact = _draw(k, trials, seed, 1000 + k)
        Lf = L.astype(float)
        num = np.abs(A @ Lf.T).sum(axis=0)
        den = np.array([lp_norm(hajlasz_witness(Z, V @ e, zw), 1) for e in Lf])
        ratio = float(num.mean() / den.mean())
        q = num / den
        se = 0.0 if exact else float(q.std(ddof=1) / math.sqrt(len(q)))
        kh = np.abs(A @ Lf.T).mean(axis=1) / (np.abs(A).sum(axis=1) / math.sqrt(k))
        rows.append(RellichRow(k, ratio, se, len(L), variation, float(kh.min()),
                               float(num.mean()), float(den.mean())))
    return RellichReport(rows, depth, seed, {"eps": eps, "mu": mu, "Q0": Q0.label(), "per_side": S.per_side})
