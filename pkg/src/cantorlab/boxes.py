"""Standard eps-boxes, box witnesses and the discretised box family.

Box-local coordinates are ``(x1, h)``: ``x1`` runs across the box
(``|x1| <= 1``) and ``h`` is the height above the outer floor
(``0 <= h <= 10 eps``).  A box in the plane is the image of the standard box
under ``p = anchor + scale * R(x1, h)`` where ``R`` is one of four axis
orientations ("up" means height grows along +y).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ParameterError
from .geometry import BoundaryGeometry, CantorGeometry, DyadicCube

ORIENTATIONS = ("up", "down", "left", "right")


class BoxRegion(Enum):
    INNER_BASE = "InnerBase"
    INNER_SIDE = "InnerSide"
    MIDDLE_BASE = "MiddleBase"
    MIDDLE_SIDE = "MiddleSide"
    OUTER_BASE = "OuterBase"
    OUTER_SIDE = "OuterSide"
    TOP = "Top"
    CONTENT = "Content"
    INTERIOR = "Interior"
    OUTSIDE = "Outside"


M_REGIONS = (BoxRegion.INNER_BASE, BoxRegion.INNER_SIDE, BoxRegion.MIDDLE_BASE,
             BoxRegion.MIDDLE_SIDE, BoxRegion.OUTER_BASE, BoxRegion.OUTER_SIDE)
# classification priority: inner-most wins on shared faces
PRIORITY = M_REGIONS + (BoxRegion.TOP, BoxRegion.CONTENT, BoxRegion.INTERIOR)


def region_bounds(eps: float) -> dict:
    """Closed local bounds ``(|x1| lo, |x1| hi, h lo, h hi)`` of every named region."""
    e = eps
    return {
        BoxRegion.INNER_BASE: (0.0, 1 - 2 * e / 3, 2 * e / 3, e),
        BoxRegion.MIDDLE_BASE: (0.0, 1 - e / 3, e / 3, 2 * e / 3),
        BoxRegion.OUTER_BASE: (0.0, 1.0, 0.0, e / 3),
        BoxRegion.INNER_SIDE: (1 - e, 1 - 2 * e / 3, e, 10 * e),
        BoxRegion.MIDDLE_SIDE: (1 - 2 * e / 3, 1 - e / 3, 2 * e / 3, 10 * e),
        BoxRegion.OUTER_SIDE: (1 - e / 3, 1.0, e / 3, 10 * e),
        BoxRegion.TOP: (0.0, 1.0, 10 * e, 10 * e),
        BoxRegion.CONTENT: (0.0, 1 - e, e, 2 * e),
        BoxRegion.INTERIOR: (0.0, 1 - e, e, 9 * e),  # open in h
    }


def in_region(x1, h, region: BoxRegion, eps: float, strict: bool = False) -> np.ndarray:
    a, b, lo, hi = region_bounds(eps)[region]
    ax = np.abs(x1)
    if strict:
        return (ax > a if a > 0 else True) & (ax < b) & (h > lo) & (h < hi)
    if region is BoxRegion.INTERIOR:
        return (ax <= b) & (h > lo) & (h < hi)
    return (ax >= a) & (ax <= b) & (h >= lo) & (h <= hi)


def in_M(x1, h, eps: float, strict: bool = False) -> np.ndarray:
    """The U-shaped set M(eps) as a union of a floor slab and two side columns."""
    ax = np.abs(x1)
    if strict:
        floor = (ax < 1) & (h > 0) & (h < eps)
        cols = (ax > 1 - eps) & (ax < 1) & (h > 0) & (h < 10 * eps)
        return floor | cols
    return ((ax <= 1) & (h >= 0) & (h <= eps)) | ((ax >= 1 - eps) & (ax <= 1) & (h >= 0) & (h <= 10 * eps))


def classify_local(x1, h, eps: float) -> np.ndarray:
    x1 = np.asarray(x1, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    out = np.full(x1.shape, BoxRegion.OUTSIDE, dtype=object)
    todo = np.ones(x1.shape, bool)
    for r in PRIORITY:
        m = todo & in_region(x1, h, r, eps)
        out[m] = r
        todo &= ~m
    return out


@dataclass(frozen=True)
class EpsBox:
    eps: float
    anchor: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    orientation: str = "up"

    def __post_init__(self):
        if not 0 < self.eps <= 1 / 7 + 1e-15:
            raise ParameterError("eps must lie in (0, 1/7]")
        if not self.scale > 0:
            raise ParameterError("scale must be positive")
        if self.orientation not in ORIENTATIONS:
            raise ParameterError(f"orientation must be one of {ORIENTATIONS}")

    # transforms ---------------------------------------------------------
    def to_local(self, pts):
        P = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        qx = (P[:, 0] - self.anchor[0]) / self.scale
        qy = (P[:, 1] - self.anchor[1]) / self.scale
        o = self.orientation
        if o == "up":
            return qx, qy
        if o == "down":
            return qx, -qy
        if o == "right":
            return qy, qx
        return qy, -qx

    def to_world(self, x1, h) -> np.ndarray:
        x1 = np.asarray(x1, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        o = self.orientation
        if o == "up":
            qx, qy = x1, h
        elif o == "down":
            qx, qy = x1, -h
        elif o == "right":
            qx, qy = h, x1
        else:
            qx, qy = -h, x1
        return np.stack([self.anchor[0] + self.scale * qx, self.anchor[1] + self.scale * qy], axis=-1)

    def world_rect(self, a, b, lo, hi) -> np.ndarray:
        """World rectangle of the local block ``a <= x1 <= b, lo <= h <= hi``."""
        c = self.to_world(np.array([a, b]), np.array([lo, hi]))
        return np.array([min(c[:, 0]), min(c[:, 1]), max(c[:, 0]), max(c[:, 1])])

    # geometry -----------------------------------------------------------
    @property
    def standard_diam(self) -> float:
        return math.hypot(2.0, 10 * self.eps)

    @property
    def diam(self) -> float:
        return self.scale * self.standard_diam

    @property
    def height_axis(self) -> np.ndarray:
        return {"up": np.array([0.0, 1.0]), "down": np.array([0.0, -1.0]),
                "right": np.array([1.0, 0.0]), "left": np.array([-1.0, 0.0])}[self.orientation]

    def m_rects(self) -> np.ndarray:
        e = self.eps
        return np.array([
            self.world_rect(-1, 1, 0, e),
            self.world_rect(-1, -(1 - e), e, 10 * e),
            self.world_rect(1 - e, 1, e, 10 * e),
        ])

    def content_rect(self) -> np.ndarray:
        e = self.eps
        return self.world_rect(-(1 - e), 1 - e, e, 2 * e)

    def interior_rect(self) -> np.ndarray:
        e = self.eps
        return self.world_rect(-(1 - e), 1 - e, e, 9 * e)

    def hull_rect(self) -> np.ndarray:
        return self.world_rect(-1, 1, 0, 10 * self.eps)

    def inner_hull_rect(self) -> np.ndarray:
        """Convex hull of the inner base and inner sides."""
        e = self.eps
        return self.world_rect(-(1 - 2 * e / 3), 1 - 2 * e / 3, 2 * e / 3, 10 * e)

    def middle_hull_rect(self) -> np.ndarray:
        """Convex hull of the inner and middle bases and sides."""
        e = self.eps
        return self.world_rect(-(1 - e / 3), 1 - e / 3, e / 3, 10 * e)

    def top_points(self, k: int = 8) -> np.ndarray:
        x1 = np.linspace(-0.95, 0.95, k)
        return self.to_world(x1, np.full(k, 10 * self.eps))

    def height_of(self, pts) -> np.ndarray:
        """World-unit height coordinate (the projection onto the box axis)."""
        P = np.atleast_2d(pts)
        return P @ self.height_axis


def region_of(p, box: EpsBox):
    x1, h = box.to_local(p)
    r = classify_local(x1, h, box.eps)
    return r[0] if np.ndim(p) == 1 else r


@dataclass
class PartitionReport:
    samples: int
    overlaps: int
    gaps: int
    interior_in_M: int
    content_out_of_band: int
    corner_failures: int

    @property
    def ok(self) -> bool:
        return not (self.overlaps or self.gaps or self.interior_in_M
                    or self.content_out_of_band or self.corner_failures)


def box_partition_check(box: EpsBox, samples: int = 100_000, seed: int = 0) -> PartitionReport:
    """Monte Carlo plus exact-corner verification that the six regions tile M(eps)."""
    if samples < 1:
        raise ParameterError("samples must be positive")
    e = box.eps
    rng = np.random.default_rng(seed)
    lx = rng.uniform(-1.05, 1.05, samples)
    lh = rng.uniform(-0.5 * e, 10.5 * e, samples)
    x1, h = box.to_local(box.to_world(lx, lh))
    strict = np.stack([in_region(x1, h, r, e, strict=True) for r in M_REGIONS])
    overlaps = int(np.count_nonzero(strict.sum(axis=0) > 1))
    closed = np.stack([in_region(x1, h, r, e) for r in M_REGIONS]).any(axis=0)
    gaps = int(np.count_nonzero(in_M(x1, h, e, strict=True) & ~closed))
    interior = in_region(x1, h, BoxRegion.INTERIOR, e, strict=True)
    interior_in_M = int(np.count_nonzero(interior & strict.any(axis=0)))
    cls = classify_local(x1, h, e)
    c = cls == BoxRegion.CONTENT
    content_bad = int(np.count_nonzero(c & ((h < e) | (h > 2 * e))))
    # exact corners: every corner of the region grid inside M lies in a closed region,
    # and the chosen label is one of the closed regions containing it
    xs = np.array([0, 1 - e, 1 - 2 * e / 3, 1 - e / 3, 1.0])
    xs = np.concatenate([xs, -xs])
    hs = np.array([0, e / 3, 2 * e / 3, e, 2 * e, 9 * e, 10 * e])
    X, H = np.meshgrid(xs, hs)
    X, H = X.ravel(), H.ravel()
    lab = classify_local(X, H, e)
    fails = 0
    for xv, hv, lv in zip(X, H, lab):
        if in_M(xv, hv, e):
            if lv not in M_REGIONS or not in_region(xv, hv, lv, e):
                fails += 1
    return PartitionReport(samples, overlaps, gaps, interior_in_M, content_bad, fails)


# ---------------------------------------------------------------- witnesses

def box_is_valid(box: EpsBox, geom: BoundaryGeometry) -> bool:
    """M misses E_n and E_n meets the content (certified by a leaf corner)."""
    if np.any(geom.rect_dist_to_E(box.m_rects()) == 0.0):
        return False
    return content_points(box, geom).size > 0


def content_points(box: EpsBox, geom: BoundaryGeometry) -> np.ndarray:
    pts = _corners_near(geom, box.content_rect())
    if not len(pts):
        return pts
    x1, h = box.to_local(pts)
    return pts[in_region(x1, h, BoxRegion.CONTENT, box.eps)]


def _corners_near(geom: BoundaryGeometry, rect) -> np.ndarray:
    idx = geom.leaves_in_rect(rect)
    if not len(idx):
        return np.zeros((0, 2))
    r = geom.rects[idx]
    pts = np.concatenate([r[:, [0, 1]], r[:, [2, 1]], r[:, [0, 3]], r[:, [2, 3]]])
    keep = (pts[:, 0] >= rect[0]) & (pts[:, 0] <= rect[2]) & (pts[:, 1] >= rect[1]) & (pts[:, 1] <= rect[3])
    return np.unique(pts[keep], axis=0)


def _ball_holds(box: EpsBox, x, t) -> bool:
    r = box.hull_rect()
    c = np.array([[r[0], r[1]], [r[0], r[3]], [r[2], r[1]], [r[2], r[3]]])
    return bool(np.all(np.hypot(c[:, 0] - x[0], c[:, 1] - x[1]) <= t))


def find_box(x, t: float, geom: BoundaryGeometry, eps: float, max_halvings: int = 8):
    """First valid box inside B(x, t) with diam >= eps * t, or None.

    Scan order: orientation (up, down, left, right); scale from the largest
    box fitting the ball down by factors of 2; E-corner anchors sorted by
    (y, x); nine across-positions and three heights of the anchor corner
    inside the content.  Every candidate carries an E point in its content,
    so validity reduces to M missing E_n and containment in the ball.
    """
    x = np.asarray(x, dtype=np.float64)
    pts = _corners_near(geom, np.array([x[0] - t, x[1] - t, x[0] + t, x[1] + t]))
    if not len(pts):
        return None
    pts = pts[np.hypot(pts[:, 0] - x[0], pts[:, 1] - x[1]) <= t]
    pts = pts[np.lexsort((pts[:, 0], pts[:, 1]))]
    std = math.hypot(2.0, 10 * eps)
    s = 2 * t / std
    us = np.linspace(-0.9 * (1 - eps), 0.9 * (1 - eps), 9)
    hs = np.array([1.05, 1.5, 1.95]) * eps
    offsets = np.array([(u, hh) for u in us for hh in hs])
    for orient in ORIENTATIONS:
        scale = s
        for _ in range(max_halvings + 1):
            if scale * std < eps * t:
                break
            probe = EpsBox(eps, (0.0, 0.0), scale, orient)
            off = probe.to_world(offsets[:, 0], offsets[:, 1])
            anchors = (pts[:, None, :] - off[None, :, :]).reshape(-1, 2)
            boxes = [EpsBox(eps, (float(a[0]), float(a[1])), scale, orient) for a in anchors]
            fits = np.array([_ball_holds(b, x, t) for b in boxes])
            cand = np.nonzero(fits)[0]
            if len(cand):
                R = np.concatenate([boxes[i].m_rects() for i in cand])
                clear = np.all(geom.rect_dist_to_E(R).reshape(-1, 3) > 0, axis=1)
                for i in cand[clear]:
                    if box_is_valid(boxes[i], geom):
                        return boxes[i]
            scale /= 2
    return None


def find_separated_points(box: EpsBox, geom: BoundaryGeometry, mu: float):
    """Three E points classified Interior, heights increasing by more than mu*diam."""
    pts = _corners_near(geom, box.interior_rect())
    if not len(pts):
        return None
    x1, h = box.to_local(pts)
    # points of the content band classify as Content, so they are left out
    keep = classify_local(x1, h, box.eps) == BoxRegion.INTERIOR
    pts, h = pts[keep], h[keep]
    order = np.lexsort((x1[keep], h))
    gap = mu * box.diam / box.scale
    chosen = []
    for i in order:
        if not chosen or h[i] > h[chosen[-1]] + gap:
            chosen.append(i)
            if len(chosen) == 3:
                return pts[chosen]
    return None


@dataclass(frozen=True)
class BoxWitness:
    box: EpsBox
    cube: DyadicCube
    points: np.ndarray

    def row(self, mu: float) -> list:
        b = self.box
        ys = b.height_of(self.points)
        return [self.cube.generation, self.cube.label(), b.orientation, repr(b.anchor[0]),
                repr(b.anchor[1]), repr(b.scale), repr(b.eps), repr(mu)] + [repr(float(v)) for v in ys]


def gap_box_scale(eps: float) -> float:
    """Scale (in units of the cube side) of the canonical central-gap box."""
    return max(0.55 / (1 - eps), 0.045 / eps)


def cantor_gap_box(cube: DyadicCube, eps: float) -> EpsBox:
    """Box opening upward from the central gap of a cube, enclosing its top row.

    The content straddles the lower edge of the two upper children, the side
    columns pass outside the cube, and the interior is tall enough to hold
    the corresponding boxes of the upper children, so boxes of nested cubes
    are nested and boxes of disjoint cubes do not interact.
    """
    l = cube.side
    s = gap_box_scale(eps) * l
    x0, y0 = cube.corner
    return EpsBox(eps, (x0 + 0.5 * l, y0 + 0.75 * l - 1.5 * eps * s), s, "up")


def witness_for_cube(cube: DyadicCube, geom: CantorGeometry, eps: float, mu: float,
                     finder: str = "canonical"):
    if finder == "canonical":
        if cube.generation >= geom.depth:
            return None
        box = cantor_gap_box(cube, eps)
        x = np.array(cube.corner) + np.array([0.25, 1.0]) * cube.side
        if not (box_is_valid(box, geom) and _ball_holds(box, x, math.sqrt(2) * cube.side)):
            return None
    elif finder == "scan":
        box = None
        x0, y0, x1, y1 = cube.square
        for x in ((x0, y0), (x1, y0), (x0, y1), (x1, y1)):
            box = find_box(np.array(x), cube.side, geom, eps)
            if box is not None:
                break
        if box is None:
            return None
    else:
        raise ParameterError(f"unknown finder {finder!r}")
    pts = find_separated_points(box, geom, mu)
    if pts is None:
        return None
    return BoxWitness(box, cube, pts)


def _cube_dist(a: DyadicCube, b: DyadicCube) -> float:
    p, q = a.square, b.square
    dx = max(q[0] - p[2], 0.0, p[0] - q[2])
    dy = max(q[1] - p[3], 0.0, p[1] - q[3])
    return math.hypot(dx, dy)


def build_Bd(eps: float, mu: float, geom: BoundaryGeometry, max_gen: int,
             size_window: float | None = 2.0, finder: str = "canonical") -> list[BoxWitness]:
    """Greedy box family: generation-major, path-lexicographic scan with exclusion.

    A witness for Q is rejected when an admitted Q' has
    ``diam M_Q / diam M_Q'`` within ``[1/size_window, size_window]`` and
    ``dist(Q, Q') <= 10 (l(Q) + l(Q'))``.  ``size_window=None`` uses
    ``100 / mu**2``.
    """
    if not (0 < eps < 1 and 0 < mu < 1):
        raise ParameterError("eps and mu must lie in (0, 1)")
    if not isinstance(geom, CantorGeometry):
        return []
    win = 100.0 / mu**2 if size_window is None else float(size_window)
    out: list[BoxWitness] = []
    for cube in geom.all_cubes(max_gen):
        w = witness_for_cube(cube, geom, eps, mu, finder)
        if w is None:
            continue
        blocked = False
        for v in out:
            r = w.box.diam / v.box.diam
            if 1 / win <= r <= win and _cube_dist(cube, v.cube) <= 10 * (cube.side + v.cube.side):
                blocked = True
                break
        if not blocked:
            out.append(w)
    return out


def write_witness_csv(path, witnesses, mu: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["gen", "path", "orientation", "anchor_x", "anchor_y", "scale", "eps", "mu", "p1y", "p2y", "p3y"])
        for wt in witnesses:
            w.writerow(wt.row(mu))
