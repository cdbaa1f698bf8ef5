import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cantorlab.errors import CapacityError, DomainError, LeafError, ParameterError
from cantorlab.geometry import (ROOT, BoundaryGeometry, CantorGeometry, DyadicCube, ball_B_hat,
                                brute_force_dist, build_cantor, calibrate_small_boundaries,
                                carleson_norm, children, corkscrew_point, dist_to_boundary, in_cone,
                                whitney_decompose)

paths = st.lists(st.integers(0, 3), max_size=6).map(tuple)


def test_depth_zero_is_unit_square():
    g = build_cantor(0)
    assert g.n_leaves == 1
    assert g.rects.tolist() == [[0.0, 0.0, 1.0, 1.0]]


def test_depth_one_squares_hold_a_vertex_each():
    g = build_cantor(1)
    assert g.n_leaves == 4
    assert np.all(g.rects[:, 2] - g.rects[:, 0] == 0.25)
    for v in [(0, 0), (1, 0), (0, 1), (1, 1)]:
        assert g.in_E(np.array([v], float))[0]


def test_depth_two_has_sixteen_squares():
    g = build_cantor(2)
    assert g.n_leaves == 16
    assert np.all(g.rects[:, 3] - g.rects[:, 1] == 1 / 16)


def test_depth_cap():
    with pytest.raises(CapacityError):
        build_cantor(9)


@pytest.mark.parametrize("n", range(0, 6))
def test_squares_nest_and_are_disjoint(n):
    g = CantorGeometry(n)
    r = g.rects
    # pairwise disjoint: the closed squares of one generation never touch
    if n:
        d = g.rect_dist_to_E(r)
        assert np.all(d == 0)
        gap = np.maximum(np.maximum(r[:, None, 0] - r[None, :, 2], r[None, :, 0] - r[:, None, 2]),
                         np.maximum(r[:, None, 1] - r[None, :, 3], r[None, :, 1] - r[:, None, 3]))
        np.fill_diagonal(gap, 1.0)
        assert gap.min() > 0
    # E_{n+1} inside E_n
    h = CantorGeometry(n + 1)
    assert np.all(g.in_E(h.leaf_centers))


def test_children_partition_measure(geom3):
    kids = children(ROOT, geom3)
    assert [k.path for k in kids] == [(0,), (1,), (2,), (3,)]
    assert all(k.side == 0.25 and k.measure == 0.25 for k in kids)
    q = geom3.cube((0,))
    assert [c.path for c in geom3.children(q)] == [(0, 0), (0, 1), (0, 2), (0, 3)]
    for c in geom3.all_cubes(geom3.depth - 1):
        assert math.fsum(k.measure for k in geom3.children(c)) == c.measure


def test_children_at_leaf_generation(geom2):
    with pytest.raises(LeafError):
        geom2.children(geom2.cube((0, 0)))


@given(paths)
def test_cube_center_determined_by_path(path):
    q = DyadicCube.from_path(path)
    assert q.side == 4.0 ** -len(path) == q.measure
    assert DyadicCube.from_index(q.generation, q.index) == q
    x0, y0, x1, y1 = q.square
    assert q.center == ((x0 + x1) / 2, (y0 + y1) / 2)
    if path:
        assert q.parent().contains(q)
        assert q.parent().child(path[-1]) == q


@given(paths)
def test_leaf_range_matches_containment(path):
    g = CantorGeometry(6)
    q = DyadicCube.from_path(path)
    lo, hi = g.leaf_range(q)
    assert hi - lo == 4 ** (6 - len(path))
    assert g.in_E(np.array([q.center])).sum() == (len(path) == 6)
    x0, y0, x1, y1 = q.square
    r = g.rects[lo:hi]
    assert np.all((r[:, 0] >= x0) & (r[:, 2] <= x1) & (r[:, 1] >= y0) & (r[:, 3] <= y1))


def test_dist_examples(geom1):
    assert dist_to_boundary((0.5, 0.5), geom1) == pytest.approx(0.25 * math.sqrt(2), abs=1e-15)
    with pytest.raises(DomainError):
        dist_to_boundary((0.125, 0.125), geom1)
    for n in (0, 2, 4):
        assert dist_to_boundary((20.0, 0.0), CantorGeometry(n)) == pytest.approx(19.0, abs=1e-12)


@pytest.mark.parametrize("n", [2, 5])
def test_dist_matches_brute_force(n, rng):
    g = CantorGeometry(n)
    P = rng.uniform(-1, 2, size=(3000, 2))
    P = P[g.in_domain(P)]
    assert np.allclose(g.dist_to_boundary(P), brute_force_dist(P, g.rects, g.r_out), rtol=0, atol=1e-12)


def test_outer_circle_distance():
    g = CantorGeometry(1)
    assert dist_to_boundary((95.0, 0.0), g) == pytest.approx(5.0)
    with pytest.raises(DomainError):
        dist_to_boundary((101.0, 0.0), g)


def test_ball_B_hat_examples(geom3):
    b = ball_B_hat(ROOT, 0.3, geom3)
    assert b.center == (0.5, 0.5) and b.radius == pytest.approx(0.3)
    with pytest.raises(ParameterError):
        ball_B_hat(ROOT, 0.36)
    assert ball_B_hat(DyadicCube.from_path((1, 2)), 0.3).radius == pytest.approx(0.01875)


def test_ball_B_hat_disjoint_up_to_depth_six():
    g = CantorGeometry(6)
    for q in g.all_cubes(5):
        b = ball_B_hat(q, 0.3)
        assert g.dist_to_E(np.array([b.center]))[0] > b.radius


def test_corkscrew_example(geom3):
    b = corkscrew_point((0.0, 0.0), 1.0, geom3)
    c = np.array(b.center)
    assert np.hypot(*c) + b.radius <= 1.0
    assert geom3.dist_to_E(c[None])[0] >= b.radius
    # the ball at (0.375, 0.375) of radius 0.1 sits in the central gap of E_1
    assert CantorGeometry(1).dist_to_E(np.array([[0.375, 0.375]]))[0] >= 0.1


def test_corkscrew_constant_over_dyadic_scales():
    g = CantorGeometry(6)
    x = g.rects[0, :2]
    ratios = []
    for k in range(5):
        r = 2.0 ** -k
        b = corkscrew_point(x, r, g)
        assert np.hypot(*(np.array(b.center) - x)) + b.radius <= r + 1e-12
        assert g.dist_to_E(np.array([b.center]))[0] >= b.radius
        ratios.append(b.radius / r)
    assert min(ratios) >= 0.05


def test_carleson_examples():
    g = CantorGeometry(4)
    for k in range(4):
        assert carleson_norm(g.all_cubes(k)) == pytest.approx(k + 1)
    assert carleson_norm([DyadicCube.from_path((2, 1))]) == 1.0
    assert carleson_norm(g.cubes(3)) == pytest.approx(1.0)
    assert carleson_norm([]) == 0.0


def _carleson_oracle(family, depth):
    best = 0.0
    fam = {q.path for q in family}
    for R in CantorGeometry(depth).all_cubes():
        s = sum(4.0 ** -len(p) for p in fam if p[:R.generation] == R.path) / R.measure
        best = max(best, s)
    return best


@given(st.sets(paths.filter(lambda p: len(p) <= 3), max_size=12))
def test_carleson_matches_direct_sum(fam):
    family = [DyadicCube.from_path(p) for p in fam]
    assert carleson_norm(family) == pytest.approx(_carleson_oracle(family, 3), rel=1e-12)


def test_in_cone_examples(geom3):
    assert not in_cone((0.0, 0.0), (0.0, 0.0), 2.0, 10.0, geom3)
    y = (0.5, 0.5)
    d = geom3.dist_to_boundary(np.array([y]))[0]
    alpha = math.hypot(*y) / d        # (1 + alpha) d > |y| by exactly d
    assert in_cone((0.0, 0.0), y, alpha, 10.0, geom3)
    assert not in_cone((0.0, 0.0), y, math.hypot(*y) / d - 1.01, 10.0, geom3)


@given(st.floats(0.1, 5.0), st.floats(0.0, 5.0), st.floats(-0.5, 1.5), st.floats(-0.5, 1.5))
def test_in_cone_monotone_in_aperture(a1, da, x, y):
    g = CantorGeometry(2)
    if in_cone((0.0, 0.0), (x, y), a1, 3.0, g):
        assert in_cone((0.0, 0.0), (x, y), a1 + da, 3.0, g)


def test_whitney_far_window_is_regular():
    g = CantorGeometry(0)
    W = whitney_decompose(g, (10.0, 10.0, 12.0, 12.0))
    sides = np.array([c.side for c in W.cubes])
    assert sides.max() / sides.min() <= 2
    assert W.uncovered_area == 0.0


def test_whitney_properties(geom2):
    W = whitney_decompose(geom2, (-0.5, -0.5, 1.5, 1.5), min_side=1 / 256)
    R = np.array([c.scaled(10) for c in W.cubes])
    assert not geom2.rect_meets_E(R).any()
    for c in W.cubes:
        assert math.sqrt(2) * c.side < c.dist / 20
    assert W.d0 <= 1024 and W.lam_needed <= W.lam
    # sampled window points lie in exactly one cube (or the reported boundary collar)
    rng = np.random.default_rng(1)
    P = rng.uniform(-0.5, 1.5, size=(4000, 2))
    P = P[geom2.dist_to_E(P) > 0.2]
    assert np.all(W.locate(P) == 1)


def test_small_boundaries_calibrated_uniformly():
    Cs = [calibrate_small_boundaries(CantorGeometry(n)) for n in (2, 4, 6)]
    assert all(1.0 <= C < 10 for C in Cs)
    assert max(Cs) / min(Cs) <= 2


def test_geometry_json_export(geom1):
    data = json.loads(geom1.to_json())
    assert data["depth"] == 1
    assert len(data["squares"]) == 4
    assert {"path", "x0", "y0", "side"} <= set(data["squares"][0])


def test_boundary_geometry_generic_rects():
    g = BoundaryGeometry(np.array([[0.0, 0.0, 1.0, 1.0]]), r_out=10)
    assert g.dist_to_boundary(np.array([[2.0, 0.5]]))[0] == pytest.approx(1.0)
