import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cantorlab.errors import CoverageError, EmptySampleError, ParameterError
from cantorlab.functionals import (BoundaryFunction, check_maximality, coverage_profile, disc_pattern,
                                   hajlasz_witness, lipschitz_constant, lp_norm, maximal_cubes, minimal_aperture,
                                   nhat_k, nt_max, nt_max_modified, pigeonhole_check, satisfies_conditions,
                                   weak_l1_bruteforce, weak_l1_norm, write_norms_csv)
from cantorlab.geometry import CantorGeometry, DyadicCube
from cantorlab.solver.wos import HarmonicMeasureTable


def weak_l1_oracle(values, weights):
    """Supremum of lam * sigma(|f| > lam) evaluated just below each level, from the definition."""
    a = np.abs(np.asarray(values, float))
    w = np.asarray(weights, float)
    best = 0.0
    for v in set(a.tolist()):
        if v > 0:
            best = max(best, v * w[a >= v].sum())
    return best


def random_piecewise(rng, n=None):
    n = n or int(rng.integers(1, 40))
    levels = rng.choice([0.0, 0.5, 1.0, 2.0, 3.5, 7.0], size=n) * rng.choice([1, -1], size=n)
    levels = np.where(rng.random(n) < 0.5, rng.normal(0, 3, n), levels)
    w = rng.dirichlet(np.ones(n))
    return BoundaryFunction(levels, w)


def test_weak_l1_examples():
    g = CantorGeometry(2)
    assert weak_l1_norm(BoundaryFunction.from_leaves(g, 1.0)) == pytest.approx(1.0, abs=1e-15)
    f = BoundaryFunction(np.array([4.0, 0.0]), np.array([0.25, 0.75]))
    assert weak_l1_norm(f) == 1.0
    assert weak_l1_bruteforce(f) == pytest.approx(1.0, abs=1e-9)
    assert weak_l1_norm(BoundaryFunction(np.zeros(3), np.ones(3) / 3)) == 0.0


def test_weak_l1_oracle_equivalence():
    rng = np.random.default_rng(7)
    for _ in range(300):
        f = random_piecewise(rng)
        v = weak_l1_norm(f)
        assert v == pytest.approx(weak_l1_oracle(f.values, f.weights), rel=1e-12, abs=1e-15)
        assert abs(v - weak_l1_bruteforce(f)) <= 1e-9


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(1e-6, 1.0)), min_size=1, max_size=30),
       st.floats(-50, 50))
def test_weak_l1_homogeneity(pairs, c):
    f = BoundaryFunction(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    assert weak_l1_norm(c * f) == pytest.approx(abs(c) * weak_l1_norm(f), rel=1e-12, abs=1e-300)


def test_weak_l1_homogeneity_exact_for_powers_of_two():
    rng = np.random.default_rng(1)
    for _ in range(50):
        f = random_piecewise(rng)
        for c in (2.0, -0.5, 8.0):
            assert weak_l1_norm(c * f) == abs(c) * weak_l1_norm(f)


@given(st.lists(st.tuples(st.floats(-100, 100), st.floats(1e-6, 1.0)), min_size=1, max_size=30))
def test_weak_l1_below_l1(pairs):
    f = BoundaryFunction(np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    assert weak_l1_norm(f) <= lp_norm(f, 1) * (1 + 1e-12)


def test_lp_examples():
    g = CantorGeometry(3)
    assert lp_norm(BoundaryFunction.from_leaves(g, 1.0), 3) == pytest.approx(1.0)
    f = BoundaryFunction(np.array([2.0, -1.0]), np.array([0.25, 0.75]))
    assert lp_norm(f, 2) == pytest.approx(math.sqrt(0.25 * 4 + 0.75 * 1))
    with pytest.raises(ParameterError):
        lp_norm(f, 0)


def test_boundary_function_validation():
    with pytest.raises(ParameterError):
        BoundaryFunction(np.array([1.0, np.nan]), np.array([0.5, 0.5]))
    with pytest.raises(ParameterError):
        BoundaryFunction(np.array([1.0]), np.array([0.5, 0.5]))


def test_hajlasz_examples(rng):
    P = rng.uniform(0, 1, size=(200, 2))
    g = hajlasz_witness(P, np.full(200, 3.0))
    assert np.all(g.values == 0)
    f = 0.6 * np.sin(P[:, 0]) + 0.8 * P[:, 1]   # 1-Lipschitz
    assert np.all(hajlasz_witness(P, f).values <= 1 + 1e-12)


def test_hajlasz_pair_inequality_bruteforce(rng):
    P = rng.uniform(0, 1, size=(1000, 2))
    v = rng.normal(size=1000)
    g = hajlasz_witness(P, v).values
    d = np.hypot(P[:, None, 0] - P[None, :, 0], P[:, None, 1] - P[None, :, 1])
    lhs = np.abs(v[:, None] - v[None, :])
    assert np.all(lhs <= d * (g[:, None] + g[None, :]) * (1 + 1e-12))
    with pytest.raises(ParameterError):
        hajlasz_witness(np.zeros((2, 2)), [0.0, 1.0])


def test_lipschitz_examples(geom1):
    C = geom1.corner_points()
    assert lipschitz_constant(C, np.full(len(C), 2.0)) == 0.0
    assert lipschitz_constant(C, C[:, 0]) == pytest.approx(1.0, abs=1e-15)
    assert lipschitz_constant(C, -3 * C[:, 0]) == pytest.approx(3.0)
    with pytest.raises(ParameterError):
        lipschitz_constant(C[:1], C[:1, 0])


def test_disc_pattern_equal_area():
    pat = disc_pattern(64)
    r = np.hypot(pat[:, 0], pat[:, 1])
    assert r.max() < 1
    for t in (0.25, 0.5, 0.75):
        assert abs(np.mean(r < math.sqrt(t)) - t) <= 1 / 64


def test_norms_csv(tmp_path):
    p = tmp_path / "n.csv"
    write_norms_csv(p, [("weak", 1, 0.5)])
    assert p.read_text().splitlines()[0] == "name,p,value"


# ---------------------------------------------------------------- maximal functions

def test_nt_max_constant(geom2):
    P = np.array([[0.5, 0.5], [0.5, 0.6], [-0.2, 0.3]])
    assert nt_max((P, np.full(3, 2.5)), (0.0, 0.0), 2.0, 5.0, geom2) == 2.5
    with pytest.raises(EmptySampleError):
        nt_max((P, np.ones(3)), (0.0, 0.0), 2.0, 1e-3, geom2)


@given(st.floats(0.2, 3.0), st.floats(0.0, 3.0))
def test_nt_max_monotone_in_aperture(a1, da):
    g = CantorGeometry(2)
    rng = np.random.default_rng(0)
    P = rng.uniform(-0.5, 1.5, size=(400, 2))
    P = P[g.in_domain(P)]
    v = rng.normal(size=len(P))
    try:
        lo = nt_max((P, v), (0.0, 0.0), a1, 3.0, g)
    except EmptySampleError:
        return
    assert lo <= nt_max((P, v), (0.0, 0.0), a1 + da, 3.0, g)


def test_nt_max_modified_examples(geom2):
    Y = np.array([[0.5, 0.5]])

    def const_field(p):
        return np.tile([0.6, 0.8], (len(p), 1))
    assert nt_max_modified(const_field, (0.0, 0.0), 2.0, 0.3, 5.0, geom2, cone_points=Y) == pytest.approx(1.0)
    # a single cone point gives the RMS over its ball
    d = geom2.dist_to_boundary(Y)[0]

    def radial(p):
        return p - 0.5
    pat = 0.3 * d * disc_pattern(64)
    rms = math.sqrt(np.mean(np.sum(pat**2, axis=1)))
    assert nt_max_modified(radial, (0.0, 0.0), 2.0, 0.3, 5.0, geom2, cone_points=Y) == pytest.approx(rms)
    with pytest.raises(ParameterError):
        nt_max_modified(radial, (0.0, 0.0), 2.0, 0.3, 5.0, geom2, cone_points=Y, radius="both")


def test_minimal_aperture_reported():
    a2 = minimal_aperture(CantorGeometry(2))
    a3 = minimal_aperture(CantorGeometry(3))
    assert 0 < a2 <= a3 < 40


def synthetic_table(depth, seed):
    rng = np.random.default_rng(seed)
    leaf = rng.integers(0, 50, size=4**depth) * rng.integers(0, 2, size=4**depth)
    leaf[rng.integers(0, 4**depth)] += 1
    return HarmonicMeasureTable.from_leaf_counts((20.0, 0.0), depth, int(leaf.sum()) + 7, seed, leaf, 7)


def test_table_additivity():
    t = synthetic_table(4, 3)
    assert t.total_hits() == t.n_walks
    for q in CantorGeometry(4).all_cubes(3):
        assert t.count(q) == sum(t.count(q.child(d)) for d in range(4))


def test_k1_family_is_root():
    fam = maximal_cubes(synthetic_table(3, 0), 1, 3)
    assert fam.cubes == [DyadicCube(0, ())]
    assert fam.covered_measure == 1.0 and fam.deficit == 0.0


@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(3, 5))
def test_family_antichain_maximal_pigeonhole(seed, k, depth):
    t = synthetic_table(depth, seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fam = maximal_cubes(t, k, depth)
    assert fam.is_antichain()
    assert check_maximality(fam)
    assert pigeonhole_check(t, k, depth) == []


def test_coverage_profile_monotone():
    t = synthetic_table(6, 11)
    prof = coverage_profile(t, 3, range(2, 7))
    assert all(b <= a for a, b in zip(prof, prof[1:]))


def test_conditions_need_ancestors():
    t = synthetic_table(3, 2)
    assert not satisfies_conditions(t, DyadicCube(0, ()), 2)
    with pytest.raises(ParameterError):
        maximal_cubes(t, 0, 3)
    with pytest.raises(ParameterError):
        maximal_cubes(t, 2, 4)


def test_nhat_k():
    t = synthetic_table(3, 5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        fam = maximal_cubes(t, 2, 3)
    zero = nhat_k({q: 0.0 for q in fam.cubes}, fam)
    assert weak_l1_norm(zero) == 0.0
    f = nhat_k({q: float(i + 1) for i, q in enumerate(fam.cubes)}, fam)
    assert np.all(f.values[:len(fam.cubes)] == np.arange(1, len(fam.cubes) + 1))
    assert f.total_measure() == pytest.approx(1.0)
    with pytest.raises(CoverageError):
        nhat_k({}, fam)
    root = maximal_cubes(t, 1, 3)
    assert np.all(nhat_k({root.cubes[0]: 0.7}, root).values == 0.7)


def test_family_csv(tmp_path):
    t = synthetic_table(3, 1)
    fam = maximal_cubes(t, 1, 3)
    fam.to_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "k,path,gen,omega_hat"
