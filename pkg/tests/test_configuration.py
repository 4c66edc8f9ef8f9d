import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from interdiff import _kernels as K
from interdiff.configuration import CellList, Configuration, TorusBox, cells_per_side
from interdiff.errors import NonFiniteCoefficient, TooFewPoints, ValidationError
from interdiff.potential import PairPotential

from conftest import random_config

E1 = math.exp(-1.0)


def brute_energy(c, x, p, exclude=-1):
    return float(K.local_energy_brute(np.asarray(x, float), exclude, c.points, c.n, float(c.box.L), c.box.d,
                                      *p.kernel_args()))


def fsum_energy(c, x, p, exclude=-1):
    terms = [p.evaluate_min_image(x, y, c.box.L) for j, y in enumerate(c.points) if j != exclude]
    return math.fsum(terms)


def test_box_validation():
    with pytest.raises(ValidationError):
        TorusBox(4, 1.0)
    with pytest.raises(ValidationError):
        TorusBox(2, 0.0)
    assert TorusBox(3, 2.0).volume == 8.0


def test_points_are_wrapped(box10):
    c = Configuration(box10, [[10.0, -0.5], [23.0, 4.0]])
    assert np.all((c.points >= 0) & (c.points < 10))
    assert c.points[0] == pytest.approx([0.0, 9.5])
    with pytest.raises(ValueError):
        c.points[0, 0] = 1.0


def test_local_energy_examples(box10, bump):
    assert Configuration(box10).local_energy([1, 1], bump) == 0.0
    c = Configuration(box10, [[2.0, 3.0]])
    assert c.local_energy([3.0, 3.0], bump) == pytest.approx(E1, rel=1e-15)


@pytest.mark.parametrize("seed", range(50))
def test_cell_list_matches_brute_force_exactly(seed, bump):
    rng = np.random.default_rng(seed)
    box = TorusBox(int(rng.integers(1, 4)), float(rng.uniform(8.5, 14.0)))
    c = random_config(box, int(rng.integers(0, 21)), seed)
    for _ in range(5):
        x = rng.uniform(0, box.L, box.d)
        assert c.local_energy(x, bump) == brute_energy(c, x, bump)
    for i in range(c.n):
        e = c.local_energy(c.points[i], bump, exclude=i)
        assert e == brute_energy(c, c.points[i], bump, exclude=i)
        assert e == pytest.approx(fsum_energy(c, c.points[i], bump, exclude=i), abs=1e-14)
        assert c.coefficient_A(i, bump) == math.exp(e)
    if c.n >= 2:
        pts = c.points
        dx = pts[:, None] - pts[None]
        dx -= box.L * np.floor(dx / box.L + 0.5)
        r = np.sqrt((dx ** 2).sum(-1))
        r[np.diag_indices(c.n)] = np.inf
        assert c.min_pair_distance() == r.min()


def test_coefficient_A_examples(box10, bump):
    c = Configuration(box10, [[1.0, 1.0], [2.0, 1.0]])
    assert c.coefficient_A(0, bump) == pytest.approx(math.exp(E1), rel=1e-15)
    assert c.coefficient_A(0, PairPotential.zero()) == 1.0
    iso = Configuration(box10, [[1.0, 1.0], [6.0, 6.0]])
    assert iso.coefficient_A(0, bump) == 1.0
    assert np.allclose(c.coefficients_A(bump), math.exp(E1), rtol=1e-15)


def test_coefficient_A_inverse_identity(bump):
    c = random_config(TorusBox(2, 9.0), 30, 3)
    for i in range(c.n):
        assert c.coefficient_A(i, bump) * math.exp(-c.local_energy(c.points[i], bump, exclude=i)) == pytest.approx(1.0, abs=1e-12)


def test_coefficient_overflow(box10):
    huge = PairPotential.gaussian_bump(800.0, 1.0)
    c = Configuration(box10, [[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NonFiniteCoefficient):
        c.coefficient_A(0, huge)
    with pytest.raises(NonFiniteCoefficient):
        c.coefficients_A(huge)


def test_interaction_sums_and_forces(bump):
    c = random_config(TorusBox(2, 9.0), 25, 4)
    s = c.interaction_sums(bump)
    for i in range(c.n):
        assert s[i] == pytest.approx(c.local_energy(c.points[i], bump, exclude=i), abs=1e-14)
    f = c.forces(bump)
    for i in range(c.n):
        dx = c.box.min_image(c.points[i] - np.delete(c.points, i, axis=0))
        assert f[i] == pytest.approx(-bump.gradient(dx).sum(axis=0), abs=1e-13)
    # Newton's third law
    assert np.abs(f.sum(axis=0)).max() < 1e-12


@given(st.floats(-20, 20), st.floats(-20, 20))
@settings(max_examples=30, deadline=None)
def test_translation_invariance(a, b):
    p = PairPotential.gaussian_bump(1.0, 1.0)
    c = random_config(TorusBox(2, 9.0), 15, 5)
    t = c.translated([a, b])
    for i in range(c.n):
        assert t.local_energy(t.points[i], p, exclude=i) == pytest.approx(
            c.local_energy(c.points[i], p, exclude=i), abs=1e-12)


def _assert_cells_consistent(c, cutoff):
    cl = c.cells(cutoff)
    fresh = CellList(c.box, cutoff, c.points)
    assert np.array_equal(cl.cell_of, fresh.cell_of)
    assert np.array_equal(cl.starts, fresh.starts)
    assert np.array_equal(cl.order, fresh.order)


def test_incremental_cells_match_rebuild(bump):
    rng = np.random.default_rng(6)
    c = random_config(TorusBox(2, 12.0), 10, 6)
    c.cells(bump.cutoff)
    for step in range(200):
        u = rng.random()
        if u < 0.4 or c.n == 0:
            c.add(rng.uniform(0, 12, 2))
        elif u < 0.7:
            c.remove(int(rng.integers(c.n)))
        else:
            i = int(rng.integers(c.n))
            c.move(i, c.points[i] + rng.normal(size=2))
        _assert_cells_consistent(c, bump.cutoff)


def test_insertion_order_preserved(box10):
    c = Configuration(box10, [[1, 1], [2, 2], [3, 3]])
    c.add([4, 4])
    c.remove(1)
    assert c.points.tolist() == [[1, 1], [3, 3], [4, 4]]


def test_cells_per_side():
    assert cells_per_side(10.0, 4.0) == 2
    assert cells_per_side(10.0, 0.0) == 1
    assert cells_per_side(10.0, 20.0) == 1


def test_conditional_energy(box10, bump):
    lo, hi = [0, 0], [5, 5]
    assert Configuration(box10).conditional_energy(lo, hi, bump) == 0.0
    both = Configuration(box10, [[2, 2], [3, 2]])
    assert both.conditional_energy(lo, hi, bump) == pytest.approx(E1)
    cross = Configuration(box10, [[4.5, 2], [5.5, 2]])
    assert cross.conditional_energy(lo, hi, bump) == pytest.approx(E1)
    assert cross.window_decomposition(lo, hi, bump) == pytest.approx((0.0, E1))
    outside = Configuration(box10, [[7, 7], [8, 7]])
    assert outside.conditional_energy(lo, hi, bump) == 0.0
    assert Configuration(box10, [[2, 2]]).conditional_energy([9, 9], [9.5, 9.5], bump) == 0.0


@pytest.mark.parametrize("seed", range(10))
def test_conditional_energy_decomposition(seed, bump):
    c = random_config(TorusBox(2, 10.0), 40, seed)
    lo, hi = [1.0, 2.0], [6.0, 5.5]
    e_in, w = c.window_decomposition(lo, hi, bump)
    mask = c.window_mask(lo, hi)
    pts = c.points
    inner = math.fsum(bump.evaluate_min_image(pts[i], pts[j], 10.0)
                      for i in range(c.n) for j in range(i + 1, c.n) if mask[i] and mask[j])
    cross = math.fsum(bump.evaluate_min_image(pts[i], pts[j], 10.0)
                      for i in range(c.n) for j in range(c.n) if mask[i] and not mask[j])
    assert e_in == pytest.approx(inner, abs=1e-12)
    assert w == pytest.approx(cross, abs=1e-12)
    assert c.conditional_energy(lo, hi, bump) == pytest.approx(inner + cross, abs=1e-12)


def test_min_pair_distance_examples(box10):
    assert Configuration(box10, [[1, 1], [2, 1]]).min_pair_distance() == 1.0
    assert Configuration(box10, [[1, 1], [1, 1]]).min_pair_distance() == 0.0
    assert Configuration(box10, [[0.2, 1], [9.7, 1]]).min_pair_distance() == pytest.approx(0.5)
    with pytest.raises(TooFewPoints):
        Configuration(box10, [[1, 1]]).min_pair_distance()


def test_snapshot_round_trip(box10):
    c = random_config(box10, 17, 9)
    text = c.to_text()
    assert text.splitlines()[0] == "2 10.0 17"
    assert Configuration.from_text(text) == c
    with pytest.raises(ValidationError):
        Configuration.from_text("2 10.0 3\n1 2\n")
