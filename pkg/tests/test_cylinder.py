import math

import numpy as np
import pytest
from scipy import integrate

from conftest import random_config
from interdiff.configuration import Configuration, TorusBox
from interdiff.cylinder import (Constant, CoordinateBumpProduct, CylinderFunction, GaussianTest, Identity, Linear,
                                PlaneWave, Quadratic, Scalar, SmoothBump, TanhQuadratic, WindowedPlaneWave, ZeroTest,
                                carre_du_champ, generator_apply, test_function_from_spec)
from interdiff.errors import ValidationError
from interdiff.potential import PairPotential

L = 10.0
BOX = TorusBox(2, L)


def _random_inner(rng, n):
    out = []
    for _ in range(n):
        c = rng.uniform(3, 7, 2)
        kind = rng.integers(4)
        if kind == 0:
            out.append(SmoothBump(c, rng.uniform(1.5, 3.0), L, amplitude=rng.uniform(0.5, 2)))
        elif kind == 1:
            out.append(GaussianTest(c, rng.uniform(0.5, 1.0), L))
        elif kind == 2:
            out.append(CoordinateBumpProduct(c, rng.uniform(1.5, 3.0), L))
        else:
            out.append(WindowedPlaneWave(rng.integers(-2, 3, 2), c, rng.uniform(2, 3.5), L, phase=rng.uniform(0, 6)))
    return out


def _random_F(seed):
    rng = np.random.default_rng(seed)
    N = int(rng.integers(1, 4))
    Q = rng.normal(size=(N, N)) * 0.3
    return CylinderFunction(TanhQuadratic(Q, rng.normal(size=N) * 0.5, rng.normal() * 0.2), _random_inner(rng, N))


def _instance(seed):
    F = _random_F(seed)
    rng = np.random.default_rng(seed + 1000)
    pts = rng.uniform(2, 8, (int(rng.integers(1, 8)), 2))
    return F, Configuration(BOX, pts)


def _moved(c, i, x):
    pts = c.points.copy()
    pts[i] = x
    return Configuration(c.box, pts)


@pytest.mark.parametrize("f", [SmoothBump([4, 5], 2.0, L), GaussianTest([5, 5], 0.8, L),
                               CoordinateBumpProduct([5, 4], 2.0, L), WindowedPlaneWave([1, 2], [5, 5], 3.0, L, 0.3),
                               PlaneWave([1, -1], L, 0.2)])
def test_test_function_derivatives_fd(f):
    rng = np.random.default_rng(0)
    xs = rng.uniform(2.5, 7.5, (50, 2))
    h = 1e-5
    e = np.eye(2)
    fd_grad = np.column_stack([(f.value(xs + h * e[k]) - f.value(xs - h * e[k])) / (2 * h) for k in range(2)])
    g = f.grad(xs)
    assert np.abs(fd_grad - g).max() <= 1e-6 * max(1.0, np.abs(g).max())
    h = 1e-4
    fd_lap = sum((f.value(xs + h * e[k]) - 2 * f.value(xs) + f.value(xs - h * e[k])) / h ** 2 for k in range(2))
    lap = f.laplacian(xs)
    assert np.abs(fd_lap - lap).max() <= 1e-6 * max(1.0, np.abs(lap).max())


def test_test_function_integrals():
    R = 2.0
    radial = integrate.quad(lambda r: 2 * math.pi * r * math.e * math.exp(-1 / (1 - r * r / R ** 2)), 0, R,
                            epsabs=1e-13, epsrel=1e-13)[0]
    # the midpoint rule converges faster than any power on C-infinity bumps; 256 points give ~1e-9
    assert SmoothBump([5, 5], R, L).integral() == pytest.approx(radial, rel=1e-8)
    assert GaussianTest([5, 5], 0.8, L).integral() == pytest.approx(math.pi * 0.64, rel=1e-10)
    assert GaussianTest([5, 5], 0.8, L).integral_sq() == pytest.approx(math.pi * 0.32, rel=1e-10)
    one_d = integrate.quad(lambda t: math.e * math.exp(-1 / (1 - t * t / R ** 2)), -R, R, epsabs=1e-13)[0]
    assert CoordinateBumpProduct([5, 5], R, L).integral() == pytest.approx(one_d ** 2, rel=1e-8)
    w = PlaneWave([1, 0], L)
    assert w.integral() == 0.0
    assert w.integral_sq() == pytest.approx(L * L / 2)
    # midpoint rule agrees with the closed form
    from interdiff.cylinder import torus_integral
    assert torus_integral(lambda x: w.value(x) ** 2, L, 2) == pytest.approx(L * L / 2, rel=1e-12)


def test_periodic_support():
    f = SmoothBump([0.5, 0.5], 1.0, L)
    assert f.value(np.array([[9.8, 0.5]]))[0] == pytest.approx(f.value(np.array([[-0.2, 0.5]]))[0])
    assert f.value(np.array([[5.0, 5.0]]))[0] == 0.0
    with pytest.raises(ValidationError):
        SmoothBump([0, 0], 6.0, L)
    with pytest.raises(ValidationError):
        GaussianTest([0, 0], 2.0, L)


def test_from_spec_round_trip():
    for f in _random_inner(np.random.default_rng(3), 8) + [PlaneWave([1, 0], L, 0.1), ZeroTest(2, L)]:
        g = test_function_from_spec(f.to_spec(), 2, L)
        xs = np.random.default_rng(1).uniform(0, L, (20, 2))
        assert np.array_equal(f.value(xs), g.value(xs))
    with pytest.raises(ValidationError):
        test_function_from_spec({"kind": "nope"}, 2, L)


def test_eval_examples():
    f = SmoothBump([5, 5], 2.0, L)
    assert CylinderFunction(Quadratic([[2.0]], [1.0]), [f]).eval(Configuration(BOX)) == 0.0
    assert CylinderFunction(TanhQuadratic([[0.0]], c0=0.7), [f]).eval(Configuration(BOX)) == math.tanh(0.7)
    x0 = np.array([[5.5, 4.0]])
    assert CylinderFunction(Identity(), [f]).eval(Configuration(BOX, x0)) == f.value(x0)[0]
    pts = np.array([[5.5, 4.0], [4.2, 5.1]])
    F = CylinderFunction(TanhQuadratic([[0.0]], [1.0]), [f])
    assert F.eval(Configuration(BOX, pts)) == pytest.approx(math.tanh(f.value(pts[:1])[0] + f.value(pts[1:])[0]),
                                                            rel=1e-15)


def test_grad_examples():
    f = GaussianTest([5, 5], 0.8, L)
    c = Configuration(BOX, [[5.3, 4.6], [0.5, 0.5]])
    F = CylinderFunction(Identity(), [f])
    assert np.array_equal(F.grad_x(c, 0), f.grad(c.points[:1])[0])
    S = CylinderFunction(Quadratic([[1.0]]), [SmoothBump([5, 5], 1.0, L)])
    assert np.array_equal(S.grad_x(c, 1), np.zeros(2))


def test_chain_rule_fd_random_instances():
    h = 1e-5
    for seed in range(100):
        F, c = _instance(seed)
        i = seed % c.n
        e = np.eye(2)
        x = c.points[i]
        fd = np.array([(F.eval(_moved(c, i, x + h * e[k])) - F.eval(_moved(c, i, x - h * e[k]))) / (2 * h)
                       for k in range(2)])
        g = F.grad_x(c, i)
        assert np.abs(fd - g).max() <= 1e-6 * max(1.0, np.abs(g).max())
        hl = 1e-4
        f0 = F.eval(c)
        fd_lap = sum((F.eval(_moved(c, i, x + hl * e[k])) - 2 * f0 + F.eval(_moved(c, i, x - hl * e[k]))) / hl ** 2
                     for k in range(2))
        lap = F.laplacians(c)[i]
        assert abs(fd_lap - lap) <= 1e-6 * max(1.0, abs(lap))


def test_grads_added_matches_added_point():
    F, c = _instance(7)
    xs = np.random.default_rng(0).uniform(2, 8, (5, 2))
    got = F.grads_added(c, xs)
    for q, x in enumerate(xs):
        cx = Configuration(BOX, np.vstack([c.points, x]))
        assert np.allclose(got[q], F.grad_x(cx, c.n), rtol=1e-13, atol=1e-15)


def test_generator_examples(bump):
    f = SmoothBump([5, 5], 2.0, L)
    c = random_config(BOX, 6, seed=1)
    F = CylinderFunction(Identity(), [f])
    assert generator_apply(F, c, PairPotential.zero()) == pytest.approx(-np.sum(f.laplacian(c.points)), rel=1e-14)
    assert CylinderFunction(Constant(3.0), [f]).generator_apply(c, bump) == 0.0
    # one particle, g(u) = u^2/2: -(|grad f|^2 + f Laplacian f)
    x0 = np.array([[5.4, 5.7]])
    one = Configuration(BOX, x0)
    Q = CylinderFunction(Quadratic([[1.0]]), [f])
    hand = -(np.sum(f.grad(x0) ** 2) + f.value(x0)[0] * f.laplacian(x0)[0])
    assert Q.generator_apply(one, bump) == pytest.approx(hand, rel=1e-14)
    assert generator_apply(Q, Configuration(BOX), bump) == 0.0


def test_carre_du_champ_examples(bump):
    f = SmoothBump([5, 5], 2.0, L)
    c = random_config(BOX, 6, seed=2)
    F = CylinderFunction(Identity(), [f])
    G = CylinderFunction(Constant(1.0), [f])
    assert carre_du_champ(F, G, c, bump) == 0.0
    assert carre_du_champ(F, F, c, PairPotential.zero()) == pytest.approx(np.sum(f.grad(c.points) ** 2), rel=1e-14)
    # A weights each point
    A = c.coefficients_A(bump)
    assert carre_du_champ(F, F, c, bump) == pytest.approx(np.sum(A * np.sum(f.grad(c.points) ** 2, axis=1)),
                                                          rel=1e-14)


def test_product_rule(bump):
    for seed in range(30):
        F, c = _instance(seed)
        G, _ = _instance(seed + 500)
        FG = F * G
        assert FG.eval(c) == pytest.approx(F.eval(c) * G.eval(c), rel=1e-14)
        lhs = FG.generator_apply(c, bump)
        rhs = (F.eval(c) * G.generator_apply(c, bump) + G.eval(c) * F.generator_apply(c, bump)
               - 2 * carre_du_champ(F, G, c, bump))
        assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_square_field_chain_rule(bump):
    for psi in (Scalar.tanh(), Scalar.sin()):
        for seed in range(30):
            F, c = _instance(seed)
            P = F.compose(psi)
            lhs = carre_du_champ(P, P, c, bump)
            rhs = psi.df(F.eval(c)) ** 2 * carre_du_champ(F, F, c, bump)
            assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(rhs))


def test_bounded_flags():
    f = [SmoothBump([5, 5], 2.0, L)]
    assert not CylinderFunction(Quadratic([[1.0]]), f).bounded
    assert not CylinderFunction(Linear([1.0]), f).bounded
    assert CylinderFunction(TanhQuadratic([[1.0]]), f).bounded
    assert CylinderFunction(Quadratic([[1.0]]), f).compose(Scalar.tanh()).bounded
    with pytest.raises(ValidationError):
        CylinderFunction(Identity(), [])
