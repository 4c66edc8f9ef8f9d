import csv
import math

import numpy as np
import pytest

from interdiff.configuration import Configuration, TorusBox
from interdiff.cylinder import GaussianTest, SmoothBump, ZeroTest, torus_integral
from interdiff.dynamics import FREE, DynamicsSpec, evolve_many
from interdiff.errors import BoxMismatch, FitWindowTooNoisy, ValidationError
from interdiff.gibbs import SamplerParams, sample_ensemble
from interdiff.potential import PairPotential
from interdiff.rng import stream
from interdiff.scaling import (OUReference, ScalingSpec, autocovariance, fit_decay_rate, fluctuation_field,
                               fluctuation_matrix, gaussianity_test, increment_moment_check, mode_autocorrelation,
                               normalized_mode, simulate_ou_reference, write_fluctuations_csv)

PHI = GaussianTest([0.5, 0.5], 0.1, 1.0)


def test_spec_validation():
    with pytest.raises(ValidationError):
        ScalingSpec(0.0, [PHI])
    with pytest.raises(ValidationError):
        ScalingSpec(0.5, [PHI], z=0.5)
    with pytest.raises(ValidationError):
        ScalingSpec(0.5, [GaussianTest([0.5, 0.5], 0.1, 2.0)])
    assert ScalingSpec(0.25, [PHI]).micro_side == 4.0


def test_fluctuation_field_examples():
    spec = ScalingSpec(0.25, [PHI, ZeroTest(2, 1.0)])
    empty = Configuration(TorusBox(2, 4.0))
    v = fluctuation_field(empty, spec, 1.3).values
    assert v[0] == -(0.25 ** -1) * 1.3 * PHI.integral()
    assert v[1] == 0.0
    c = Configuration(TorusBox(2, 4.0), [[2.0, 2.0], [0.4, 3.1]])
    manual = 0.25 * (PHI.value(np.array([[0.5, 0.5]]))[0] + PHI.value(np.array([[0.1, 0.775]]))[0]) \
        - 4.0 * 1.3 * PHI.integral()
    assert fluctuation_field(c, spec, 1.3).values[0] == pytest.approx(manual, rel=1e-14)
    with pytest.raises(BoxMismatch):
        fluctuation_field(Configuration(TorusBox(2, 5.0)), spec, 1.0)


@pytest.fixture(scope="module")
def poisson_by_eps():
    out = {}
    for eps in (0.5, 0.25, 0.125):
        L = 1 / eps
        out[eps] = sample_ensemble(SamplerParams(z=1.0, n_samples=1000, seed=61), TorusBox(2, L),
                                   PairPotential.zero())
    return out


def test_centering_and_eps_consistency(poisson_by_eps):
    target = PHI.integral_sq()
    for eps, e in poisson_by_eps.items():
        rho = e.counts.mean() / e.box.volume
        X = fluctuation_matrix(e.samples, ScalingSpec(eps, [PHI]), rho)[:, 0]
        assert abs(X.mean()) < 4 * X.std(ddof=1) / math.sqrt(len(X))
        # SE of a sample variance: var * sqrt((2 + excess kurtosis) / n)
        kurt = np.mean((X - X.mean()) ** 4) / X.var() ** 2 - 3
        se = target * math.sqrt((2 + kurt) / len(X))
        assert abs(X.var(ddof=1) - target) < 4 * se


def test_gaussianity_pass_and_negative_control(poisson_by_eps):
    e = poisson_by_eps[0.125]
    rho = e.counts.mean() / e.box.volume
    # zero-mean modes: the third cumulant eps * integral(f^3) vanishes
    modes = [normalized_mode([1, 0]), normalized_mode([1, 1], kind="sin")]
    X = fluctuation_matrix(e.samples, ScalingSpec(0.125, modes), rho)
    for rep in gaussianity_test(X, 1.0, [1.0, 1.0]):
        assert rep["passed"]
        assert len(rep["cf_deviation_se"]) == 5
        assert abs(rep["skewness"]) < 4 * rep["skewness_se"]
    # a narrow bump keeps its shot-noise skewness eps * int f^3 / (int f^2)^(3/2) at this scale
    Y = fluctuation_matrix(e.samples, ScalingSpec(0.125, [PHI]), rho)
    skew = gaussianity_test(Y, 1.0, [PHI.integral_sq()])[0]["skewness"]
    assert skew > 0.2
    wide = SmoothBump([0.5, 0.5], 0.3, 1.0)
    p = PairPotential.gaussian_bump(5.0, 0.1)
    raw = sample_ensemble(SamplerParams(z=1.0, n_samples=1000, seed=62), TorusBox(2, 1.0), p)
    rho = raw.counts.mean()
    Y = fluctuation_matrix(raw.samples, ScalingSpec(1.0, [wide]), rho)
    bad = gaussianity_test(Y, 1.0, [wide.integral_sq()])[0]
    assert not bad["passed"]
    assert abs(bad["excess_kurtosis"]) > 4 * bad["excess_kurtosis_se"]


def test_normalized_mode():
    for kind in ("cos", "sin"):
        m = normalized_mode([1, 0], 1.0, kind)
        assert torus_integral(lambda x: m.value(x) ** 2, 1.0, 2) == pytest.approx(1.0, rel=1e-12)
    s = normalized_mode([0, 1], 2.0, "sin")
    assert s.value(np.array([[0.0, 0.5]]))[0] == pytest.approx(math.sqrt(0.5), rel=1e-12)


def test_ou_reference_coefficients():
    ref = OUReference(2.0, [[1, 0], [1, 1]], diffusivity=0.5)
    q2 = np.array([4 * math.pi ** 2, 8 * math.pi ** 2])
    assert np.allclose(ref.rates, 0.5 * q2 / 2.0)
    assert np.allclose(ref.stationary_variance, 2.0)


def test_ou_stationary_variance():
    ref = OUReference(1.0, [[1, 0]])
    dt = 0.5 / ref.rates[0]
    _, x = simulate_ou_reference(ref, dt, dt * 100000, seed=1)
    assert abs(x[:, 0].var() - 1.0) < 0.02


def test_ou_zero_noise_exact():
    ref = OUReference(0.7, [[1, 0], [2, 1]])
    t, x = simulate_ou_reference(ref, 1e-3, 0.05, noise=False)
    assert np.allclose(x, np.exp(-np.outer(t, ref.rates)), rtol=1e-12, atol=0)


def test_ou_autocovariance_and_fit():
    ref = OUReference(1.0, [[1, 0]])
    lam = ref.rates[0]
    dt = 0.002
    series = [simulate_ou_reference(ref, dt, 20.0, seed=s)[1][:, 0] for s in range(20)]
    max_lag = int(round(0.05 / dt))
    ac = autocovariance(series, max_lag)
    for lag in (5, 10, 20):
        assert ac[lag] == pytest.approx(math.exp(-lam * lag * dt), rel=0.05)
    fit = fit_decay_rate(series, dt, max_lag)
    assert abs(fit["rate"] / lam - 1) < 0.05
    assert fit["se"] > 0 and fit["r2"] > 0.99
    lo, hi = fit["lag_window"]
    assert math.exp(-lam * lo) <= 0.95 and math.exp(-lam * hi) >= 0.15


def test_fit_rejects_noise():
    rng = stream(0, 0)
    series = [rng.standard_normal(2000) for _ in range(5)]
    with pytest.raises(FitWindowTooNoisy):
        fit_decay_rate(series, 0.01, 50)


@pytest.fixture(scope="module")
def free_runs():
    box = TorusBox(2, 4.0)
    e = sample_ensemble(SamplerParams(z=1.0, n_samples=20, seed=63), box, PairPotential.zero())
    return evolve_many(e.samples, DynamicsSpec(FREE, 1e-3, 2.0, record_every=1, seed=64), PairPotential.zero())


def test_increment_moments_free(free_runs):
    f = SmoothBump([0.5, 0.5], 0.4, 1.0)
    lags = [1e-3 / 16 * s for s in (1, 2, 4, 8)]
    out = increment_moment_check(free_runs, f, 0.25, lags)
    assert 1.8 <= out["slope"] <= 2.2
    assert len(out["m4"]) == 4
    with pytest.raises(ValidationError):
        increment_moment_check(free_runs, ZeroTest(2, 1.0), 0.25, lags)
    with pytest.raises(ValidationError):
        increment_moment_check(free_runs, f, 0.25, [1e-5, 1e-4])


def test_mode_autocorrelation_contract(free_runs):
    with pytest.raises(ValidationError):
        mode_autocorrelation(free_runs, [0, 0], 0.25, 0.01)
    fit = mode_autocorrelation(free_runs, [1, 0], 0.25, 0.02)
    assert fit["dynamics_kind"] == FREE and fit["epsilon"] == 0.25
    assert fit["q2"] == pytest.approx(4 * math.pi ** 2)
    assert {"rate", "se", "r2", "k"} <= set(fit)


def test_write_fluctuations_csv(tmp_path):
    X = np.arange(6.0).reshape(3, 2)
    write_fluctuations_csv(tmp_path / "f.csv", X)
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["sample", "f0", "f1"] and len(rows) == 4
