"""Density fluctuation fields, their Gaussian limit and the limiting Ornstein-Uhlenbeck modes.

A microscopic configuration on a torus of side L = side/epsilon is mapped to the
macroscopic torus of side ``side`` by x -> epsilon x, and paired with a test
function f as

    <f, gamma_eps> = eps^{d/2} sum_x f(eps x) - eps^{-d/2} rho integral(f).

Time is rescaled diffusively: macroscopic time t is microscopic time t / eps^2.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .configuration import Configuration
from .cylinder import PlaneWave, TestFunction
from .errors import BoxMismatch, FitWindowTooNoisy, ValidationError
from .rng import stream
from .stats import linear_fit


@dataclass
class ScalingSpec:
    epsilon: float
    test_functions: list
    z: float = 1.0
    side: float = 1.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValidationError("epsilon must lie in (0, 1]")
        if self.z != 1.0:
            raise ValidationError("scaling experiments run at activity z = 1")
        for f in self.test_functions:
            if not math.isclose(f.L, self.side, rel_tol=0, abs_tol=1e-12):
                raise ValidationError("test functions must live on the macroscopic torus")

    @property
    def micro_side(self) -> float:
        return self.side / self.epsilon

    def integrals(self) -> np.ndarray:
        return np.array([f.integral() for f in self.test_functions])


@dataclass
class FluctuationSample:
    values: np.ndarray
    time: float | None = None


def _check_box(L, spec: ScalingSpec):
    if abs(L * spec.epsilon - spec.side) > 1e-12:
        raise BoxMismatch(f"box side {L} times epsilon {spec.epsilon} is not {spec.side}")


def fluctuation_field(c: Configuration, spec: ScalingSpec, rho: float, time=None,
                      integrals=None) -> FluctuationSample:
    """Centered, scaled pairing of ``c`` with every test function of ``spec``."""
    _check_box(c.box.L, spec)
    eps, d = spec.epsilon, c.box.d
    ints = spec.integrals() if integrals is None else integrals
    scaled = c.points * eps
    vals = np.array([f.pairing(scaled) for f in spec.test_functions])
    return FluctuationSample(eps ** (d / 2) * vals - eps ** (-d / 2) * rho * ints, time)


def fluctuation_matrix(configs, spec: ScalingSpec, rho: float) -> np.ndarray:
    """Stack of fluctuation values, shape (n_configs, n_test_functions)."""
    ints = spec.integrals()
    return np.array([fluctuation_field(c, spec, rho, integrals=ints).values for c in configs])


def gaussianity_test(samples, c_hat: float, integrals_sq, n_grid: int = 5, threshold: float = 4.0) -> list:
    """Compare each column of ``samples`` with N(0, c_hat * integral f^2).

    The empirical characteristic function is evaluated at s such that the
    target modulus exp(-s^2 sigma^2 / 2) runs over exp(-k/4), k = 1..n_grid,
    where it is well resolved.  Deviations are in units of the per-point SE.
    """
    X = np.asarray([s.values if isinstance(s, FluctuationSample) else s for s in samples], dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = len(X)
    out = []
    for j in range(X.shape[1]):
        x = X[:, j]
        var_t = c_hat * float(integrals_sq[j])
        sig = math.sqrt(var_t)
        s_grid = np.sqrt(np.arange(1, n_grid + 1) / 2.0) / sig
        devs = []
        for s in s_grid:
            cs, sn = np.cos(s * x), np.sin(s * x)
            target = math.exp(-0.5 * s * s * var_t)
            se_re = cs.std(ddof=1) / math.sqrt(n)
            se_im = sn.std(ddof=1) / math.sqrt(n)
            devs.append(max(abs(cs.mean() - target) / se_re, abs(sn.mean()) / se_im))
        m = x.mean()
        sd = x.std()
        skew = float(np.mean((x - m) ** 3) / sd ** 3)
        kurt = float(np.mean((x - m) ** 4) / sd ** 4 - 3.0)
        var = float(x.var(ddof=1))
        rep = {
            "index": j,
            "s_grid": s_grid.tolist(),
            "cf_deviation_se": [float(v) for v in devs],
            "max_cf_deviation_se": float(max(devs)),
            "skewness": skew,
            "skewness_se": math.sqrt(6.0 / n),
            "excess_kurtosis": kurt,
            "excess_kurtosis_se": math.sqrt(24.0 / n),
            "variance": var,
            "target_variance": var_t,
            "variance_rel_error": var / var_t - 1.0,
        }
        rep["passed"] = bool(rep["max_cf_deviation_se"] < threshold
                             and abs(kurt) < threshold * rep["excess_kurtosis_se"])
        out.append(rep)
    return out


# ---------------------------------------------------------------------------
# limiting Ornstein-Uhlenbeck modes


def normalized_mode(k, side=1.0, kind="cos") -> PlaneWave:
    """sqrt(2/V) cos (or sin) of 2 pi k.x / side: unit L2 norm on the torus."""
    k = np.asarray(k, dtype=float)
    amp = math.sqrt(2.0 / side ** len(k))
    return PlaneWave(k, side, phase=0.0 if kind == "cos" else -math.pi / 2, amplitude=amp)


@dataclass
class OUReference:
    """Independent OU modes dN_k = -(|q|^2/c) N_k dt + sqrt(2) |q| dW_k, q = 2 pi k / side.

    ``diffusivity`` multiplies both the drift and the noise variance, so the
    stationary variance is c for every mode; 1 gives the interacting case and
    rho the gradient case.
    """

    c: float
    modes: list
    side: float = 1.0
    diffusivity: float = 1.0
    q2: np.ndarray = field(init=False)

    def __post_init__(self):
        ks = np.atleast_2d(np.asarray(self.modes, dtype=float))
        self.q2 = np.sum((2.0 * math.pi * ks / self.side) ** 2, axis=1)

    @property
    def rates(self) -> np.ndarray:
        return self.diffusivity * self.q2 / self.c

    @property
    def noise(self) -> np.ndarray:
        return np.sqrt(2.0 * self.diffusivity * self.q2)

    @property
    def stationary_variance(self) -> np.ndarray:
        return self.noise ** 2 / (2.0 * self.rates)


def simulate_ou_reference(ref: OUReference, dt: float, t_end: float, seed: int = 0,
                          noise: bool = True, x0=None) -> tuple[np.ndarray, np.ndarray]:
    """Exact-in-law AR(1) updates; returns (times, values of shape (steps + 1, n_modes)).

    Without ``x0`` the start is drawn from the stationary law (or 1 with noise off).
    """
    rng = stream(seed, 0)
    steps = int(round(t_end / dt))
    a = np.exp(-ref.rates * dt)
    var = ref.stationary_variance
    x = np.empty((steps + 1, len(a)))
    if x0 is not None:
        x[0] = x0
    elif noise:
        x[0] = rng.standard_normal(len(a)) * np.sqrt(var)
    else:
        x[0] = 1.0
    sd = np.sqrt(var * (1.0 - a * a)) if noise else np.zeros_like(a)
    xi = rng.standard_normal((steps, len(a))) if noise else np.zeros((steps, len(a)))
    for t in range(steps):
        x[t + 1] = a * x[t] + sd * xi[t]
    return dt * np.arange(steps + 1), x


def autocovariance(series, max_lag: int, center: bool = False) -> np.ndarray:
    """Average over series and time origins of x(t) x(t + lag), lag = 0..max_lag."""
    series = [np.asarray(s, dtype=float) for s in series]
    acc = np.zeros(max_lag + 1)
    cnt = np.zeros(max_lag + 1)
    for s in series:
        if center:
            s = s - s.mean()
        n = len(s)
        f = np.fft.rfft(s, n=2 * n)
        ac = np.fft.irfft(f * np.conj(f))[: max_lag + 1]
        acc += ac
        cnt += n - np.arange(max_lag + 1)
    return acc / cnt


def _fit_window(lags, acov, lo, hi):
    rho = acov / acov[0]
    sel = np.flatnonzero((rho >= lo) & (rho <= hi))
    if len(sel) == 0:
        return sel
    # first contiguous run of lags inside the window
    run = sel[: int(np.argmax(np.diff(np.append(sel, sel[-1] + 2)) != 1)) + 1]
    return run


def fit_decay_rate(series, dt: float, max_lag: int, window=(0.2, 0.9), n_groups: int = 20,
                   center: bool = False) -> dict:
    """Fit log C(t) = a - lambda t over lags where C(t)/C(0) lies in ``window``.

    The SE of lambda is a jackknife over groups of series (or over time chunks
    when there are fewer series than groups); the window is fixed from the
    full-data estimate.  Raises FitWindowTooNoisy if the fit's R^2 < 0.8.
    """
    series = [np.asarray(s, dtype=float) for s in series]
    if len(series) < n_groups:
        pieces = math.ceil(n_groups / len(series))
        chunks = []
        for s in series:
            per = max(len(s) // pieces, max_lag + 2)
            chunks += [s[i:i + per] for i in range(0, len(s) - per + 1, per)]
        series = chunks
    lags = dt * np.arange(max_lag + 1)
    acov = autocovariance(series, max_lag, center)
    sel = _fit_window(lags, acov, *window)
    if len(sel) < 3:
        raise FitWindowTooNoisy(f"only {len(sel)} lags inside the fit window")

    def rate(ac):
        if np.any(ac[sel] <= 0):
            return math.nan, 0.0
        _, b, _, _, r2 = linear_fit(lags[sel], np.log(ac[sel]))
        return -b, r2

    lam, r2 = rate(acov)
    if not r2 >= 0.8:
        raise FitWindowTooNoisy(f"R^2 = {r2:.3f} below 0.8")
    groups = np.array_split(np.arange(len(series)), min(n_groups, len(series)))
    jk = []
    for g in groups:
        drop = set(g.tolist())
        keep = [x for i, x in enumerate(series) if i not in drop]
        jk.append(rate(autocovariance(keep, max_lag, center))[0])
    jk = np.array(jk)
    G = len(jk)
    se = math.sqrt((G - 1) / G * np.nansum((jk - np.nanmean(jk)) ** 2))
    return {"rate": float(lam), "se": se, "r2": float(r2), "lag_window": [float(lags[sel[0]]), float(lags[sel[-1]])],
            "n_lags": int(len(sel)), "acov": acov.tolist(), "dt": dt}


def field_series(tr, spec: ScalingSpec, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Macroscopic times and fluctuation values (n_records, n_test_functions) along a trajectory."""
    _check_box(tr.box.L, spec)
    eps, d = spec.epsilon, tr.box.d
    ints = spec.integrals()
    vals = np.empty((len(tr), len(spec.test_functions)))
    for k in range(len(tr)):
        pts = tr.box.wrap(tr.positions[k]) * eps
        vals[k] = [f.pairing(pts) for f in spec.test_functions]
    return eps ** 2 * tr.times, eps ** (d / 2) * vals - eps ** (-d / 2) * rho * ints


def mode_autocorrelation(trajectories, k, epsilon: float, max_lag_time: float,
                         window=(0.2, 0.9), side: float = 1.0) -> dict:
    """Decay rate of the stationary autocovariance of the cos and sin modes at wave-vector k.

    Rates are in macroscopic time units.  Plane-wave modes with k != 0 have
    zero integral, so no density is needed for centering.
    """
    k = np.asarray(k, dtype=float)
    if not np.any(k):
        raise ValidationError("wave-vector must be nonzero")
    spec = ScalingSpec(epsilon, [normalized_mode(k, side, "cos"), normalized_mode(k, side, "sin")], side=side)
    series = []
    dt_macro = None
    for tr in trajectories:
        t, v = field_series(tr, spec, 0.0)
        dt_macro = t[1] - t[0]
        series += [v[:, 0], v[:, 1]]
    max_lag = int(round(max_lag_time / dt_macro))
    fit = fit_decay_rate(series, dt_macro, max_lag, window)
    q2 = float(np.sum((2 * math.pi * k / side) ** 2))
    fit.update({"k": k.tolist(), "q2": q2, "epsilon": epsilon,
                "dynamics_kind": trajectories[0].spec.kind})
    return fit


def increment_moment_check(trajectories, f: TestFunction, epsilon: float, lags: list, side: float = 1.0) -> dict:
    """Regress log E|<f, X(t+h)> - <f, X(t)>|^4 on log h over macroscopic lags h.

    Increments are averaged over all time origins of every trajectory.  The
    centering term cancels in increments.
    """
    spec = ScalingSpec(epsilon, [f], side=side)
    series = []
    dt_macro = None
    for tr in trajectories:
        t, v = field_series(tr, spec, 0.0)
        dt_macro = t[1] - t[0]
        series.append(v[:, 0])
    steps = [int(round(h / dt_macro)) for h in lags]
    if any(s < 1 for s in steps) or len(set(steps)) < len(steps):
        raise ValidationError("lags must be distinct positive multiples of the recording interval")
    m4, m2, se4 = [], [], []
    for s in steps:
        inc = np.concatenate([x[s:] - x[:-s] for x in series])
        if not np.any(inc):
            raise ValidationError("all increments vanish; the test function is constant")
        q = inc ** 4
        m4.append(q.mean())
        se4.append(q.std(ddof=1) / math.sqrt(len(q)))
        m2.append(np.mean(inc ** 2))
    h = dt_macro * np.array(steps)
    a, b, se_a, se_b, r2 = linear_fit(np.log(h), np.log(m4))
    return {"lags": h.tolist(), "m4": [float(v) for v in m4], "m2": [float(v) for v in m2],
            "m4_se": [float(v) for v in se4], "slope": b, "slope_se": se_b, "intercept": a,
            "intercept_se": se_a, "r2": r2, "kurtosis_ratio": [float(x / y ** 2) for x, y in zip(m4, m2)]}


def write_fluctuations_csv(path, X: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample"] + [f"f{j}" for j in range(X.shape[1])])
        for i, row in enumerate(X):
            w.writerow([i] + [repr(float(v)) for v in row])
