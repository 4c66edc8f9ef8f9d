"""Small statistics helpers: autocorrelation times and standard errors."""
from __future__ import annotations

import math

import numpy as np


def autocorrelation(x) -> np.ndarray:
    """Normalised autocorrelation function of a 1-D series (FFT based)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    y = x - x.mean()
    f = np.fft.rfft(y, n=2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n]
    if acf[0] == 0:
        out = np.zeros(n)
        out[0] = 1.0
        return out
    return acf / acf[0]


def integrated_autocorr_time(x, c: float = 5.0) -> float:
    """Integrated autocorrelation time with Sokal's self-consistent window."""
    x = np.asarray(x, dtype=float)
    if len(x) < 4:
        return 1.0
    rho = autocorrelation(x)
    taus = 2.0 * np.cumsum(rho) - 1.0
    window = np.arange(len(taus)) < c * taus
    m = int(np.argmin(window)) if not window.all() else len(taus) - 1
    return float(max(taus[m], 1.0))


def mean_se(x) -> tuple[float, float]:
    """Mean and its standard error, inflated by the integrated autocorrelation time."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 2:
        return float(x.mean()) if n else math.nan, math.inf
    tau = integrated_autocorr_time(x)
    return float(x.mean()), float(x.std(ddof=1) * math.sqrt(tau / n))


def paired_z(a, b) -> dict:
    """Compare two per-sample estimators sharing samples.

    The z-score uses the standard error of the paired difference, which equals
    sqrt(se_a^2 + se_b^2 - 2 cov).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ma, sa = mean_se(a)
    mb, sb = mean_se(b)
    md, sd = mean_se(a - b)
    if sd == 0:
        z = 0.0 if md == 0 else math.copysign(math.inf, md)
    else:
        z = md / sd
    return {"lhs": ma, "rhs": mb, "se_lhs": sa, "se_rhs": sb, "se_diff": sd, "z_score": z,
            "n_samples": len(a)}


def linear_fit(x, y):
    """Ordinary least squares y = a + b x; returns (a, b, se_a, se_b, r2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    X = np.column_stack([np.ones(n), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if n > 2:
        cov = ss_res / (n - 2) * np.linalg.inv(X.T @ X)
        se = np.sqrt(np.diag(cov))
    else:
        se = np.array([math.nan, math.nan])
    return float(coef[0]), float(coef[1]), float(se[0]), float(se[1]), float(r2)
