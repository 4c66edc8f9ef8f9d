"""Density, radial pair correlation and compressibility estimates from Gibbs ensembles."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from .gibbs import GibbsEnsemble
from .potential import sphere_surface
from .errors import ValidationError
from .stats import linear_fit, mean_se

log = logging.getLogger(__name__)

URSELL = "ursell_integral"
FLUCTUATION = "fluctuation"


def estimate_k1(e: GibbsEnsemble) -> tuple[float, float]:
    """Density rho = E[n] / V and its standard error."""
    m, se = mean_se(e.counts.astype(float))
    V = e.box.volume
    return m / V, se / V


def shell_volumes(edges, d: int) -> np.ndarray:
    """Exact volumes of the shells between consecutive radii in R^d."""
    edges = np.asarray(edges, dtype=float)
    ball = sphere_surface(d) / d * edges ** d
    return np.diff(ball)


@dataclass
class PairHistogram:
    """Radial pair counts and their normalisation to k2(r).

    ``per_sample`` holds each sample's counts so that standard errors account
    for correlations between bins.
    """

    bin_edges: np.ndarray
    counts: np.ndarray
    n_samples: int
    box: object
    per_sample: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def norm(self) -> np.ndarray:
        # a pair at distance r in shell b contributes 2 / (V shell_b) to k2
        return 2.0 / (self.box.volume * shell_volumes(self.bin_edges, self.box.d))

    def k2_samples(self) -> np.ndarray:
        return self.per_sample * self.norm

    @property
    def k2(self) -> np.ndarray:
        return self.counts / self.n_samples * self.norm

    @property
    def se(self) -> np.ndarray:
        ks = self.k2_samples()
        return np.array([mean_se(ks[:, b])[1] for b in range(ks.shape[1])])

    @property
    def empty_bins(self) -> np.ndarray:
        return np.flatnonzero(self.counts == 0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_center", "k2", "se"])
            for r, k, s in zip(self.centers, self.k2, self.se):
                w.writerow([repr(float(r)), repr(float(k)), repr(float(s))])


def estimate_k2_radial(e: GibbsEnsemble, bins=64, r_max: float | None = None) -> PairHistogram:
    """Histogram of minimum-image pair distances normalised to k2(r).

    ``bins`` is a bin count (linear up to ``r_max``, default L/2) or an array of edges.
    """
    L = e.box.L
    if np.ndim(bins) == 0:
        r_max = L / 2 if r_max is None else float(r_max)
        edges = np.linspace(0.0, r_max, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=float)
    if np.any(np.diff(edges) <= 0) or edges[0] < 0 or edges[-1] > L / 2 + 1e-12:
        raise ValidationError("bin edges must increase within [0, L/2]")
    nb = len(edges) - 1
    uniform = np.allclose(np.diff(edges), edges[1] - edges[0]) and edges[0] == 0
    per = np.zeros((len(e), nb), dtype=np.int64)
    for s, c in enumerate(e.samples):
        if c.n < 2:
            continue
        if uniform:
            K.pair_histogram(np.ascontiguousarray(c.points), c.n, float(L), e.box.d, float(edges[-1]), nb, per[s])
        else:
            dx = c.points[:, None, :] - c.points[None, :, :]
            dx -= L * np.floor(dx / L + 0.5)
            iu = np.triu_indices(c.n, 1)
            r = np.sqrt(np.sum(dx[iu] ** 2, axis=1))
            per[s] = np.histogram(r, edges)[0]
    h = PairHistogram(edges, per.sum(axis=0), len(e), e.box, per)
    if len(h.empty_bins):
        log.warning("%d empty histogram bins", len(h.empty_bins))
    return h


@dataclass
class CompressibilityEstimate:
    rho: float
    c: float
    se_c: float
    method: str
    notes: dict

    def to_dict(self):
        return {"rho": self.rho, "c": self.c, "se_c": self.se_c, "method": self.method, "notes": self.notes}


def _ursell(e: GibbsEnsemble, h: PairHistogram) -> CompressibilityEstimate:
    """c = rho + integral of (k2 - rho^2) over the ball of radius r_max.

    The integral of k2 over the ball is 2 E[pairs within r_max] / V.  The SE
    comes from the delta method applied to the per-sample (n/V, 2 pairs/V).
    """
    V = e.box.volume
    n = e.counts.astype(float)
    R = h.bin_edges[-1]
    ball = sphere_surface(e.box.d) / e.box.d * R ** e.box.d
    pairs = h.per_sample.sum(axis=1)
    rho_s = n / V
    rho, se_rho = mean_se(rho_s)
    # per-sample integral of k2 over the ball, minus rho^2 vol(B_R) from the ensemble mean
    k2int = 2.0 * pairs / V
    m_int, _ = mean_se(k2int)
    c = rho + m_int - rho ** 2 * ball
    # delta-method SE on the per-sample linearisation
    lin = rho_s + k2int - 2.0 * rho * ball * rho_s
    _, se = mean_se(lin)
    tail = h.k2[-max(1, len(h.k2) // 8):] - rho ** 2
    tail_se = h.se[-max(1, len(h.k2) // 8):]
    tail_ok = bool(abs(tail.mean()) <= 4.0 * (np.sqrt(np.sum(tail_se ** 2)) / len(tail) + 1e-300))
    if not tail_ok:
        log.warning("TailNotDecayed: k2 - rho^2 is not within noise of zero near r = %g", R)
    return CompressibilityEstimate(rho, c, se, URSELL, {"r_max": R, "tail_decayed": tail_ok,
                                                          "se_rho": se_rho})


def _fluctuation(e: GibbsEnsemble, n_windows: int = 5, offsets_per_side: int = 2) -> CompressibilityEstimate:
    """Var(count in cube)/volume for nested cubes (L/8 .. L/2), extrapolated linearly in 1/side.

    Each sample contributes counts at ``offsets_per_side**d`` window positions;
    the variance uses those as repeated measurements and is resampled by
    jackknife over samples for the standard error.
    """
    L, d = e.box.L, e.box.d
    sides = np.linspace(L / 8, L / 2, n_windows)
    grid = (np.arange(offsets_per_side) / offsets_per_side) * L
    offsets = np.stack(np.meshgrid(*([grid] * d), indexing="ij"), axis=-1).reshape(-1, d)
    counts = np.zeros((len(e), n_windows, len(offsets)))
    buf = np.zeros(len(offsets), dtype=np.int64)
    for s, c in enumerate(e.samples):
        for w, side in enumerate(sides):
            K.window_counts(np.ascontiguousarray(c.points), c.n, float(L), d, float(side), offsets, buf)
            counts[s, w] = buf

    def estimate(cnt):
        flat = cnt.transpose(1, 0, 2).reshape(n_windows, -1)
        ratio = flat.var(axis=1, ddof=1) / sides ** d
        a, _, _, _, _ = linear_fit(1.0 / sides, ratio)
        return a, ratio

    c_hat, ratios = estimate(counts)
    nblk = min(50, len(e))
    blocks = np.array_split(np.arange(len(e)), nblk)
    jk = np.array([estimate(np.delete(counts, b, axis=0))[0] for b in blocks])
    se = math.sqrt((nblk - 1) / nblk * np.sum((jk - jk.mean()) ** 2))
    rho, _ = estimate_k1(e)
    return CompressibilityEstimate(rho, c_hat, se, FLUCTUATION,
                                   {"window_sides": sides.tolist(), "ratios": ratios.tolist()})


def estimate_compressibility(e: GibbsEnsemble, bins=64, r_max=None) -> dict:
    """Both compressibility estimators, keyed by method name."""
    h = estimate_k2_radial(e, bins, r_max)
    return {URSELL: _ursell(e, h), FLUCTUATION: _fluctuation(e)}


def ruelle_bound_check(e: GibbsEnsemble, xi: float, h: PairHistogram | None = None) -> dict:
    """Count estimates of k1 and radial k2 exceeding xi and xi^2 by more than 4 SE."""
    if xi <= 0:
        raise ValidationError("xi must be positive")
    rho, se_rho = estimate_k1(e)
    h = estimate_k2_radial(e) if h is None else h
    k1_viol = bool(rho - 4 * se_rho > xi)
    k2_viol = (h.k2 - 4 * h.se) > xi ** 2
    total = 1 + len(k2_viol)
    n_viol = int(k1_viol) + int(k2_viol.sum())
    return {"xi": xi, "k1": rho, "k1_violation": k1_viol, "k2_violations": int(k2_viol.sum()),
            "n_checked": total, "violation_fraction": n_viol / total}


def write_summary(path, estimates: dict, rho: tuple) -> None:
    out = {"rho": rho[0], "se_rho": rho[1], "compressibility": {k: v.to_dict() for k, v in estimates.items()}}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
