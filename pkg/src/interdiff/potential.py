"""Radial pair potentials and numerical audits of the hypotheses placed on them.

Every potential is truncated at a finite ``cutoff``: beyond it the pair energy
is exactly zero.  The same truncated function is used by the direct evaluators,
the compiled kernels and the quadratures, so all paths agree.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate

from . import _kernels as K
from .errors import CutoffExceedsHalfBox, ValidationError


def sphere_surface(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True, eq=False)
class PairPotential:
    """A symmetric radial pair potential phi(x) = v(|x|), zero beyond ``cutoff``.

    Use the constructors :meth:`zero`, :meth:`gaussian_bump`,
    :meth:`truncated_shifted_well` and :meth:`tabulated`.
    ``r_tail`` is the radius beyond which phi is claimed bounded, and ``B`` the
    claimed stability constant.
    """

    kind: str
    params: dict
    cutoff: float
    r_tail: float
    B: float = 0.0
    _table: tuple = field(default=(np.zeros(1), np.zeros(1)), repr=False)

    # -- constructors -----------------------------------------------------
    @classmethod
    def zero(cls) -> "PairPotential":
        return cls("zero", {}, 0.0, 1.0, 0.0)

    @classmethod
    def gaussian_bump(cls, A=1.0, sigma=1.0, cutoff=None, r_tail=None, B=0.0) -> "PairPotential":
        """phi(x) = A exp(-|x|^2 / sigma^2), truncated at ``cutoff`` (default 4 sigma)."""
        if sigma <= 0:
            raise ValidationError("sigma must be positive")
        cutoff = 4.0 * sigma if cutoff is None else float(cutoff)
        r_tail = cutoff if r_tail is None else float(r_tail)
        return cls("gaussian_bump", {"A": float(A), "sigma": float(sigma)}, cutoff, r_tail, float(B))

    @classmethod
    def truncated_shifted_well(cls, depth=1.0, range=1.0, cutoff=None, r_tail=None, B=0.0):
        """Attractive Gaussian well shifted to vanish at the cutoff.

        phi(r) = -depth (exp(-r^2/range^2) - exp(-cutoff^2/range^2)) for r < cutoff.
        It is not stable for depth > 0; it exists to exercise the (S) search.
        """
        if range <= 0 or depth < 0:
            raise ValidationError("well needs range > 0 and depth >= 0")
        cutoff = 3.0 * range if cutoff is None else float(cutoff)
        r_tail = cutoff if r_tail is None else float(r_tail)
        return cls("truncated_shifted_well", {"depth": float(depth), "range": float(range)},
                   cutoff, r_tail, float(B))

    @classmethod
    def tabulated(cls, r, energy, r_tail=None, B=0.0) -> "PairPotential":
        """Linear interpolation of (distance, energy) pairs; zero past the last distance."""
        r = np.asarray(r, dtype=float)
        e = np.asarray(energy, dtype=float)
        if r.ndim != 1 or r.shape != e.shape or len(r) < 2:
            raise ValidationError("tabulated potential needs two equal-length columns")
        if np.any(np.diff(r) <= 0) or r[0] < 0:
            raise ValidationError("tabulated distances must be increasing and nonnegative")
        if not np.all(np.isfinite(e)):
            raise ValidationError("tabulated energies must be finite")
        cutoff = float(r[-1])
        return cls("tabulated", {}, cutoff, cutoff if r_tail is None else float(r_tail),
                   float(B), (r, e))

    @classmethod
    def from_file(cls, path, **kw) -> "PairPotential":
        data = np.loadtxt(Path(path), ndmin=2)
        if data.shape[1] != 2:
            raise ValidationError(f"{path}: expected two columns (distance, energy)")
        return cls.tabulated(data[:, 0], data[:, 1], **kw)

    @classmethod
    def from_spec(cls, spec: dict) -> "PairPotential":
        """Build from a run-config mapping such as ``{"kind": "gaussian_bump", "A": 1}``."""
        spec = dict(spec)
        kind = spec.pop("kind", None)
        try:
            return cls._from_spec(kind, spec)
        except TypeError as exc:
            raise ValidationError(f"bad parameters for potential {kind!r}: {exc}") from exc

    @classmethod
    def _from_spec(cls, kind, spec):
        if kind == "zero":
            return cls.zero()
        if kind == "gaussian_bump":
            return cls.gaussian_bump(**spec)
        if kind == "truncated_shifted_well":
            return cls.truncated_shifted_well(**spec)
        if kind == "tabulated":
            if "table" in spec:
                r, e = spec.pop("table")
                return cls.tabulated(r, e, **spec)
            path = spec.pop("path")
            return cls.from_file(path, **spec)
        raise ValidationError(f"unknown potential kind {kind!r}")

    # -- evaluation -------------------------------------------------------
    def kernel_args(self):
        """Arguments ``(code, params, tab_r, tab_e)`` for the compiled kernels."""
        p = self.params
        if self.kind == "zero":
            return K.ZERO, np.zeros(1), self._table[0], self._table[1]
        if self.kind == "gaussian_bump":
            return K.GAUSSIAN, np.array([self.cutoff, p["A"], p["sigma"]]), *self._table
        if self.kind == "truncated_shifted_well":
            shift = math.exp(-self.cutoff ** 2 / p["range"] ** 2)
            return K.WELL, np.array([self.cutoff, p["depth"], p["range"], shift]), *self._table
        return K.TABULATED, np.array([self.cutoff]), *self._table

    @property
    def is_nonnegative(self) -> bool:
        if self.kind == "zero":
            return True
        if self.kind == "gaussian_bump":
            return self.params["A"] >= 0
        if self.kind == "truncated_shifted_well":
            return self.params["depth"] == 0
        return bool(np.all(self._table[1] >= 0))

    def radial(self, r):
        """v(r) for an array of distances."""
        r2 = np.square(np.asarray(r, dtype=float))
        args = self.kernel_args()
        return np.vectorize(lambda s: K.phi_r2(*args, s), otypes=[float])(r2)

    def __call__(self, x):
        """phi at displacement vectors ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return self.radial(np.sqrt(np.sum(x * x, axis=-1)))

    def gradient(self, x):
        """grad phi at displacement vectors ``x`` of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        r2 = np.sum(x * x, axis=-1)
        args = self.kernel_args()
        g = np.vectorize(lambda s: K.dphi_over_r(*args, s), otypes=[float])(r2)
        return g[..., None] * x

    def check_fits(self, L: float):
        if self.cutoff > L / 2:
            raise CutoffExceedsHalfBox(f"cutoff {self.cutoff} exceeds half the box side {L / 2}")

    def evaluate_min_image(self, x, y, L: float) -> float:
        """phi applied to the minimum-image displacement of x and y on a torus of side L."""
        self.check_fits(L)
        dx = np.asarray(x, float) - np.asarray(y, float)
        dx = dx - L * np.floor(dx / L + 0.5)
        return float(self(dx))

    def to_spec(self) -> dict:
        out = {"kind": self.kind, **self.params}
        if self.kind != "zero":
            out["r_tail"] = self.r_tail
        if self.kind in ("gaussian_bump", "truncated_shifted_well"):
            out["cutoff"] = self.cutoff
        if self.kind == "tabulated":
            out["table"] = [self._table[0].tolist(), self._table[1].tolist()]
        if self.B:
            out["B"] = self.B
        return out


# ---------------------------------------------------------------------------
# condition audits


HOLDS, FAILS, NOT_CHECKABLE = "holds", "fails", "not_checkable"


@dataclass
class ConditionReport:
    integral_I: float
    ui_threshold: float
    integral_A3: float
    a1_sup: float
    verdicts: dict
    notes: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "integral_I": self.integral_I,
            "ui_threshold": self.ui_threshold,
            "integral_A3": self.integral_A3,
            "a1_sup": self.a1_sup,
            "verdicts": dict(self.verdicts),
            "notes": dict(self.notes),
        }


def _radial_integral(f, r_max, d, breakpoints=(), epsrel=1e-10):
    """Integral of f(|x|) over the ball of radius r_max, refined twice.

    Returns ``(value, converged)`` where converged means the two refinement
    levels agree to 1e-4 relative.
    """
    S = sphere_surface(d)
    pts = [b for b in breakpoints if 0 < b < r_max] or None

    def integrand(r):
        return S * r ** (d - 1) * f(r)

    values = []
    for limit, tol in ((50, 1e-6), (400, epsrel)):
        v, _ = integrate.quad(integrand, 0.0, r_max, points=pts, limit=limit,
                              epsabs=0.0, epsrel=tol)
        values.append(v)
    coarse, fine = values
    scale = max(abs(fine), 1e-300)
    converged = np.isfinite(fine) and (abs(fine - coarse) <= 1e-4 * scale or abs(fine - coarse) < 1e-14)
    return fine, bool(converged)


def stability_search(p: PairPotential, d: int, n_trials=4000, max_points=8, seed=0):
    """Random search for small clusters with E < -B n.

    Returns the worst ``(n, energy)`` counterexample, or None.  A None result
    certifies nothing.
    """
    rng = np.random.default_rng(seed)
    scale = max(p.cutoff, 1e-12)
    worst = None
    for t in range(n_trials):
        n = int(rng.integers(2, max_points + 1))
        radius = scale * rng.uniform(0.0, 1.0) ** 2
        pts = rng.normal(size=(n, d)) * radius
        diff = pts[:, None, :] - pts[None, :, :]
        iu = np.triu_indices(n, 1)
        E = float(np.sum(p(diff[iu])))
        excess = E + p.B * n
        if excess < -1e-12 and (worst is None or excess < worst[2]):
            worst = (n, E, excess)
    if worst is None:
        return None
    return worst[0], worst[1]


def audit_conditions(p: PairPotential, z: float, d: int, stability_trials=4000) -> ConditionReport:
    """Numerically audit (S), (I), (UI), (A1), (A2), (A3) for potential ``p``."""
    if z <= 0:
        raise ValidationError("activity must be positive")
    if d not in (1, 2, 3):
        raise ValidationError("dimension must be 1, 2 or 3")
    verdicts = {}
    notes = {}
    kinks = tuple(p._table[0]) if p.kind == "tabulated" else ()

    if p.kind == "zero":
        integral_I, ok_I = 0.0, True
    else:
        integral_I, ok_I = _radial_integral(lambda r: abs(1.0 - math.exp(-float(p.radial(r)))),
                                            p.cutoff, d, kinks)
    threshold = math.exp(-1.0 - 2.0 * p.B) / z
    verdicts["I"] = HOLDS if ok_I else NOT_CHECKABLE
    if ok_I:
        verdicts["UI"] = HOLDS if integral_I < threshold else FAILS
    else:
        verdicts["UI"] = NOT_CHECKABLE
        notes["UI"] = "quadrature refinements disagree"

    # (A1): sup of phi outside B(r_tail); phi vanishes past the cutoff
    if p.cutoff > p.r_tail:
        grid = np.linspace(p.r_tail, p.cutoff, 2001)
        if kinks:
            grid = np.union1d(grid, [k for k in kinks if p.r_tail <= k <= p.cutoff])
        a1 = max(float(np.max(p.radial(grid))), 0.0)
    else:
        a1 = 0.0
    verdicts["A1"] = HOLDS if np.isfinite(a1) else FAILS

    notes["A2"] = "measure-theoretic condition used for closability; not audited numerically"
    verdicts["A2"] = NOT_CHECKABLE

    if p.kind == "zero":
        integral_A3, ok_A3 = sphere_surface(d) * p.r_tail ** d / d, True
    else:
        integral_A3, ok_A3 = _radial_integral(lambda r: math.exp(float(p.radial(r))), p.r_tail, d, kinks)
    verdicts["A3"] = HOLDS if ok_A3 and np.isfinite(integral_A3) else NOT_CHECKABLE

    if p.is_nonnegative and p.B >= 0:
        verdicts["S"] = HOLDS
        notes["S"] = "phi >= 0, so the energy is bounded below by 0"
    else:
        found = stability_search(p, d, n_trials=stability_trials)
        if found is None:
            verdicts["S"] = NOT_CHECKABLE
            notes["S"] = "no counterexample found; stability is never certified by search"
        else:
            verdicts["S"] = FAILS
            notes["S"] = f"cluster of {found[0]} points with energy {found[1]:.6g} < -B n"
    return ConditionReport(integral_I, threshold, integral_A3, a1, verdicts, notes)
