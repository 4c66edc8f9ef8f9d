"""Monte Carlo checks of the exact identities of the Dirichlet form and its generator.

All comparisons are paired: both sides are computed on the same samples and
the z-score uses the standard error of the per-sample difference.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cylinder import CylinderFunction, carre_du_champ
from .gibbs import GibbsEnsemble, quasi_random_points
from .rng import stream
from .stats import mean_se, paired_z

THRESHOLD = 4.0


@dataclass
class IdentityReport:
    name: str
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    z_score: float
    n_samples: int
    se_diff: float = math.nan
    bias_budget: float = 0.0
    notes: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        """|lhs - rhs| within THRESHOLD standard errors plus the stated bias budget."""
        diff = abs(self.lhs - self.rhs)
        if diff == 0:
            return True
        return bool(diff <= THRESHOLD * self.se_diff + self.bias_budget)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["passed"] = self.passed
        return out


def _report(name, a, b, notes=None, bias_budget=0.0) -> IdentityReport:
    r = paired_z(a, b)
    return IdentityReport(name, r["lhs"], r["rhs"], r["se_lhs"], r["se_rhs"], r["z_score"],
                          r["n_samples"], r["se_diff"], bias_budget, dict(notes or {}))


def _family_notes(*fns):
    return {"outer": [f.outer.name for f in fns], "bounded": all(f.bounded for f in fns)}


def check_form_representations(e: GibbsEnsemble, F: CylinderFunction, G: CylinderFunction, p,
                               n_inner: int = 256, seed: int = 0) -> IdentityReport:
    """lhs: z * integral of <grad_x F(g + x), grad_x G(g + x)> dx; rhs: S(F, G)(g).

    The two agree in expectation under the Gibbs measure, because the
    Papangelou intensity z e^{-W} cancels the coefficient A(g + x, x) = e^{W}.
    Passing a different ``p`` (for example the zero potential) corrupts rhs.
    """
    base = quasi_random_points(e.box, n_inner)
    rng = stream(seed, 1)
    V = e.box.volume
    lhs = np.empty(len(e))
    rhs = np.empty(len(e))
    for s, c in enumerate(e.samples):
        xs = ((base + rng.random(e.box.d)) % 1.0) * e.box.L
        gf = F.grads_added(c, xs)
        gg = G.grads_added(c, xs)
        lhs[s] = e.params.z * V * float(np.mean(np.sum(gf * gg, axis=1)))
        rhs[s] = carre_du_champ(F, G, c, p)
    notes = _family_notes(F, G)
    notes["n_inner"] = n_inner
    return _report("form_representations", lhs, rhs, notes)


def check_generator_symmetry(e: GibbsEnsemble, F: CylinderFunction, G: CylinderFunction, p) -> list:
    """Three paired comparisons of E[G HF], E[F HG] and E[S(F, G)]."""
    a = np.empty(len(e))
    b = np.empty(len(e))
    s = np.empty(len(e))
    for k, c in enumerate(e.samples):
        f, g = F.eval(c), G.eval(c)
        a[k] = g * F.generator_apply(c, p)
        b[k] = f * G.generator_apply(c, p)
        s[k] = carre_du_champ(F, G, c, p)
    notes = _family_notes(F, G)
    return [
        _report("symmetry:G.HF_vs_F.HG", a, b, notes),
        _report("symmetry:G.HF_vs_S", a, s, notes),
        _report("symmetry:F.HG_vs_S", b, s, notes),
    ]


def check_invariance(e: GibbsEnsemble, F: CylinderFunction, p) -> IdentityReport:
    """E[HF] = 0 under the invariant measure."""
    h = np.array([F.generator_apply(c, p) for c in e.samples])
    return _report("invariance", h, np.zeros_like(h), _family_notes(F))


def check_dynamics_consistency(trajectories: list, F: CylinderFunction, p, dt_obs: float,
                               weight: CylinderFunction | None = None) -> IdentityReport:
    """Forward-difference Dynkin check of the semigroup against the generator.

    lhs: mean of W(X0) (F(X(dt_obs)) - F(X(0))) / dt_obs; rhs: mean of -W(X0) HF(X(0)),
    with weight W = 1 by default.  The O(dt_obs) bias is estimated from the
    same trajectories at lag 2 dt_obs (when recorded) and carried as the bias
    budget.
    """
    def lag_index(tr, lag):
        k = int(round(lag / (tr.times[1] - tr.times[0])))
        if k < 1 or k >= len(tr) or not math.isclose(tr.times[k], lag, rel_tol=1e-9):
            return None
        return k

    k1 = lag_index(trajectories[0], dt_obs)
    if k1 is None:
        raise ValueError("dt_obs must be a positive multiple of the recording interval")
    k2 = lag_index(trajectories[0], 2 * dt_obs)
    lhs, rhs, lhs2 = [], [], []
    for tr in trajectories:
        c0 = tr.snapshot(0)
        w = 1.0 if weight is None else weight.eval(c0)
        f0 = F.eval(c0)
        lhs.append(w * (F.eval(tr.snapshot(k1)) - f0) / dt_obs)
        rhs.append(-w * F.generator_apply(c0, p))
        if k2 is not None:
            lhs2.append(w * (F.eval(tr.snapshot(k2)) - f0) / (2 * dt_obs))
    bias = 0.0
    notes = _family_notes(F)
    notes["dt_obs"] = dt_obs
    if lhs2:
        # forward difference bias is linear in the lag: b(2h) - b(h) = b(h)
        m1, _ = mean_se(lhs)
        m2, _ = mean_se(lhs2)
        bias = abs(m2 - m1)
        notes["bias_estimate"] = m2 - m1
    return _report("dynamics_consistency", np.array(lhs), np.array(rhs), notes, bias)


def write_reports(path, reports) -> None:
    """Append reports as JSON lines."""
    with open(path, "a") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True, default=float) + "\n")
