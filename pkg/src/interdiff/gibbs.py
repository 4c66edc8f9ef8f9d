"""Grand-canonical Metropolis sampling of the finite-volume Gibbs measure.

The target on a torus of volume V is the density z^n exp(-E(gamma)) / n! with
respect to Lebesgue measure on each n-point layer (empty boundary conditions).
Moves are birth, death and bounded translation; see :func:`mcmc_step`.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from . import _kernels as K
from .configuration import Configuration, TorusBox, cells_per_side
from .errors import ValidationError
from .potential import HOLDS, PairPotential, audit_conditions
from .rng import stream
from .stats import integrated_autocorr_time, paired_z

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SamplerParams:
    """Sampler settings.

    ``thin=None`` selects ``ceil(IAT)`` of the particle count, measured on a
    pilot run.  A sweep is ``moves_per_sweep`` single moves, by default
    ``ceil(z V)``.
    """

    z: float
    n_samples: int = 1000
    burn_in: int = 200
    thin: int | None = None
    move_mix: tuple = (0.25, 0.25, 0.5)
    max_displacement: float = 0.5
    seed: int = 0
    n_chains: int = 1
    moves_per_sweep: int | None = None
    pilot_sweeps: int = 400

    def __post_init__(self):
        if not self.z > 0:
            raise ValidationError("activity z must be positive")
        mix = tuple(float(v) for v in self.move_mix)
        if len(mix) != 3 or min(mix) < 0 or abs(sum(mix) - 1.0) > 1e-12:
            raise ValidationError("move_mix must be three nonnegative probabilities summing to 1")
        object.__setattr__(self, "move_mix", mix)
        if self.thin is not None and self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if self.n_samples < 1 or self.burn_in < 0 or self.n_chains < 1:
            raise ValidationError("n_samples, n_chains must be positive and burn_in nonnegative")
        if self.max_displacement <= 0:
            raise ValidationError("max_displacement must be positive")

    @property
    def n_sweeps(self) -> int:
        """Retained-phase sweeps per chain (known only once thin is fixed)."""
        return self.n_samples * (self.thin or 0)

    def sweep_moves(self, box: TorusBox) -> int:
        return self.moves_per_sweep or max(1, math.ceil(self.z * box.volume))


@dataclass
class GibbsEnsemble:
    samples: list
    params: SamplerParams
    box: TorusBox
    potential: PairPotential
    acceptance_rates: dict
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.samples)

    @property
    def counts(self) -> np.ndarray:
        return np.array([c.n for c in self.samples])

    def merged(self, other: "GibbsEnsemble") -> "GibbsEnsemble":
        if other.box != self.box:
            raise ValidationError("cannot merge ensembles on different boxes")
        return GibbsEnsemble(self.samples + other.samples, self.params, self.box, self.potential,
                             self.acceptance_rates, dict(self.meta))


class Chain:
    """Array-backed Markov chain state with an incrementally maintained cell list."""

    def __init__(self, box: TorusBox, p: PairPotential, params: SamplerParams, rng, initial=None):
        p.check_fits(box.L)
        self.box, self.p, self.params, self.rng = box, p, params, rng
        self.m = cells_per_side(box.L, p.cutoff)
        n0 = 0 if initial is None else len(initial)
        cap = int(max(64, 2 * n0, 4 * params.z * box.volume + 20))
        self._alloc(cap)
        if initial is not None:
            for x in initial.points:
                self._append(x)
        self.accepted = np.zeros(3, np.int64)
        self.proposed = np.zeros(3, np.int64)
        self._kargs = p.kernel_args()

    def _alloc(self, cap):
        ncell = self.m ** self.box.d
        self.pos = np.zeros((cap, self.box.d))
        self.members = np.zeros((ncell, cap), np.int64)
        self.counts = np.zeros(ncell, np.int64)
        self.pcell = np.zeros(cap, np.int64)
        self.pslot = np.zeros(cap, np.int64)
        self.state = np.zeros(1, np.int64)

    def _append(self, x):
        n = int(self.state[0])
        self.pos[n] = x
        c = K.cell_index(self.pos[n], float(self.box.L), self.m, self.box.d)
        self.members[c, self.counts[c]] = n
        self.pcell[n] = c
        self.pslot[n] = self.counts[c]
        self.counts[c] += 1
        self.state[0] = n + 1

    def _grow(self):
        pts = self.pos[: self.n].copy()
        self._alloc(2 * self.pos.shape[0])
        for x in pts:
            self._append(x)

    @property
    def n(self) -> int:
        return int(self.state[0])

    def configuration(self) -> Configuration:
        return Configuration(self.box, self.pos[: self.n].copy())

    def moves(self, k: int):
        d = self.box.d
        U = self.rng.random((k, 4 + d))
        G = self.rng.standard_normal((k, d))
        self.run(U, G)

    def run(self, U, G):
        pb, pd, _ = self.params.move_mix
        done = 0
        while done < len(U):
            done += K.mcmc_moves(self.pos, self.state, self.members, self.counts, self.pcell,
                                 self.pslot, float(self.box.L), self.m, self.box.d, *self._kargs,
                                 float(self.params.z), pb, pd, float(self.params.max_displacement),
                                 U[done:], G[done:], self.accepted, self.proposed)
            if done < len(U):
                self._grow()

    def acceptance_rates(self) -> dict:
        names = ("birth", "death", "translate")
        return {nm: (float(a / p) if p else 0.0) for nm, a, p in zip(names, self.accepted, self.proposed)}


def mcmc_step(c: Configuration, params: SamplerParams, rng, p: PairPotential) -> Configuration:
    """One Metropolis move from configuration ``c``.

    Birth proposes a uniform point x and accepts with min(1, zV/(n+1) e^{-dE}),
    dE the energy of x against c.  Death picks a uniform point and accepts with
    min(1, n/(zV) e^{+dE}).  Translation displaces a uniform point uniformly in
    a ball of radius ``max_displacement`` and accepts with min(1, e^{-dE}).
    Impossible moves count as rejected.  Deleting swaps the last point into the
    freed slot.
    """
    ch = Chain(c.box, p, params, rng, initial=c)
    ch.moves(1)
    return ch.configuration()


def _run_chain(box, p, params, chain_index):
    rng = stream(params.seed, chain_index)
    ch = Chain(box, p, params, rng)
    moves = params.sweep_moves(box)
    for _ in range(params.burn_in):
        ch.moves(moves)
    thin = params.thin
    iat = None
    if thin is None:
        trace = np.empty(params.pilot_sweeps)
        for s in range(params.pilot_sweeps):
            ch.moves(moves)
            trace[s] = ch.n
        iat = integrated_autocorr_time(trace)
        thin = max(1, math.ceil(iat))
    samples = []
    for _ in range(params.n_samples):
        ch.moves(moves * thin)
        samples.append(ch.configuration())
    return samples, ch.accepted.copy(), ch.proposed.copy(), thin, iat


def sample_ensemble(params: SamplerParams, box: TorusBox, p: PairPotential, workers: int = 1) -> GibbsEnsemble:
    """Draw ``n_chains * n_samples`` configurations.

    Chains run independently (stream ``(seed, chain)``) and are merged in chain
    order, so the result does not depend on ``workers``.
    """
    report = audit_conditions(p, params.z, box.d, stability_trials=200)
    if report.verdicts["UI"] != HOLDS:
        log.warning("(UI) does not hold at z=%g (integral %.4g >= threshold %.4g); "
                    "uniqueness of the Gibbs state is not guaranteed",
                    params.z, report.integral_I, report.ui_threshold)
    jobs = range(params.n_chains)
    if workers > 1 and params.n_chains > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda i: _run_chain(box, p, params, i), jobs))
    else:
        results = [_run_chain(box, p, params, i) for i in jobs]
    samples = [c for r in results for c in r[0]]
    acc = sum(r[1] for r in results)
    prop = sum(r[2] for r in results)
    names = ("birth", "death", "translate")
    rates = {nm: (float(a / q) if q else 0.0) for nm, a, q in zip(names, acc, prop)}
    meta = {
        "thin": [r[3] for r in results],
        "iat_count": [r[4] for r in results],
        "moves_per_sweep": params.sweep_moves(box),
        "ui_verdict": report.verdicts["UI"],
    }
    return GibbsEnsemble(samples, params, box, p, rates, meta)


# ---------------------------------------------------------------------------
# Georgii-Nguyen-Zessin check


class WindowIndicator:
    """F(gamma, x) = 1 if x lies in the window [lo, hi)."""

    def __init__(self, lo, hi):
        self.lo = np.asarray(lo, float)
        self.hi = np.asarray(hi, float)
        self.name = "window" + "x".join(f"[{a:g},{b:g})" for a, b in zip(self.lo, self.hi))

    def __call__(self, c, xs, added=False):
        return np.all((xs >= self.lo) & (xs < self.hi), axis=1).astype(float)


class NeighborCountExp:
    """F(gamma, x) = exp(-#{y in gamma : |x - y| < radius}); x itself counts."""

    def __init__(self, radius=1.0):
        self.radius = float(radius)
        self.name = f"exp_neighbors_r{self.radius:g}"

    def __call__(self, c, xs, added=False):
        cnt = np.array([c.count_within(x, self.radius) for x in xs], dtype=float)
        return np.exp(-(cnt + (1.0 if added else 0.0)))


class NearestNeighborRatio:
    """F(gamma, x) = min(1, dist(x, gamma \\ {x}) / scale)."""

    def __init__(self, scale=1.0):
        self.scale = float(scale)
        self.name = f"nn_ratio_s{self.scale:g}"

    def __call__(self, c, xs, added=False):
        if c.n == 0 or (not added and c.n == 1):
            return np.ones(len(xs))
        pts = c.points
        out = np.empty(len(xs))
        for q, x in enumerate(xs):
            dx = c.box.min_image(pts - x)
            r2 = np.sum(dx * dx, axis=1)
            if not added:
                r2 = np.sort(r2)[1:]  # drop x itself
            out[q] = min(1.0, math.sqrt(r2.min()) / self.scale)
        return out


def quasi_random_points(box: TorusBox, n: int) -> np.ndarray:
    """Unscrambled Sobol points in the unit cube (rotated per sample by the caller)."""
    return qmc.Sobol(box.d, scramble=False).random(n)


def gnz_residual(e: GibbsEnsemble, test_fn, p: PairPotential | None = None, z: float | None = None,
                 n_inner: int = 256, seed: int = 0) -> dict:
    """Both sides of the GNZ identity, averaged over the ensemble.

    lhs: sum over x in gamma of F(gamma, x).  rhs: z times the integral over the
    box of exp(-W({x}|gamma)) F(gamma + x, x), estimated with ``n_inner``
    Sobol points under a random rotation drawn per sample.
    """
    p = e.potential if p is None else p
    z = e.params.z if z is None else z
    base = quasi_random_points(e.box, n_inner)
    rng = stream(seed, 0)
    V = e.box.volume
    lhs = np.empty(len(e))
    rhs = np.empty(len(e))
    for s, c in enumerate(e.samples):
        lhs[s] = float(np.sum(test_fn(c, c.points, added=False))) if c.n else 0.0
        xs = ((base + rng.random(e.box.d)) % 1.0) * e.box.L
        w = np.exp(-c.local_energies_at(xs, p)) if c.n else np.ones(n_inner)
        rhs[s] = z * V * float(np.mean(w * test_fn(c, xs, added=True)))
    out = paired_z(lhs, rhs)
    out["name"] = f"gnz:{getattr(test_fn, 'name', 'F')}"
    out["n_inner"] = n_inner
    return out


# ---------------------------------------------------------------------------
# enumerable toy system


class TwoCellToy:
    """Discretised grand-canonical system: two sites of volume V/2, at most two points.

    Sites sit a distance ``separation`` apart; two points on one site interact
    through phi(0).  The chain uses the sampler's acceptance functions.  States
    are multisets of sites, written as sorted tuples.
    """

    states = [(), (0,), (1,), (0, 0), (0, 1), (1, 1)]

    def __init__(self, p: PairPotential, z: float, V: float, separation: float,
                 move_mix=(0.25, 0.25, 0.5), capacity: int = 2):
        self.z, self.V, self.mix, self.cap = float(z), float(V), move_mix, capacity
        self.phi = {(0, 0): float(p.radial(0.0)), (1, 1): float(p.radial(0.0)),
                    (0, 1): float(p.radial(separation)), (1, 0): float(p.radial(separation))}

    def energy(self, sites) -> float:
        return math.fsum(self.phi[a, b] for a, b in itertools.combinations(sites, 2))

    def local(self, site, others) -> float:
        return math.fsum(self.phi[site, o] for o in others)

    def stationary(self) -> dict:
        """Brute force over labelled tuples: weight (z V/2)^n e^{-E} / n!, aggregated to multisets."""
        w = {s: 0.0 for s in self.states}
        v = self.V / 2
        for n in range(self.cap + 1):
            for tup in itertools.product((0, 1), repeat=n):
                w[tuple(sorted(tup))] += (self.z * v) ** n * math.exp(-self.energy(tup)) / math.factorial(n)
        tot = sum(w.values())
        return {s: x / tot for s, x in w.items()}

    def transitions(self, state):
        """List of (probability, next_state) for one move from ``state``."""
        pb, pd, pt = self.mix
        n = len(state)
        out = []
        if n < self.cap:
            for s in (0, 1):
                a = K.birth_acceptance(self.z, self.V, n, self.local(s, state))
                out.append((pb * 0.5 * a, tuple(sorted(state + (s,)))))
        if n > 0:
            for i in range(n):
                rest = state[:i] + state[i + 1:]
                a = K.death_acceptance(self.z, self.V, n, self.local(state[i], rest))
                out.append((pd / n * a, rest))
                for s in (0, 1):
                    dE = self.local(s, rest) - self.local(state[i], rest)
                    out.append((pt / n * 0.5 * K.translate_acceptance(dE), tuple(sorted(rest + (s,)))))
        stay = 1.0 - sum(q for q, _ in out)
        out.append((stay, state))
        return out

    def transition_matrix(self) -> np.ndarray:
        idx = {s: i for i, s in enumerate(self.states)}
        P = np.zeros((len(self.states), len(self.states)))
        for s in self.states:
            for q, t in self.transitions(s):
                P[idx[s], idx[t]] += q
        return P

    def run(self, n_steps: int, seed: int = 0) -> dict:
        """Empirical occupation frequencies of a chain started empty."""
        rng = stream(seed, 0)
        pb, pd, _ = self.mix
        U = rng.random((n_steps, 4))
        state = []
        visits = {s: 0 for s in self.states}
        for k in range(n_steps):
            n = len(state)
            u = U[k, 0]
            if u < pb:
                s = int(U[k, 1] * 2)
                if n < self.cap and U[k, 2] < K.birth_acceptance(self.z, self.V, n, self.local(s, state)):
                    state.append(s)
            elif u < pb + pd:
                if n:
                    i = min(int(U[k, 1] * n), n - 1)
                    rest = state[:i] + state[i + 1:]
                    if U[k, 2] < K.death_acceptance(self.z, self.V, n, self.local(state[i], rest)):
                        state = rest
            elif n:
                i = min(int(U[k, 1] * n), n - 1)
                s = int(U[k, 3] * 2)
                rest = state[:i] + state[i + 1:]
                if U[k, 2] < K.translate_acceptance(self.local(s, rest) - self.local(state[i], rest)):
                    state[i] = s
            visits[tuple(sorted(state))] += 1
        return {s: v / n_steps for s, v in visits.items()}


def total_variation(p: dict, q: dict) -> float:
    return 0.5 * sum(abs(p[k] - q.get(k, 0.0)) for k in p)


# ---------------------------------------------------------------------------
# persistence


def save_ensemble(e: GibbsEnsemble, directory) -> Path:
    """Write params.json, stats.json and config_00000.txt, ... into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params = asdict(e.params)
    params["box"] = {"d": e.box.d, "L": e.box.L}
    params["potential"] = e.potential.to_spec()
    (d / "params.json").write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")
    stats = {"acceptance_rates": e.acceptance_rates, "n_samples": len(e), **e.meta}
    (d / "stats.json").write_text(json.dumps(stats, indent=2, sort_keys=True) + "\n")
    for i, c in enumerate(e.samples):
        (d / f"config_{i:05d}.txt").write_text(c.to_text())
    return d


def load_ensemble(directory) -> GibbsEnsemble:
    d = Path(directory)
    params = json.loads((d / "params.json").read_text())
    box = TorusBox(**params.pop("box"))
    pot = PairPotential.from_spec(params.pop("potential"))
    params["move_mix"] = tuple(params["move_mix"])
    sp = SamplerParams(**params)
    stats = json.loads((d / "stats.json").read_text())
    samples = [Configuration.from_text(f.read_text()) for f in sorted(d.glob("config_*.txt"))]
    rates = stats.pop("acceptance_rates")
    stats.pop("n_samples", None)
    return GibbsEnsemble(samples, sp, box, pot, rates, stats)
