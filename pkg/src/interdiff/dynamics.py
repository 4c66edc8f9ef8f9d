"""Euler-Maruyama integration of the two equilibrium particle diffusions.

Interacting diffusions move each particle with no drift and diffusion
coefficient A(gamma, x) = exp(sum_{y != x} phi(x - y)):

    dx = sqrt(2 A(gamma, x)) dB      (Ito)

so the generator is -sum_x A(gamma, x) Laplacian_x.  Gradient dynamics are the
classical interacting Brownian particles dx = -sum grad phi(x - y) dt + sqrt(2) dB.
Both updates are synchronous: coefficients are frozen at the start of a step.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _kernels as K
from .configuration import Configuration, TorusBox, cells_per_side
from .errors import NonFiniteCoefficient, NonFiniteForce, StepTooLarge, TooFewPoints, ValidationError
from .potential import PairPotential
from .rng import stream

INTERACTING = "interacting"
GRADIENT = "gradient"
FREE = "free_brownian"
KINDS = (INTERACTING, GRADIENT, FREE)


@dataclass(frozen=True)
class DynamicsSpec:
    kind: str
    dt: float
    t_end: float
    record_every: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.dt > 0 or not self.t_end >= 0:
            raise ValidationError("dt must be positive and t_end nonnegative")
        if self.record_every < 1:
            raise ValidationError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass
class TrajectoryRecord:
    """Recorded unwrapped positions, shape (n_records, n, d); row k is at ``times[k]``.

    Particle i keeps its index for the whole run, so rows give tagged paths.
    """

    times: np.ndarray
    positions: np.ndarray
    box: TorusBox
    spec: DynamicsSpec

    @property
    def n(self) -> int:
        return self.positions.shape[1]

    def __len__(self):
        return len(self.times)

    def snapshot(self, k: int) -> Configuration:
        return Configuration(self.box, self.positions[k])

    @property
    def snapshots(self) -> list:
        return [self.snapshot(k) for k in range(len(self))]

    def msd(self) -> np.ndarray:
        """Mean squared displacement from the first record, averaged over particles."""
        if self.n == 0:
            return np.zeros(len(self))
        dx = self.positions - self.positions[0]
        return np.mean(np.sum(dx * dx, axis=2), axis=1)


def _kind_code(kind):
    return K.GRADIENT if kind == GRADIENT else K.INTERACTING


def _effective_potential(kind, p):
    return PairPotential.zero() if kind == FREE else p


def step_bound(box: TorusBox, p: PairPotential) -> float:
    """Largest allowed single-step displacement: half a cell width (L/2 without interaction)."""
    return box.L / cells_per_side(box.L, p.cutoff) / 2.0


def _raise_status(status, step):
    if status == K.STEP_TOO_LARGE:
        raise StepTooLarge(f"displacement above half a cell width at step {step}; reduce dt")
    if status == K.NONFINITE_COEFFICIENT:
        raise NonFiniteCoefficient(f"diffusion coefficient overflowed at step {step}")
    if status == K.NONFINITE_FORCE:
        raise NonFiniteForce(f"non-finite force at step {step}")


def _integrate(pos, unwrapped, box, p, kind, dt, xi, record_every, out):
    p.check_fits(box.L)
    m = cells_per_side(box.L, p.cutoff)
    status, step = K.sde_steps(pos, unwrapped, float(box.L), m, box.d, *p.kernel_args(),
                               _kind_code(kind), float(dt), xi, step_bound(box, p), record_every, out)
    _raise_status(status, step)


def _one_step(c, dt, p, rng, kind):
    pos = c.points.copy()
    unwrapped = pos.copy()
    xi = rng.standard_normal((1, c.n, c.box.d))
    out = np.empty((1, c.n, c.box.d))
    _integrate(pos, unwrapped, c.box, p, kind, dt, xi, 1, out)
    return Configuration(c.box, pos)


def step_interacting(c: Configuration, dt: float, p: PairPotential, rng) -> Configuration:
    """x <- x + sqrt(2 A(c, x) dt) xi for all points at once; no drift."""
    return _one_step(c, dt, p, rng, INTERACTING)


def step_gradient(c: Configuration, dt: float, p: PairPotential, rng) -> Configuration:
    """x <- x - sum_y grad phi(x - y) dt + sqrt(2 dt) xi for all points at once."""
    return _one_step(c, dt, p, rng, GRADIENT)


def evolve(c0: Configuration, spec: DynamicsSpec, p: PairPotential, index: int = 0,
           chunk_values: int = 1 << 21) -> TrajectoryRecord:
    """Integrate from ``c0`` and record every ``record_every`` steps (time 0 included).

    Noise comes from the stream ``(spec.seed, index)``, drawn in blocks of
    whole recording intervals of at most ``chunk_values`` numbers.
    """
    p = _effective_potential(spec.kind, p)
    box = c0.box
    n, d = c0.n, box.d
    n_rec = spec.n_steps // spec.record_every
    times = spec.dt * spec.record_every * np.arange(n_rec + 1)
    out = np.empty((n_rec + 1, n, d))
    pos = c0.points.copy()
    unwrapped = pos.copy()
    out[0] = unwrapped
    rng = stream(spec.seed, index)
    per_record = spec.record_every * max(n * d, 1)
    block = max(1, chunk_values // per_record)
    done = 0
    while done < n_rec:
        k = min(block, n_rec - done)
        xi = rng.standard_normal((k * spec.record_every, n, d))
        _integrate(pos, unwrapped, box, p, spec.kind, spec.dt, xi, spec.record_every,
                   out[done + 1: done + 1 + k])
        done += k
    return TrajectoryRecord(times, out, box, spec)


def evolve_many(initial: list, spec: DynamicsSpec, p: PairPotential, workers: int = 1) -> list:
    """Independent trajectories; trajectory i uses stream ``(spec.seed, i)``."""
    jobs = list(enumerate(initial))
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(lambda a: evolve(a[1], spec, p, index=a[0]), jobs))
    return [evolve(c, spec, p, index=i) for i, c in jobs]


def collision_monitor(tr: TrajectoryRecord) -> dict:
    """Smallest pair distance seen over all snapshots.

    ``min_distance`` is None with fewer than two particles.  In d=1 points can
    meet, and the result carries the flag ``no_claim_d1``.
    """
    flag = "no_claim_d1" if tr.box.d == 1 else None
    try:
        dmin = min(tr.snapshot(k).min_pair_distance() for k in range(len(tr)))
    except TooFewPoints:
        dmin = None
    return {"min_distance": dmin, "d": tr.box.d, "flag": flag}


# ---------------------------------------------------------------------------
# persistence


def save_trajectory(tr: TrajectoryRecord, directory) -> Path:
    """Snapshots as ``snap_00000.txt`` (wrapped positions) plus ``times.csv`` and the unwrapped array."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "times.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "time", "file"])
        for k, t in enumerate(tr.times):
            name = f"snap_{k:05d}.txt"
            (d / name).write_text(tr.snapshot(k).to_text())
            w.writerow([k, repr(float(t)), name])
    np.save(d / "unwrapped.npy", tr.positions)
    spec = {"kind": tr.spec.kind, "dt": tr.spec.dt, "t_end": tr.spec.t_end,
            "record_every": tr.spec.record_every, "seed": tr.spec.seed}
    (d / "spec.json").write_text(json.dumps(spec, indent=2, sort_keys=True) + "\n")
    return d


def load_trajectory(directory) -> TrajectoryRecord:
    d = Path(directory)
    spec = DynamicsSpec(**json.loads((d / "spec.json").read_text()))
    with open(d / "times.csv") as fh:
        rows = list(csv.DictReader(fh))
    times = np.array([float(r["time"]) for r in rows])
    first = Configuration.from_text((d / rows[0]["file"]).read_text())
    positions = np.load(d / "unwrapped.npy")
    return TrajectoryRecord(times, positions, first.box, spec)


def write_observables(path, tr: TrajectoryRecord, observables: dict):
    """Append JSON lines ``{"time", "observable", "value"}`` for each snapshot and observable."""
    with open(path, "a") as fh:
        for k, t in enumerate(tr.times):
            c = tr.snapshot(k)
            for name, fn in observables.items():
                fh.write(json.dumps({"time": float(t), "observable": name, "value": float(fn(c))}) + "\n")


def increment_variance(c: Configuration, p: PairPotential, dt: float, n_draws: int, kind: str = INTERACTING,
                       seed: int = 0) -> np.ndarray:
    """Per-particle, per-coordinate sample variance of one-step increments (repeated from ``c``)."""
    rng = stream(seed, 0)
    incs = np.empty((n_draws, c.n, c.box.d))
    p_eff = _effective_potential(kind, p)
    for k in range(n_draws):
        pos = c.points.copy()
        unwrapped = pos.copy()
        xi = rng.standard_normal((1, c.n, c.box.d))
        _integrate(pos, unwrapped, c.box, p_eff, kind, dt, xi, 1, np.empty((1, c.n, c.box.d)))
        incs[k] = unwrapped - c.points
    return incs.var(axis=0, ddof=1)

