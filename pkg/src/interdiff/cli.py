"""Command-line entry point: ``interdiff run <config.json>`` and ``interdiff report <dir>``."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path
from typing import Literal, Optional

import numpy as np
import pydantic
from pydantic import BaseModel, ConfigDict, Field

from . import __version__
from .configuration import TorusBox
from .cylinder import CylinderFunction, GaussianTest, Identity, SmoothBump, TanhQuadratic
from .dynamics import DynamicsSpec, collision_monitor, evolve_many, save_trajectory
from .errors import InterdiffError, MissingManifest, NumericalError, ValidationError
from .estimators import estimate_compressibility, estimate_k1, estimate_k2_radial, ruelle_bound_check
from .gibbs import (NearestNeighborRatio, NeighborCountExp, SamplerParams, WindowIndicator, gnz_residual,
                    sample_ensemble, save_ensemble)
from .identities import (THRESHOLD, check_form_representations, check_generator_symmetry, check_invariance,
                         write_reports)
from .potential import PairPotential, audit_conditions
from .scaling import (ScalingSpec, fluctuation_matrix, gaussianity_test, mode_autocorrelation, normalized_mode,
                      write_fluctuations_csv)

ENV_OUTPUT = "INTERDIFF_OUTPUT_DIR"
log = logging.getLogger("interdiff")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BoxConfig(_Strict):
    d: int = Field(2, ge=1, le=3)
    L: float = Field(10.0, gt=0)


class SamplerConfig(_Strict):
    z: float = Field(0.2, gt=0)
    n_samples: int = Field(1000, ge=1)
    burn_in: int = Field(200, ge=0)
    thin: Optional[int] = Field(None, ge=1)
    move_mix: tuple[float, float, float] = (0.25, 0.25, 0.5)
    max_displacement: float = Field(0.5, gt=0)
    n_chains: int = Field(1, ge=1)


class DynamicsConfig(_Strict):
    kind: Literal["interacting", "gradient", "free_brownian"] = "interacting"
    dt: float = Field(1e-3, gt=0)
    t_end: float = Field(1.0, ge=0)
    record_every: int = Field(10, ge=1)
    n_trajectories: int = Field(4, ge=1)


class CheckConfig(_Strict):
    gnz: bool = True
    identities: bool = True
    n_inner: int = Field(256, ge=1)
    threshold: float = Field(THRESHOLD, gt=0)


class EstimateConfig(_Strict):
    bins: int = Field(64, ge=1)
    r_max: Optional[float] = Field(None, gt=0)
    xi: Optional[float] = Field(None, gt=0)


class ScaleConfig(_Strict):
    epsilon: float = Field(0.25, gt=0, le=1)
    wave_vector: tuple[int, ...] = (1, 0)
    kinds: list[Literal["interacting", "gradient"]] = ["interacting"]
    dt: float = Field(0.01, gt=0)
    t_end: float = Field(20.0, gt=0)
    record_every: int = Field(1, ge=1)
    n_trajectories: int = Field(8, ge=1)
    max_lag_time: float = Field(0.05, gt=0)
    rate_tolerance: float = Field(0.15, gt=0)
    compressibility: Optional[float] = Field(None, gt=0)
    gaussianity_samples: int = Field(0, ge=0)


class RunConfig(_Strict):
    experiment: Literal["sample", "evolve", "check", "estimate", "scale", "audit"]
    potential: dict = Field(default_factory=lambda: {"kind": "zero"})
    box: BoxConfig = BoxConfig()
    seed: int = 0
    workers: int = Field(1, ge=1)
    output_dir: str = "interdiff_out"
    sampler: SamplerConfig = SamplerConfig()
    dynamics: DynamicsConfig = DynamicsConfig()
    check: CheckConfig = CheckConfig()
    estimate: EstimateConfig = EstimateConfig()
    scale: ScaleConfig = ScaleConfig()


# ---------------------------------------------------------------------------
# helpers


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.bool_,)):
        return bool(v)
    raise TypeError(f"not serialisable: {type(v)}")


def _check(name, value, passed, **extra) -> dict:
    return {"name": name, "value": value, "passed": bool(passed), **extra}


def _sampler(cfg: RunConfig, z=None, n_samples=None) -> SamplerParams:
    s = cfg.sampler
    return SamplerParams(z=s.z if z is None else z, n_samples=s.n_samples if n_samples is None else n_samples,
                         burn_in=s.burn_in, thin=s.thin, move_mix=s.move_mix,
                         max_displacement=s.max_displacement, seed=cfg.seed, n_chains=s.n_chains)


def _default_functions(box: TorusBox):
    L, d = box.L, box.d
    c1 = np.full(d, 0.3 * L)
    c2 = np.full(d, 0.5 * L)
    f1 = SmoothBump(c1, 0.2 * L, L)
    f2 = GaussianTest(c2, 0.1 * L, L)
    F = CylinderFunction(Identity(), [f1])
    G = CylinderFunction(TanhQuadratic([[1.0, 0.5], [0.5, -1.0]], [0.3, 0.2]), [f1, f2])
    return F, G


# ---------------------------------------------------------------------------
# experiments


def _exp_audit(cfg, box, p, out):
    rep = audit_conditions(p, cfg.sampler.z, box.d)
    _dump(out / "audit.json", rep.to_dict())
    return []


def _exp_sample(cfg, box, p, out):
    e = sample_ensemble(_sampler(cfg), box, p, workers=cfg.workers)
    save_ensemble(e, out / "ensemble")
    return []


def _exp_evolve(cfg, box, p, out):
    dc = cfg.dynamics
    e = sample_ensemble(_sampler(cfg, n_samples=dc.n_trajectories), box, p, workers=cfg.workers)
    spec = DynamicsSpec(dc.kind, dc.dt, dc.t_end, dc.record_every, cfg.seed)
    trs = evolve_many(e.samples, spec, p, workers=cfg.workers)
    mons = []
    for i, tr in enumerate(trs):
        save_trajectory(tr, out / "trajectories" / f"traj_{i:03d}")
        mons.append(collision_monitor(tr))
    with open(out / "observables.jsonl", "w") as fh:
        for i, tr in enumerate(trs):
            for t, m in zip(tr.times, tr.msd()):
                fh.write(json.dumps({"trajectory": i, "time": float(t), "observable": "msd", "value": float(m)}) + "\n")
    _dump(out / "collisions.json", mons)
    checks = []
    if box.d >= 2:
        dmin = min((m["min_distance"] for m in mons if m["min_distance"] is not None), default=None)
        if dmin is not None:
            checks.append(_check("no_collision_min_distance", dmin, dmin > 1e-6 * box.L))
    return checks


def _exp_check(cfg, box, p, out):
    cc = cfg.check
    e = sample_ensemble(_sampler(cfg), box, p, workers=cfg.workers)
    reports, checks = [], []
    if cc.gnz:
        L = box.L
        fns = [WindowIndicator(np.zeros(box.d), np.full(box.d, L / 2)), NeighborCountExp(1.0),
               NearestNeighborRatio(1.0)]
        gnz = [gnz_residual(e, f, p, n_inner=cc.n_inner, seed=cfg.seed) for f in fns]
        _dump(out / "gnz.json", gnz)
        for g in gnz:
            checks.append(_check(g["name"], g["z_score"], abs(g["z_score"]) < cc.threshold, kind="z_score"))
    if cc.identities:
        F, G = _default_functions(box)
        reports = [check_form_representations(e, F, G, p, cc.n_inner, cfg.seed),
                   *check_generator_symmetry(e, F, G, p), check_invariance(e, G, p)]
        path = out / "identities.jsonl"
        path.write_text("")
        write_reports(path, reports)
        for r in reports:
            checks.append(_check(r.name, r.z_score, abs(r.z_score) < cc.threshold, kind="z_score"))
    return checks


def _exp_estimate(cfg, box, p, out):
    ec = cfg.estimate
    e = sample_ensemble(_sampler(cfg), box, p, workers=cfg.workers)
    rho = estimate_k1(e)
    h = estimate_k2_radial(e, ec.bins, ec.r_max)
    h.to_csv(out / "k2.csv")
    comp = estimate_compressibility(e, ec.bins, ec.r_max)
    summary = {"rho": rho[0], "se_rho": rho[1],
               "compressibility": {k: v.to_dict() for k, v in comp.items()}}
    checks = []
    a, b = comp["ursell_integral"], comp["fluctuation"]
    zc = (a.c - b.c) / math.hypot(a.se_c, b.se_c)
    checks.append(_check("compressibility_methods_agree", zc, abs(zc) < THRESHOLD, kind="z_score"))
    if ec.xi is not None:
        rb = ruelle_bound_check(e, ec.xi, h)
        summary["ruelle"] = rb
        checks.append(_check("ruelle_bound", rb["violation_fraction"], rb["violation_fraction"] == 0))
    _dump(out / "estimates.json", summary)
    return checks


def _exp_scale(cfg, box, p, out):
    sc = cfg.scale
    if not math.isclose(box.L * sc.epsilon, 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValidationError("box.L must equal 1/epsilon for scaling runs")
    if len(sc.wave_vector) != box.d:
        raise ValidationError("wave_vector must have one entry per dimension")
    results = {"epsilon": sc.epsilon, "k": list(sc.wave_vector)}
    checks = []
    n_init = max(sc.n_trajectories, sc.gaussianity_samples)
    e = sample_ensemble(_sampler(cfg, z=1.0, n_samples=n_init), box, p, workers=cfg.workers)
    rho, se_rho = estimate_k1(e)
    results.update(rho=rho, se_rho=se_rho)
    if sc.compressibility is not None:
        c_ref = sc.compressibility
    elif p.kind == "zero":
        c_ref = 1.0
    else:
        c_ref = estimate_compressibility(e)["ursell_integral"].c
    results["c_reference"] = c_ref
    if sc.gaussianity_samples:
        modes = [normalized_mode(sc.wave_vector, 1.0, "cos"), normalized_mode(sc.wave_vector, 1.0, "sin")]
        spec = ScalingSpec(sc.epsilon, modes)
        X = fluctuation_matrix(e.samples[: sc.gaussianity_samples], spec, rho)
        write_fluctuations_csv(out / "fluctuations.csv", X)
        g = gaussianity_test(X, c_ref, [f.integral_sq() for f in modes])
        results["gaussianity"] = g
        checks += [_check(f"gaussianity_{r['index']}", r["max_cf_deviation_se"], r["passed"]) for r in g]
    q2 = float(np.sum((2 * math.pi * np.asarray(sc.wave_vector)) ** 2))
    fits = {}
    for kind in sc.kinds:
        spec = DynamicsSpec(kind, sc.dt, sc.t_end, sc.record_every, cfg.seed)
        trs = evolve_many(e.samples[: sc.n_trajectories], spec, p, workers=cfg.workers)
        fit = mode_autocorrelation(trs, sc.wave_vector, sc.epsilon, sc.max_lag_time)
        predicted = q2 / c_ref * (rho if kind == "gradient" else 1.0)
        fit["predicted_rate"] = predicted
        acov = fit.pop("acov")
        lines = ["lag,acov"] + [f"{repr(float(i * fit['dt']))},{repr(float(v))}" for i, v in enumerate(acov)]
        (out / f"acov_{kind}.csv").write_text("\n".join(lines) + "\n")
        fits[kind] = fit
        rel = fit["rate"] / predicted - 1.0
        checks.append(_check(f"decay_rate_{kind}", fit["rate"], abs(rel) < sc.rate_tolerance,
                             predicted=predicted, rel_error=rel))
    results["fits"] = fits
    if {"interacting", "gradient"} <= set(fits):
        results["rate_ratio"] = fits["gradient"]["rate"] / fits["interacting"]["rate"]
    _dump(out / "scaling.json", results)
    return checks


EXPERIMENTS = {"audit": _exp_audit, "sample": _exp_sample, "evolve": _exp_evolve, "check": _exp_check,
               "estimate": _exp_estimate, "scale": _exp_scale}


def load_config(path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    try:
        return RunConfig.model_validate(raw)
    except pydantic.ValidationError as exc:
        raise ValidationError(str(exc)) from exc


def _versions():
    import numba
    import scipy
    return {"interdiff": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__, "pydantic": pydantic.VERSION}


def run(config_path) -> Path:
    """Execute one experiment; returns the artifact directory."""
    cfg = load_config(config_path)
    out = Path(os.environ.get(ENV_OUTPUT) or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.json"
    if manifest.exists():
        manifest.unlink()
    resolved = cfg.model_dump(mode="json")
    _dump(out / "config.resolved.json", resolved)
    box = TorusBox(cfg.box.d, cfg.box.L)
    p = PairPotential.from_spec(dict(cfg.potential))
    t0 = time.perf_counter()
    checks = EXPERIMENTS[cfg.experiment](cfg, box, p, out)
    wall = time.perf_counter() - t0
    _dump(out / "checks.json", checks)
    blob = json.dumps(resolved, sort_keys=True).encode()
    _dump(manifest, {"experiment": cfg.experiment, "config_sha256": hashlib.sha256(blob).hexdigest(),
                     "seed": cfg.seed, "workers": cfg.workers, "versions": _versions(),
                     "wall_time_s": wall})
    return out


def report(directory) -> int:
    """Print a summary of an artifact directory; returns 1 if any check failed."""
    d = Path(directory)
    if not (d / "manifest.json").is_file():
        raise MissingManifest(f"no manifest.json in {d}")
    man = json.loads((d / "manifest.json").read_text())
    print(f"experiment: {man['experiment']}  seed: {man['seed']}  config: {man['config_sha256'][:12]}")
    checks = json.loads((d / "checks.json").read_text()) if (d / "checks.json").is_file() else []
    for name in ("estimates.json", "scaling.json", "audit.json"):
        if (d / name).is_file():
            print(f"-- {name}")
            _print_summary(json.loads((d / name).read_text()))
    failed = [c for c in checks if not c["passed"]]
    for c in checks:
        tag = "PASS" if c["passed"] else "FAIL"
        print(f"{tag}  {c['name']}: {c['value']:.6g}")
    if failed:
        for c in failed:
            print(f"FAILED: {c['name']}")
        return 1
    print("ALL CHECKS PASSED")
    return 0


def _print_summary(obj, prefix=""):
    for k, v in obj.items():
        if isinstance(v, dict):
            _print_summary(v, prefix + k + ".")
        elif isinstance(v, (int, float, str, bool)) or v is None:
            print(f"   {prefix}{k} = {v}")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="interdiff", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment from a JSON config")
    r.add_argument("config")
    s = sub.add_parser("report", help="summarise an artifact directory")
    s.add_argument("directory")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "run":
            out = run(args.config)
            print(out)
            return 0
        return report(args.directory)
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except (ValidationError, MissingManifest) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InterdiffError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
