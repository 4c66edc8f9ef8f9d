import json
import math
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from interdiff.cli import ENV_OUTPUT, RunConfig, load_config, main
from interdiff.errors import ValidationError

BUMP = {"kind": "gaussian_bump", "A": 1.0, "sigma": 1.0}


def _write(tmp_path, name, cfg):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return path


def _run(tmp_path, cfg, name="cfg.json"):
    path = _write(tmp_path, name, cfg)
    return main(["run", str(path)])


def _files(d: Path):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file() and p.name != "manifest.json"}


def _run_twice(tmp_path, cfg):
    """Run the same config twice into the same directory; return both file sets."""
    out = tmp_path / "out"
    cfg = dict(cfg, output_dir=str(out))
    sets = []
    for _ in range(2):
        assert _run(tmp_path, cfg) == 0
        sets.append(_files(out))
        shutil.rmtree(out)
    return sets


def test_config_rejects_unknown_keys(tmp_path):
    path = _write(tmp_path, "bad.json", {"experiment": "audit", "nonsense": 1})
    with pytest.raises(ValidationError):
        load_config(path)
    assert main(["run", str(path)]) == 2
    nested = _write(tmp_path, "bad2.json", {"experiment": "sample", "sampler": {"z": 1.0, "sweeps": 3}})
    assert main(["run", str(nested)]) == 2
    assert main(["run", str(tmp_path / "missing.json")]) == 2


def test_defaults_resolve():
    cfg = RunConfig(experiment="audit")
    assert cfg.box.d == 2 and cfg.sampler.z == 0.2 and cfg.scale.epsilon == 0.25


def test_audit_zero(tmp_path):
    out = tmp_path / "audit"
    assert _run(tmp_path, {"experiment": "audit", "output_dir": str(out)}) == 0
    rep = json.loads((out / "audit.json").read_text())
    assert rep["verdicts"]["UI"] == "holds"
    man = json.loads((out / "manifest.json").read_text())
    assert {"config_sha256", "seed", "versions", "wall_time_s"} <= set(man)
    resolved = json.loads((out / "config.resolved.json").read_text())
    assert resolved["sampler"]["n_samples"] == 1000


def test_sample_byte_identical(tmp_path):
    base = {"experiment": "sample", "potential": BUMP, "seed": 3,
            "sampler": {"z": 0.3, "n_samples": 20, "thin": 5}}
    a, b = _run_twice(tmp_path, base)
    assert "ensemble/config_00000.txt" in a
    assert a == b
    c, _ = _run_twice(tmp_path, dict(base, seed=4))
    assert c["ensemble/config_00000.txt"] != a["ensemble/config_00000.txt"]


def test_evolve_outputs_and_determinism(tmp_path):
    base = {"experiment": "evolve", "potential": BUMP, "seed": 1, "sampler": {"z": 0.3, "thin": 3},
            "dynamics": {"dt": 1e-3, "t_end": 0.1, "record_every": 10, "n_trajectories": 2}}
    a, b = _run_twice(tmp_path, base)
    assert a == b
    assert "trajectories/traj_001/times.csv" in a
    assert json.loads(a["collisions.json"])[0]["d"] == 2
    assert len(a["observables.jsonl"].splitlines()) == 22


def test_numerical_error_exit_code(tmp_path):
    cfg = {"experiment": "evolve", "potential": BUMP, "output_dir": str(tmp_path / "o"),
           "sampler": {"z": 0.3, "thin": 3}, "dynamics": {"dt": 10.0, "t_end": 100.0, "n_trajectories": 1}}
    assert _run(tmp_path, cfg) == 3
    assert not (tmp_path / "o" / "manifest.json").exists()
    assert main(["report", str(tmp_path / "o")]) == 2


def test_env_override(tmp_path, monkeypatch):
    target = tmp_path / "env_out"
    monkeypatch.setenv(ENV_OUTPUT, str(target))
    assert _run(tmp_path, {"experiment": "audit", "output_dir": str(tmp_path / "ignored")}) == 0
    assert (target / "manifest.json").is_file()
    assert not (tmp_path / "ignored").exists()


def test_check_and_report(tmp_path, capsys):
    out = tmp_path / "chk"
    cfg = {"experiment": "check", "output_dir": str(out), "seed": 2, "sampler": {"z": 0.5, "n_samples": 300}}
    assert _run(tmp_path, cfg) == 0
    rows = [json.loads(s) for s in (out / "identities.jsonl").read_text().splitlines()]
    assert {"name", "lhs", "rhs", "se_lhs", "se_rhs", "z_score", "n_samples"} <= set(rows[0])
    assert len(json.loads((out / "gnz.json").read_text())) == 3
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    assert "ALL CHECKS PASSED" in capsys.readouterr().out
    checks = json.loads((out / "checks.json").read_text())
    checks[0]["passed"] = False
    checks[0]["value"] = 9.0
    (out / "checks.json").write_text(json.dumps(checks))
    assert main(["report", str(out)]) == 1
    assert f"FAILED: {checks[0]['name']}" in capsys.readouterr().out


def test_report_empty_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_estimate(tmp_path):
    out = tmp_path / "est"
    cfg = {"experiment": "estimate", "output_dir": str(out), "sampler": {"z": 1.0, "n_samples": 300},
           "estimate": {"bins": 16, "xi": 1.0}}
    assert _run(tmp_path, cfg) == 0
    est = json.loads((out / "estimates.json").read_text())
    assert est["ruelle"]["violation_fraction"] == 0.0
    assert (out / "k2.csv").read_text().startswith("bin_center,k2,se")


def test_scale_zero_potential(tmp_path):
    out = tmp_path / "scale"
    cfg = {"experiment": "scale", "output_dir": str(out), "box": {"d": 2, "L": 4.0}, "seed": 0,
           "scale": {"epsilon": 0.25, "dt": 0.01, "t_end": 20.0, "n_trajectories": 8,
                     "gaussianity_samples": 200}}
    assert _run(tmp_path, cfg) == 0
    res = json.loads((out / "scaling.json").read_text())
    fit = res["fits"]["interacting"]
    assert fit["predicted_rate"] == pytest.approx(4 * math.pi ** 2)
    assert abs(fit["rate"] / fit["predicted_rate"] - 1) < 0.15
    assert (out / "acov_interacting.csv").is_file() and (out / "fluctuations.csv").is_file()


def test_scale_box_mismatch(tmp_path):
    cfg = {"experiment": "scale", "output_dir": str(tmp_path / "s"), "box": {"d": 2, "L": 5.0}}
    assert _run(tmp_path, cfg) == 2


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "interdiff", "report", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2 and "manifest" in r.stderr
