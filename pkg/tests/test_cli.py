import json
import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from invbo import cli

MATERN = {"kind": "matern", "nu": 2.5, "lengthscale": 0.2}
INV = {"kind": "symmetrized", "group": "symmetric:2", "base": MATERN}


def write(tmp_path, name, body):
    p = tmp_path / f"{name}.yaml"
    p.write_text(yaml.safe_dump({"schema": "invbo.config/1", **body}))
    return p


def tree(d: Path) -> dict:
    return {str(p.relative_to(d)): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("synth")
    cfg = write(tmp, "synth", {"synth": {"kernel": INV, "n": 16, "domain": "hypercube:2", "seeds": [0, 1],
                                         "search_count": 2000}})
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp / "a")]) == 0
    return tmp, cfg


def test_synth_is_deterministic(synth_dir):
    tmp, cfg = synth_dir
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp / "b"), "--jobs", "2"]) == 0
    a, b = tree(tmp / "a"), tree(tmp / "b")
    assert set(a) == {"objective_seed0.json", "objective_seed1.json", "manifest.json"}
    assert a == b
    manifest = json.loads(a["manifest.json"])
    assert len(manifest["objectives"]) == 2


def _run_cfg(tmp, horizon=3):
    return write(tmp, "run", {"run": {
        "objective": str(tmp / "a" / "objective_seed{seed}.json"),
        "seeds": [0, 1], "algorithms": ["mvr", "ucb"],
        "kernels": {"standard": MATERN, "invariant": INV},
        "constrained": {"group": "symmetric:2", "kernel": "standard", "algorithms": ["ucb"]},
        "bo": {"horizon": horizon, "noise_std": 0.01, "candidate_count": 200, "domain": "hypercube:2"}}})


def test_run_outputs_and_reproducibility(synth_dir, capsys):
    tmp, _ = synth_dir
    cfg = _run_cfg(tmp)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp / "r1")]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp / "r2"), "--jobs", "2"]) == 0
    r1, r2 = tree(tmp / "r1"), tree(tmp / "r2")
    assert r1 == r2
    traces = sorted(k for k in r1 if k.startswith("traces/"))
    assert len(traces) == 2 * 5
    assert "traces/standard__constrained_ucb__seed0.csv" in traces
    assert {"raw.csv", "aggregate.csv", "summary.json"} <= set(r1)
    summary = json.loads(r1["summary.json"])
    assert summary["failures"] == []
    assert "median final simple regret" in capsys.readouterr().out


def test_run_single_step(synth_dir):
    tmp, _ = synth_dir
    cfg = _run_cfg(tmp, horizon=1)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp / "r3")]) == 0
    body = (tmp / "r3" / "traces" / "invariant__mvr__seed0.csv").read_text().splitlines()
    assert body[-1].startswith("1,") and sum(not l.startswith("#") for l in body) == 2


def test_out_dir_from_env_and_config(tmp_path, monkeypatch):
    cfg = write(tmp_path, "b", {"out": "here", "bounds": {"inputs": {"epsilon": 0.05, "B": 1.0, "sigma": 0.1,
                                                                       "delta": 0.1, "d": 2, "nu": 2.5}}})
    assert cli.main(["bounds", "--config", str(cfg)]) == 0
    assert (tmp_path / "here" / "bounds.json").is_file()
    monkeypatch.setenv("INVBO_OUT_DIR", str(tmp_path / "env"))
    assert cli.main(["bounds", "--config", str(cfg)]) == 0
    assert (tmp_path / "env" / "bounds.csv").is_file()


def test_bounds_trivial_group(tmp_path):
    inputs = {"epsilon": 0.05, "B": 1.0, "sigma": 0.1, "delta": 0.1, "d": 2, "nu": 2.5}
    cfg = write(tmp_path, "b", {"bounds": {"group_sizes": [1], "inputs": inputs}})
    assert cli.main(["bounds", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "bounds.json").read_text())
    lo = rep["bounds"][0]["lower"]
    assert lo["terms"]["group_factor"] == 1.0
    assert lo["value"] == pytest.approx(lo["terms"]["N"] * lo["terms"]["information"] - lo["terms"]["information"])


def test_mig_command(tmp_path):
    cfg = write(tmp_path, "m", {"mig": {"candidates": {"domain": "hypercube:2", "scheme": "grid", "count": 100},
                                        "T": 5, "tau": 0.01, "reference": "trivial",
                                        "kernels": {"trivial": MATERN, "S2": INV}}})
    assert cli.main(["mig", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    lines = (tmp_path / "o" / "mig.csv").read_text().splitlines()
    assert lines[0] == "# schema: invbo.mig/1" and len(lines) == 4 + 5


@pytest.mark.parametrize("body,key", [
    ({"bounds": {}}, "bounds.inputs"),
    ({"run": {"seeds": [0]}}, "run.kernels"),
    ({"synth": {"kernel": {"kind": "nope"}, "n": 4}}, "synth.kernel"),
    ({"verify": {"bogus": {}}}, "verify.bogus"),
])
def test_config_errors_name_the_key(tmp_path, capsys, body, key):
    cmd = next(iter(body))
    cfg = write(tmp_path, "bad", body)
    assert cli.main([cmd, "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert key in capsys.readouterr().err


def test_schema_required(tmp_path, capsys):
    p = tmp_path / "x.yaml"
    p.write_text("bounds: {}\n")
    assert cli.main(["bounds", "--config", str(p)]) == 2
    assert "schema" in capsys.readouterr().err


def test_verify_subset_exit_code(tmp_path):
    skip = {k: False for k in ("disjoint_supports", "sphere_partition", "orbit_counts")}
    cfg = write(tmp_path, "v", {"verify": {**skip, "gp_oracle": {"problems": 3}, "projection": {"functions": 5}}})
    out = subprocess.run([sys.executable, "-m", "invbo.cli", "verify", "--config", str(cfg), "--out",
                          str(tmp_path / "o")], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.count("PASS") == 4
    rep = json.loads((tmp_path / "o" / "verify.json").read_text())
    assert all(c["ok"] for c in rep["checks"])
