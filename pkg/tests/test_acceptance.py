"""Desk-scale acceptance criteria; the session summary lists one PASS/FAIL line per criterion."""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from invbo import analysis, cli, verify
from invbo import group as grp
from invbo import kernel as kn
from invbo.objectives import build_family, count_family

pytestmark = pytest.mark.acceptance

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.1f} s, limit {self.limit} s"


def test_criterion_01_kernel_invariance():
    with Clock(10):
        r = verify.kernel_invariance(groups=verify.DEFAULT_GROUPS, tuples=100, tol=1e-10, mode_tol=1e-12)
    assert r.ok, f"{r.detail}: {r.counterexample}"


def test_criterion_02_gp_oracle():
    with Clock(5):
        r = verify.gp_oracle(problems=20, tol=1e-8)
    assert r.ok, f"{r.detail}: {r.counterexample}"


def test_criterion_03_projection_contraction():
    with Clock(10):
        r = verify.projection(functions=50, tol=1e-10)
    assert r.ok, f"{r.detail}: {r.counterexample}"


def test_criterion_04_lower_bound_construction():
    with Clock(30):
        G = grp.symmetric(3)
        w = 1 / 10 / 6 ** (1 / 2.5)
        c = count_family(G, w, 2.5)
        assert (c.K, c.N_prime, c.W0, c.free_orbits) == (10, 1000, 720, 120)
        assert c.M >= 167 == math.ceil(c.N_prime / 6)
        assert c.W0_enumerated == c.W0
        r = verify.orbit_counts(K=10)
        assert r.ok, r.counterexample
        r = verify.disjoint_supports(K=10, epsilon=0.05, tol=1e-9)
        assert r.ok, r.counterexample


def test_criterion_05_kl_and_bound_calculators():
    with Clock(1):
        for eps, sigma in [(0.05, 0.2), (0.1, 0.1), (0.03, 0.7), (0.2, 0.3)]:
            assert analysis.kl_gaussian_same_var(0.0, 4 * eps, sigma) == 8 * eps**2 / sigma**2
        inp = dict(epsilon=0.01, B=1.0, sigma=0.1, delta=0.1, d=2, nu=2.5)
        r = analysis.lower_bound_T(analysis.BoundInputs(**inp, group_size=1, delta_w=0.0))
        inner = math.exp(-1) / (2 * 0.01)
        N = math.floor(inner) ** (2 / 2.5)
        info = 0.1**2 / (8 * 0.01**2) * math.log(1 / 0.24)
        assert r.terms["width_inverse"] == pytest.approx(inner, rel=1e-14)
        assert r.terms["N"] == pytest.approx(N, rel=1e-14)
        assert r.terms["information"] == pytest.approx(info, rel=1e-14)
        assert r.terms["group_factor"] == 1.0 and r.terms["orbit_fraction"] == 1.0
        assert r.value == pytest.approx(N * info - info, rel=1e-12)
        for nu, d in [(2.5, 2), (1.5, 3)]:
            a, b = 2, 7
            lo = [analysis.lower_bound_T(analysis.BoundInputs(**dict(inp, nu=nu, d=d), group_size=g)).terms["leading"]
                  for g in (a, b)]
            hi = [analysis.upper_bound_T(0.1, g, nu, d).value for g in (a, b)]
            assert math.log(lo[0] / lo[1]) / math.log(b / a) == pytest.approx((nu + d) / nu, rel=1e-12)
            assert math.log(hi[0] / hi[1]) / math.log(b / a) == pytest.approx((2 * nu + d - 1) / (2 * nu), rel=1e-12)


def test_criterion_06_empirical_mig():
    with Clock(60):
        axis = np.linspace(0, 1, 20)
        X = np.stack(np.meshgrid(axis, axis, indexing="ij"), -1).reshape(-1, 2)
        base = kn.Matern(2.5, 0.12)
        rep = analysis.empirical_mig({"trivial": base, "S2": kn.Symmetrized(base, grp.symmetric(2))}, X, 50, 0.01,
                                     reference="trivial")
    ratio = rep.ratios()["S2"]
    assert ratio[49] < ratio[4], f"ratio at T=50 {ratio[49]:.6g} vs T=5 {ratio[4]:.6g}"
    not_below = np.flatnonzero(~(rep.gammas["S2"] < rep.gammas["trivial"])) + 1
    assert not_below.size == 0, f"gamma_S2 not strictly below gamma_trivial at T in {not_below.tolist()}"


@pytest.fixture(scope="module")
def synth_objectives(tmp_path_factory):
    out = tmp_path_factory.mktemp("objectives")
    cfg = cli.load_config(CONFIGS / "synth_s2.yaml")
    cli.cmd_synth(cfg, out)
    return out


def _run_config(objectives: Path, **overrides) -> dict:
    cfg = cli.load_config(CONFIGS / "run_s2.yaml")
    cfg["run"]["objective"] = str(objectives / "objective_seed{seed}.json")
    cfg["run"].update(overrides)
    return cfg


def test_criterion_07_regret_ordering(synth_objectives, tmp_path):
    with Clock(600):
        cfg = _run_config(synth_objectives)
        assert cfg["run"]["bo"]["horizon"] == 60 and cfg["run"]["bo"]["ucb_beta"] == 2.0
        rep = cli.cmd_run(cfg, tmp_path)
    assert rep["failures"] == []
    med = {k: v["final_median"] for k, v in rep["summary"].items()}
    assert all(v["seeds"] == 16 for v in rep["summary"].values())
    problems = []
    for a in ("mvr", "ucb"):
        inv, std, cbo = med[f"invariant/{a}"], med[f"standard/{a}"], med[f"standard/constrained_{a}"]
        if not inv < std:
            problems.append(f"{a}: invariant {inv:.5g} not below standard {std:.5g}")
        if cbo < inv:
            problems.append(f"{a}: constrained {cbo:.5g} below invariant {inv:.5g}")
    assert not problems, "; ".join(problems)


def test_criterion_08_distinguishing_consistency():
    with Clock(600):
        G = grp.symmetric(2)
        w = (1 / 6) / 2**0.4
        fam = build_family(G, w, 0.05, 2.5)
        c = count_family(G, w, 2.5)
        assert 15 <= c.M <= 25
        floor = analysis.distinguishing_floor(c.M, c.rho_w, 0.2, 0.05, 0.1)
        T = int(floor // 2)
        free = fam.free_members()
        r = analysis.distinguishing_experiment(fam, free[0], free[len(free) // 2], "mvr", T=T, sigma=0.2,
                                               trials=100, seed=0, delta=0.1)
    assert r.trials == 100
    assert min(r.success_f, r.success_fprime) < 0.9, r.summary()


def test_criterion_09_sphere_geometry():
    with Clock(10):
        r = verify.taylor_bracket(widths=(1e-3, 1e-2, 1e-1))
        assert r.ok, r.counterexample
        r = verify.sphere_partition(points=1000)
        assert r.ok, r.counterexample


def test_criterion_10_run_determinism(synth_objectives, tmp_path):
    with Clock(60):
        cfg = _run_config(synth_objectives, seeds=[0, 1, 2])
        cfg["run"]["bo"] = dict(cfg["run"]["bo"], horizon=20)
        cli.cmd_run(cfg, tmp_path / "first")
        cli.cmd_run(cfg, tmp_path / "second")
    files = sorted(p.relative_to(tmp_path / "first") for p in (tmp_path / "first").rglob("*.csv"))
    assert len(files) == 3 * 6 + 2
    for f in files:
        assert (tmp_path / "first" / f).read_bytes() == (tmp_path / "second" / f).read_bytes(), str(f)
    assert json.loads((tmp_path / "first" / "summary.json").read_text())["failures"] == []
