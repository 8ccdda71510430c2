"""Property suite behind ``invbo verify``; each check reports its first counterexample."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from invbo import analysis, gp
from invbo import group as grp
from invbo.kernel import Matern, Symmetrized
from invbo.objectives import FiniteSpanFunction, build_family, count_family

DEFAULT_GROUPS = ("symmetric:2", "symmetric:3", "cyclic:3", "cyclic:5", "dihedral:5", "block:6:3", "block:6:2")


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str
    counterexample: str = ""


def _sample_points(G: grp.FiniteGroup, rng, n):
    if G.is_permutation:
        return rng.uniform(0, 1, (n, G.dim))
    return rng.standard_normal((n, G.dim))


def kernel_invariance(groups=DEFAULT_GROUPS, tuples: int = 100, seed: int = 0, tol: float = 1e-10,
                      mode_tol: float = 1e-12) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for spec in groups:
        G = grp.builtin(spec)
        base = Matern(2.5, float(rng.uniform(0.1, 1.0)))
        single, double = Symmetrized(base, G, "single_sum"), Symmetrized(base, G, "double_sum")
        X, Y = _sample_points(G, rng, tuples), _sample_points(G, rng, tuples)
        s = rng.integers(len(G), size=tuples)
        t = rng.integers(len(G), size=tuples)
        SX = np.stack([G.elements[a].apply(x) for a, x in zip(s, X)])
        TY = np.stack([G.elements[b].apply(y) for b, y in zip(t, Y)])
        ref = single.paired(X, Y)
        moved = single.paired(SX, TY)
        err = np.abs(moved - ref)
        k = int(np.argmax(err))
        worst = max(worst, float(err[k]))
        if err[k] > tol:
            return CheckResult("kernel_invariance", False, f"{spec}: error {err[k]:.3g}",
                               f"group={spec} x={X[k].tolist()} y={Y[k].tolist()} s={int(s[k])} t={int(t[k])}")
        gap = np.abs(double.paired(X, Y) - ref)
        k = int(np.argmax(gap))
        if gap[k] > mode_tol:
            return CheckResult("kernel_invariance", False, f"{spec}: single vs double {gap[k]:.3g}",
                               f"group={spec} x={X[k].tolist()} y={Y[k].tolist()}")
    return CheckResult("kernel_invariance", True, f"{len(groups)} groups, max error {worst:.3g}")


def gp_oracle(problems: int = 20, seed: int = 0, tol: float = 1e-8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in range(problems):
        d = int(rng.integers(1, 4))
        t = int(rng.integers(1, 51))
        k = Matern(float(rng.choice([0.5, 1.5, 2.5, 3.5])), float(rng.uniform(0.1, 1.0)))
        lam = float(10 ** rng.uniform(-3, -1))
        X, Xq = rng.uniform(0, 1, (t, d)), rng.uniform(0, 1, (30, d))
        y = rng.standard_normal(t)
        model = gp.fit(k, gp.ObservationSet(X, y, lam))
        mu, var = model.mean_var(Xq)
        inv = np.linalg.inv(k.gram(X) + lam * np.eye(t))
        Kq = k(Xq, X)
        mu_o = Kq @ inv @ y
        var_o = k.diag(Xq) - np.einsum("ij,jk,ik->i", Kq, inv, Kq)
        err = max(np.max(np.abs(mu - mu_o)), np.max(np.abs(var - np.maximum(var_o, 0))))
        worst = max(worst, err)
        if err > tol:
            return CheckResult("gp_oracle", False, f"problem {p}: error {err:.3g}",
                               f"d={d} t={t} nu={k.nu} l={k.lengthscale} lam={lam}")
    return CheckResult("gp_oracle", True, f"{problems} problems, max error {worst:.3g}")


def orbit_counts(K: int = 10, nu: float = 2.5) -> CheckResult:
    G = grp.symmetric(3)
    w = 1.0 / K / len(G) ** (1 / nu)
    c = count_family(G, w, nu)
    # independent oracle: orbits of S_3 on index triples are multisets
    triples = list(itertools.product(range(K), repeat=3))
    multisets = {tuple(sorted(t)) for t in triples}
    distinct = sum(len(set(t)) == 3 for t in triples)
    free = sum(len(set(m)) == 3 for m in multisets)
    expect = {"N_prime": K**3, "W0": distinct, "free_orbits": free, "M": len(multisets)}
    got = {"N_prime": c.N_prime, "W0": c.W0, "free_orbits": c.free_orbits, "M": c.M}
    if got != expect or c.M < math.ceil(c.N_prime / len(G)):
        return CheckResult("orbit_counts", False, "count mismatch", f"expected {expect}, got {got}")
    return CheckResult("orbit_counts", True, f"{got}")


def disjoint_supports(K: int = 10, nu: float = 2.5, epsilon: float = 0.05, resolution: int = 100,
                      cap: int = 10**6, tol: float = 1e-9) -> CheckResult:
    G = grp.symmetric(3)
    w = 1.0 / K / len(G) ** (1 / nu)
    fam = build_family(G, w, epsilon, nu)
    d = G.dim
    res = min(resolution, int(round(cap ** (1 / d))))
    axis = (np.arange(res) + 0.5) / res
    pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
    mids = 0.5 * (fam.centers[:, None, :] + fam.centers[None, :, :]).reshape(-1, d)
    pts = np.concatenate([pts, mids])
    tree = cKDTree(fam.centers)
    for k, hits in enumerate(tree.query_ball_point(pts, fam.bump_radius * (1 - 1e-12))):
        labels = set(fam.labels[hits].tolist())
        if len(labels) > 1:
            return CheckResult("disjoint_supports", False, "overlapping members",
                               f"point={pts[k].tolist()} members={sorted(labels)}")
    for m in range(fam.size):
        peak = float(fam.member(m, fam.centers[fam.representatives[m]])[0])
        if abs(peak - fam.member_max(m)) > tol:
            return CheckResult("disjoint_supports", False, "member maximum mismatch",
                               f"member={m} peak={peak} expected={fam.member_max(m)}")
    return CheckResult("disjoint_supports", True, f"{len(pts)} probes, {fam.size} members")


def projection(functions: int = 50, probes: int = 100, seed: int = 0, tol: float = 1e-10,
               groups=("symmetric:2", "symmetric:3", "dihedral:5")) -> CheckResult:
    rng = np.random.default_rng(seed)
    for f_id in range(functions):
        G = grp.builtin(groups[f_id % len(groups)])
        k = Matern(2.5, float(rng.uniform(0.2, 1.0)))
        n = int(rng.integers(1, 8))
        f = FiniteSpanFunction(k, _sample_points(G, rng, n), rng.standard_normal(n))
        sf = f.symmetrize(G)
        ssf = sf.symmetrize(G)
        P = _sample_points(G, rng, probes)
        err = float(np.max(np.abs(ssf(P) - sf(P))))
        if err > tol:
            return CheckResult("projection", False, f"idempotence error {err:.3g}", f"function {f_id}")
        if sf.rkhs_norm() > f.rkhs_norm() + tol:
            return CheckResult("projection", False, "norm increased",
                               f"function {f_id}: {sf.rkhs_norm()} > {f.rkhs_norm()}")
    return CheckResult("projection", True, f"{functions} functions")


def taylor_bracket(widths=(1e-3, 1e-2, 1e-1)) -> CheckResult:
    for w in widths:
        if not analysis.taylor_check(w):
            return CheckResult("taylor_bracket", False, "bracket violated", f"w={w} r={analysis.geodesic_radius(w)}")
    return CheckResult("taylor_bracket", True, f"w in {list(widths)}")


def sphere_partition(points: int = 1000, seed: int = 0) -> CheckResult:
    rng = np.random.default_rng(seed)
    cases = [("rotation:4", np.array([1.0, 0.0])),
             ("symmetric:3", np.array([1.0, 2.0, 3.0]) / math.sqrt(14.0))]
    for spec, base in cases:
        G = grp.builtin(spec)
        X = rng.standard_normal((points, G.dim))
        X /= np.linalg.norm(X, axis=1, keepdims=True)
        pc = analysis.partition_check(G, X, "dirichlet", base, "geodesic")
        if not pc.holds:
            return CheckResult("sphere_partition", False, f"{spec}: {pc}", f"group={spec}")
    return CheckResult("sphere_partition", True, f"{len(cases)} actions, {points} points each")


CHECKS = {
    "kernel_invariance": kernel_invariance,
    "gp_oracle": gp_oracle,
    "orbit_counts": orbit_counts,
    "disjoint_supports": disjoint_supports,
    "projection": projection,
    "taylor_bracket": taylor_bracket,
    "sphere_partition": sphere_partition,
}


def run_suite(options: dict | None = None) -> list[CheckResult]:
    """Run every check; ``options`` maps a check name to keyword overrides or ``False`` to skip it."""
    options = options or {}
    out = []
    for name, fn in CHECKS.items():
        opt = options.get(name, {})
        if opt is False:
            continue
        out.append(fn(**(opt or {})))
    return out
