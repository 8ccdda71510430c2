"""Bound calculators, empirical information gain, the two-instance experiment and sphere helpers."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from invbo import bo
from invbo.group import FiniteGroup, fundamental_domain_mask, dirichlet_images
from invbo.kernel import Kernel, Matern, Symmetrized
from invbo.objectives import H0, InstancePair, InvariantBumpFamily, count_family, pair_instances, safe_floor

SPACES = ("hypercube", "sphere")


def kl_gaussian_same_var(mu1: float, mu2: float, sigma: float) -> float:
    if not sigma > 0:
        raise ValueError("sigma must be > 0")
    return (mu1 - mu2) ** 2 / (2.0 * sigma**2)


@dataclass(frozen=True)
class BoundInputs:
    epsilon: float
    B: float
    sigma: float
    delta: float
    d: int
    nu: float
    group_size: int = 1
    delta_w: float = 0.0
    bump_norm_constant: float = 1.0

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValueError("epsilon must lie in (0, 1/2)")
        if not 0 < self.delta < 1 / 3:
            raise ValueError("delta must lie in (0, 1/3)")
        if not self.sigma > 0 or not self.B > 0:
            raise ValueError("sigma and B must be > 0")
        if self.d < 1 or self.group_size < 1:
            raise ValueError("d and group_size must be >= 1")
        if not self.nu > 0 or not self.bump_norm_constant > 0:
            raise ValueError("nu and bump_norm_constant must be > 0")
        if not 0 <= self.delta_w < 1:
            raise ValueError("delta_w must lie in [0, 1)")


@dataclass(frozen=True)
class BoundResult:
    value: float
    terms: dict

    def to_dict(self) -> dict:
        return {"value": self.value, "terms": dict(self.terms)}


def information_term(sigma: float, epsilon: float, delta: float) -> float:
    """sigma^2 / (8 eps^2) * log(1 / (2.4 delta)): queries needed per region."""
    return sigma**2 / (8.0 * epsilon**2) * math.log(1.0 / (2.4 * delta))


def lower_bound_T(inputs: BoundInputs, space: str = "hypercube", budget_fraction: float = 1.0) -> BoundResult:
    """Sample-complexity lower bound, without absolute constants.

    ``budget_fraction=1/3`` gives the variant where the norm budget of the
    base family is B/3. On the sphere the effective dimension is d - 1.
    """
    if space not in SPACES:
        raise ValueError(f"space must be one of {SPACES}")
    deff = inputs.d if space == "hypercube" else inputs.d - 1
    if deff < 1:
        raise ValueError("sphere bounds need d >= 2")
    B = inputs.B * budget_fraction
    inner = H0 * B / (2.0 * inputs.epsilon * inputs.bump_norm_constant)
    base = safe_floor(inner)
    if base < 1:
        raise ValueError(f"epsilon too large relative to B: floor({inner:.4g}) < 1")
    N = base ** (deff / inputs.nu)
    exponent = (inputs.nu + deff) / inputs.nu
    group_factor = inputs.group_size ** (-exponent)
    info = information_term(inputs.sigma, inputs.epsilon, inputs.delta)
    leading = (1.0 - inputs.delta_w) * group_factor * N * info
    terms = {"space": space, "effective_dim": deff, "width_inverse": inner, "width_inverse_floor": base,
             "N": N, "group_exponent": exponent, "group_factor": group_factor, "orbit_fraction": 1.0 - inputs.delta_w,
             "information": info, "leading": leading, "offset": -info, "budget": B}
    return BoundResult(leading - info, terms)


def upper_bound_T(epsilon: float, group_size: int, nu: float, d: int) -> BoundResult:
    """Constant-free upper-bound scaling |G|^{-(2nu+d-1)/(2nu)} eps^{-(2nu+d-1)/nu}."""
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    if group_size < 1:
        raise ValueError("group_size must be >= 1")
    g_exp = (2 * nu + d - 1) / (2 * nu)
    e_exp = (2 * nu + d - 1) / nu
    gf, ef = group_size ** (-g_exp), epsilon ** (-e_exp)
    return BoundResult(gf * ef, {"group_exponent": g_exp, "epsilon_exponent": e_exp, "group_factor": gf,
                                 "epsilon_factor": ef})


def distinguishing_floor(M: int, rho_w: float, sigma: float, epsilon: float, delta: float) -> float:
    """(M rho_w - 1) * sigma^2/(8 eps^2) * log(1/(2.4 delta))."""
    return (M * rho_w - 1.0) * information_term(sigma, epsilon, delta)


# -- information gain -------------------------------------------------------


@dataclass
class MIGReport:
    tau: float
    selections: dict[str, np.ndarray]
    gammas: dict[str, np.ndarray]
    reference: str | None = None

    @property
    def horizon(self) -> int:
        return len(next(iter(self.gammas.values())))

    def ratios(self, reference: str | None = None) -> dict[str, np.ndarray]:
        ref = reference or self.reference
        if ref is None:
            return {}
        return {k: g / self.gammas[ref] for k, g in self.gammas.items() if k != ref}

    def to_csv(self) -> str:
        names = list(self.gammas)
        ratios = self.ratios()
        cols = ["T"] + [f"gamma_{n}" for n in names] + [f"index_{n}" for n in names] + [f"ratio_{n}" for n in ratios]
        lines = ["# schema: invbo.mig/1", f"# tau: {self.tau!r}", f"# reference: {self.reference}", ",".join(cols)]
        for t in range(self.horizon):
            row = [str(t + 1)] + [format(self.gammas[n][t], ".17g") for n in names]
            row += [str(int(self.selections[n][t])) for n in names]
            row += [format(ratios[n][t], ".17g") for n in ratios]
            lines.append(",".join(row))
        return "\n".join(lines) + "\n"


def greedy_information_gain(kernel: Kernel, candidates, T: int, tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Greedy max-variance selection; returns (indices, gamma_1..gamma_T).

    Uses the chain rule gamma_t = gamma_{t-1} + 0.5 log(1 + var_{t-1}(x_t) / tau)
    with rank-one posterior updates.
    """
    X = np.atleast_2d(np.asarray(candidates, dtype=float))
    if not tau > 0:
        raise ValueError("tau must be > 0")
    if not 1 <= T <= X.shape[0]:
        raise ValueError("T must lie in [1, number of candidates]")
    var = kernel.diag(X).astype(float)
    V = np.zeros((T, X.shape[0]))
    idx = np.zeros(T, dtype=np.intp)
    gam = np.zeros(T)
    total = 0.0
    for t in range(T):
        i = int(np.argmax(var))
        s2 = var[i]
        total += 0.5 * math.log1p(s2 / tau)
        col = kernel(X, X[i : i + 1])[:, 0]
        V[t] = (col - V[:t, i] @ V[:t]) / math.sqrt(s2 + tau)
        var = np.maximum(var - V[t] ** 2, 0.0)
        idx[t], gam[t] = i, total
    return idx, gam


def empirical_mig(kernels, candidates, T: int, tau: float, reference: str | None = None) -> MIGReport:
    """Greedy information gain for one kernel or a name -> kernel mapping."""
    if isinstance(kernels, Kernel):
        kernels = {"kernel": kernels}
    sel, gam = {}, {}
    for name, k in kernels.items():
        sel[name], gam[name] = greedy_information_gain(k, candidates, T, tau)
    if reference is not None and reference not in kernels:
        raise ValueError(f"reference kernel {reference!r} not among {list(kernels)}")
    return MIGReport(tau, sel, gam, reference)


# -- two-instance distinguishing experiment --------------------------------


@dataclass
class DistinguishingResult:
    trials: int
    horizon: int
    sigma: float
    epsilon: float
    delta: float
    i: int
    j: int
    floor: float
    p_f_A: float
    p_fprime_A: float
    success_f: float
    success_fprime: float
    records: list[dict] = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {k: getattr(self, k) for k in ("trials", "horizon", "sigma", "epsilon", "delta", "i", "j", "floor",
                                              "p_f_A", "p_fprime_A", "success_f", "success_fprime")}


def default_family_kernel(family: InvariantBumpFamily) -> Kernel:
    return Symmetrized(Matern(2.5, family.spacing), family.group)


def _trial(args):
    pair, cands, kernel, algorithm, T, sigma, lam, seed = args
    fam = pair.f.family
    eps = fam.epsilon
    out = {"seed": seed}
    if T == 0:
        # no data: the prior mean is flat, so the lowest-index candidate is reported
        rep = cands[0]
        out.update(region_f=int(fam.region(rep)[0]), region_fprime=int(fam.region(rep)[0]))
        out.update(regret_f=pair.f.optimum.value - pair.f(rep), regret_fprime=pair.f_prime.optimum.value - pair.f_prime(rep))
        out["first_j_query"] = -1
    else:
        cfg = bo.BOConfig(horizon=T, noise_std=sigma, gp_lambda=lam, seed=seed, candidate_count=len(cands))
        tf = bo.run(pair.f, kernel, cfg, algorithm, candidates=cands)
        tp = bo.run(pair.f_prime, kernel, cfg, algorithm, candidates=cands)
        out.update(region_f=int(fam.region(tf.final_report)[0]), region_fprime=int(fam.region(tp.final_report)[0]))
        out.update(regret_f=tf.final_simple_regret, regret_fprime=tp.final_simple_regret)
        out["first_j_query"] = first_region_query(tf, fam, pair.j)
        out["replay_consistent"] = replay_consistent(tf, tp, fam, pair.j)
    out["success_f"] = bool(out["regret_f"] <= eps)
    out["success_fprime"] = bool(out["regret_fprime"] <= eps)
    return out


def first_region_query(trace: bo.RegretTrace, family: InvariantBumpFamily, m: int) -> int:
    hits = np.flatnonzero(family.region(trace.queries) == m)
    return int(hits[0]) if hits.size else -1


def replay_consistent(trace_f: bo.RegretTrace, trace_fp: bo.RegretTrace, family: InvariantBumpFamily, j: int) -> bool:
    """Both runs coincide until (and including the choice of) the first query in region j."""
    k = first_region_query(trace_f, family, j)
    stop = trace_f.horizon if k < 0 else k
    same_q = np.array_equal(trace_f.query_index[: stop + 1 if k >= 0 else stop],
                            trace_fp.query_index[: stop + 1 if k >= 0 else stop])
    return bool(same_q and np.array_equal(trace_f.observations[:stop], trace_fp.observations[:stop]))


def distinguishing_experiment(family: InvariantBumpFamily, i: int, j: int, algorithm: str = "mvr", T: int = 10,
                              sigma: float = 0.2, trials: int = 100, seed: int = 0, delta: float = 0.1,
                              kernel: Kernel | None = None, candidates=None, candidate_count: int = 1000,
                              lam: float | None = None, jobs: int = 1) -> DistinguishingResult:
    """Run ``algorithm`` on f and f' for ``trials`` independent seeds.

    Both instances of a trial share the seed, so candidate sets and noise
    agree; fresh uniform candidates are drawn per trial unless ``candidates``
    is given.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    pair: InstancePair = pair_instances(family, i, j)
    kernel = kernel or default_family_kernel(family)
    lam = lam if lam is not None else max(sigma**2, 1e-10)
    children = np.random.SeedSequence(seed).spawn(trials)
    jobs_args = []
    for c in children:
        s = int(c.generate_state(1)[0])
        if candidates is None:
            cands = family.domain.uniform(np.random.default_rng(c), candidate_count)
        else:
            cands = np.atleast_2d(np.asarray(candidates, dtype=float))
        jobs_args.append((pair, cands, kernel, algorithm, T, sigma, lam, s))
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            recs = list(ex.map(_trial, jobs_args))
    else:
        recs = [_trial(a) for a in jobs_args]
    for k, r in enumerate(recs):
        r["trial"] = k
    floor = float("nan")
    if not family.approximate and family.group.is_permutation:
        c = count_family(family.group, family.width, family.nu)
        floor = distinguishing_floor(c.M, c.rho_w, sigma, family.epsilon, delta)
    n = len(recs)
    return DistinguishingResult(
        trials=n, horizon=T, sigma=sigma, epsilon=family.epsilon, delta=delta, i=i, j=j, floor=floor,
        p_f_A=sum(r["region_f"] == i for r in recs) / n,
        p_fprime_A=sum(r["region_fprime"] == i for r in recs) / n,
        success_f=sum(r["success_f"] for r in recs) / n,
        success_fprime=sum(r["success_fprime"] for r in recs) / n,
        records=recs,
    )


# -- sphere geometry --------------------------------------------------------


def geodesic_radius(w: float) -> float:
    """Geodesic radius on the unit sphere of a ball with chordal radius w."""
    if not 0 < w <= math.sqrt(2) + 1e-15:
        raise ValueError("chord length must lie in (0, sqrt(2)]")
    # 2 asin(w/2) equals acos(1 - w^2/2) without the cancellation at small w
    return 2.0 * math.asin(min(w / 2.0, 1.0))


def taylor_check(w: float) -> bool:
    """w <= r_w <= w + w^2, valid for w <= 0.5."""
    if not 0 < w <= 0.5:
        raise ValueError("taylor_check needs 0 < w <= 0.5")
    r = geodesic_radius(w)
    return w <= r <= w + w * w


@dataclass(frozen=True)
class PartitionCheck:
    points: int
    uncovered: int
    multiply_covered: int

    @property
    def holds(self) -> bool:
        return self.uncovered == 0 and self.multiply_covered == 0


def partition_check(G: FiniteGroup, X, mode: str = "dirichlet", base=None, metric: str = "euclidean",
                    tie_tol: float = 1e-9) -> PartitionCheck:
    """Each orbit meets the closed domain; only ties meet it more than once.

    A point whose orbit has several images in the domain counts as a
    violation unless those images are equidistant (within ``tie_tol``) to the
    nearest base image.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    imgs = G.images(X)  # (g, n, d)
    g, n, d = imgs.shape
    inside = fundamental_domain_mask(G, imgs.reshape(g * n, d), mode, base, metric).reshape(g, n)
    hits = inside.sum(axis=0)
    uncovered = int(np.sum(hits == 0))
    multi = 0
    for k in np.flatnonzero(hits > 1):
        pts = imgs[inside[:, k], k]
        # images that coincide as points are one representative
        if np.all(np.linalg.norm(pts - pts[0], axis=1) <= tie_tol):
            continue
        if mode == "dirichlet" and _on_boundary(G, pts, base, metric, tie_tol):
            continue
        multi += 1
    return PartitionCheck(n, uncovered, multi)


def _on_boundary(G, pts, base, metric, tol) -> bool:
    b = dirichlet_images(G, np.asarray(base, dtype=float))
    if metric == "geodesic":
        dist = np.arccos(np.clip(pts @ b.T, -1, 1))
    else:
        dist = np.linalg.norm(pts[:, None, :] - b[None], axis=-1)
    # a boundary point is equidistant to the base and some other image
    return bool(np.all(np.min(dist[:, 1:], axis=1) - dist[:, 0] <= tol))


__all__ = ["kl_gaussian_same_var", "BoundInputs", "BoundResult", "lower_bound_T", "upper_bound_T",
           "distinguishing_floor", "information_term", "MIGReport", "empirical_mig", "greedy_information_gain",
           "distinguishing_experiment", "DistinguishingResult", "geodesic_radius", "taylor_check",
           "partition_check", "PartitionCheck", "replay_consistent", "first_region_query"]
