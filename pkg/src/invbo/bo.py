"""MVR, UCB and constrained BO loops over a fixed discrete candidate set."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

import numpy as np

from scipy.linalg import solve_triangular

from invbo import domain as dom
from invbo.gp import GPFitError, cholesky_with_jitter
from invbo.group import FiniteGroup, fundamental_domain_mask
from invbo.kernel import Kernel

TRACE_SCHEMA = "invbo.trace/1"
REJECTION_CAP = 10**6
REGRET_FLOOR = -1e-9


class BOError(RuntimeError):
    pass


@dataclass(frozen=True)
class BOConfig:
    horizon: int = 60
    ucb_beta: float = 2.0
    noise_std: float = 0.0
    gp_lambda: float | None = None
    candidate_count: int = 2000
    candidate_scheme: str = "uniform_random"
    domain: str = "hypercube:2"
    seed: int = 0
    constrain_to_fundamental_domain: bool = False
    fd_mode: str = "sorted_coordinates"
    fd_base: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.candidate_count < 1:
            raise ValueError("candidate_count must be >= 1")
        if self.ucb_beta < 0:
            raise ValueError("ucb_beta must be >= 0")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")

    @property
    def lam(self) -> float:
        """GP regulariser; defaults to the observation noise variance (floored at 1e-10)."""
        if self.gp_lambda is not None:
            return float(self.gp_lambda)
        return max(self.noise_std**2, 1e-10)


@dataclass
class RegretTrace:
    algorithm: str
    queries: np.ndarray
    observations: np.ndarray
    reports: np.ndarray
    simple_regret: np.ndarray
    cumulative_regret: np.ndarray
    optimum_value: float
    query_index: np.ndarray = field(repr=False, default=None)
    report_index: np.ndarray = field(repr=False, default=None)
    meta: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.observations)

    @property
    def final_report(self) -> np.ndarray:
        return self.reports[-1]

    @property
    def final_simple_regret(self) -> float:
        return float(self.simple_regret[-1])

    def to_csv(self) -> str:
        d = self.queries.shape[1]
        buf = io.StringIO()
        buf.write(f"# schema: {TRACE_SCHEMA}\n")
        buf.write(f"# algorithm: {self.algorithm}\n")
        buf.write(f"# optimum_value: {_fmt(self.optimum_value)}\n")
        for k in sorted(self.meta):
            buf.write(f"# {k}: {self.meta[k]}\n")
        cols = ["t"] + [f"x{i}" for i in range(d)] + ["y"] + [f"report{i}" for i in range(d)]
        buf.write(",".join(cols + ["simple_regret", "cumulative_regret"]) + "\n")
        for t in range(self.horizon):
            row = [str(t + 1)] + [_fmt(v) for v in self.queries[t]] + [_fmt(self.observations[t])]
            row += [_fmt(v) for v in self.reports[t]]
            row += [_fmt(self.simple_regret[t]), _fmt(self.cumulative_regret[t])]
            buf.write(",".join(row) + "\n")
        return buf.getvalue()


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def simple_regret(objective, report_point) -> float:
    opt = getattr(objective, "optimum", None)
    if opt is None:
        raise BOError("objective has no certified optimum")
    return max(opt.value - float(objective(np.asarray(report_point, dtype=float))), REGRET_FLOOR)


def _streams(seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    cand, noise = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(cand), np.random.default_rng(noise)


def candidate_set(config: BOConfig, rng: np.random.Generator, group: FiniteGroup | None = None) -> np.ndarray:
    """The run's fixed candidate set; filtered to the closed fundamental domain if constrained."""
    domain = dom.parse_domain(config.domain)
    n = config.candidate_count
    if group is None or not config.constrain_to_fundamental_domain:
        return dom.candidates(domain, config.candidate_scheme, n, rng)
    metric = "geodesic" if isinstance(domain, dom.Sphere) else "euclidean"
    base = None if config.fd_base is None else np.asarray(config.fd_base, dtype=float)

    def keep(X):
        return X[fundamental_domain_mask(group, X, config.fd_mode, base, metric)]

    if config.candidate_scheme == "grid":
        return keep(domain.grid(n))
    kept, drawn = [], 0
    total = 0
    while total < n:
        if drawn >= REJECTION_CAP:
            raise BOError(f"rejection sampling kept {total} of {n} candidates after {drawn} draws")
        batch = dom.candidates(domain, config.candidate_scheme, n, rng)
        drawn += n
        k = keep(batch)
        kept.append(k)
        total += len(k)
    return np.concatenate(kept)[:n]


class _Posterior:
    """Posterior on the candidate set, refit from scratch each step from cached kernel columns."""

    def __init__(self, kernel: Kernel, cands: np.ndarray, lam: float):
        self.kernel, self.cands, self.lam = kernel, cands, lam
        self.prior_var = kernel.diag(cands)
        self.cols: list[np.ndarray] = []
        self.idx: list[int] = []
        self.y: list[float] = []

    def add(self, i: int, y: float):
        self.cols.append(self.kernel(self.cands, self.cands[i : i + 1])[:, 0])
        self.idx.append(i)
        self.y.append(y)

    def mean_var(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.idx:
            return np.zeros(len(self.cands)), self.prior_var.copy()
        Kc = np.stack(self.cols, axis=1)  # (C, t)
        K = Kc[self.idx]
        K = 0.5 * (K + K.T)
        L, _ = cholesky_with_jitter(K, self.lam)
        y = np.asarray(self.y)
        alpha = solve_triangular(L.T, solve_triangular(L, y, lower=True), lower=False)
        V = solve_triangular(L, Kc.T, lower=True, check_finite=False)
        var = np.maximum(self.prior_var - np.einsum("ij,ij->j", V, V), 0.0)
        return Kc @ alpha, var


def _run(objective, kernel: Kernel, config: BOConfig, algorithm: str, candidates=None,
         group: FiniteGroup | None = None) -> RegretTrace:
    cand_rng, noise_rng = _streams(config.seed)
    if candidates is None:
        cands = candidate_set(config, cand_rng, group)
    else:
        cands = np.atleast_2d(np.asarray(candidates, dtype=float))
    f_c = np.asarray(objective(cands), dtype=float)
    f_star = float(objective.optimum.value)
    post = _Posterior(kernel, cands, config.lam)
    T = config.horizon
    q_idx = np.zeros(T, dtype=np.intp)
    r_idx = np.zeros(T, dtype=np.intp)
    ys = np.zeros(T)
    mean, var = post.mean_var()
    for t in range(T):
        if algorithm == "mvr":
            i = int(np.argmax(var))
        elif algorithm == "ucb":
            i = int(np.argmax(mean + config.ucb_beta * np.sqrt(var)))
        else:
            raise BOError(f"unknown algorithm {algorithm!r}")
        y = f_c[i] + config.noise_std * noise_rng.standard_normal()
        post.add(i, y)
        try:
            mean, var = post.mean_var()
        except GPFitError as exc:
            raise BOError(f"GP fit failed at iteration {t + 1}: {exc}") from exc
        q_idx[t], ys[t] = i, y
        r_idx[t] = int(np.argmax(mean)) if algorithm == "mvr" else i
    simple = np.maximum(f_star - f_c[r_idx], REGRET_FLOOR)
    cumulative = np.cumsum(np.maximum(f_star - f_c[q_idx], 0.0))
    meta = {"seed": config.seed, "candidates": len(cands), "noise_std": config.noise_std}
    return RegretTrace(algorithm, cands[q_idx], ys, cands[r_idx], simple, cumulative, f_star, q_idx, r_idx, meta)


def run_mvr(objective, kernel: Kernel, config: BOConfig, candidates=None) -> RegretTrace:
    """Query argmax of posterior variance; report argmax of posterior mean (recomputed each step)."""
    return _run(objective, kernel, config, "mvr", candidates)


def run_ucb(objective, kernel: Kernel, config: BOConfig, candidates=None) -> RegretTrace:
    """Query argmax of mean + beta * sd; report the latest query."""
    return _run(objective, kernel, config, "ucb", candidates)


def run_constrained(objective, kernel: Kernel, config: BOConfig, group: FiniteGroup,
                    algorithm: str = "ucb", candidates=None) -> RegretTrace:
    """Standard BO whose candidate set is restricted to a fundamental domain of ``group``.

    Explicit ``candidates`` must already lie in the closed domain.
    """
    if config.fd_mode == "sorted_coordinates" and not group.is_permutation:
        raise BOError("sorted-coordinate domains need a permutation group; supply a Dirichlet base")
    config = replace(config, constrain_to_fundamental_domain=True)
    if candidates is not None:
        cands = np.atleast_2d(np.asarray(candidates, dtype=float))
        domain = dom.parse_domain(config.domain)
        metric = "geodesic" if isinstance(domain, dom.Sphere) else "euclidean"
        base = None if config.fd_base is None else np.asarray(config.fd_base, dtype=float)
        if not np.all(fundamental_domain_mask(group, cands, config.fd_mode, base, metric)):
            raise BOError("explicit candidates must lie in the fundamental domain")
    trace = _run(objective, kernel, config, algorithm, candidates=candidates, group=group)
    trace.algorithm = f"constrained_{algorithm}"
    return trace


def run(objective, kernel: Kernel, config: BOConfig, algorithm: str, group: FiniteGroup | None = None,
        candidates=None) -> RegretTrace:
    if algorithm in ("mvr", "ucb"):
        return _run(objective, kernel, config, algorithm, candidates)
    if algorithm.startswith("constrained_"):
        if group is None:
            raise BOError("constrained BO needs a group")
        return run_constrained(objective, kernel, config, group, algorithm.removeprefix("constrained_"), candidates)
    raise BOError(f"unknown algorithm {algorithm!r}")
