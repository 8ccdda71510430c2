"""Ground-truth objectives.

Two families live here: synthetic RKHS elements (the posterior mean of a
noiseless GP fitted to a prior draw) and the symmetrized bump-function
families used to build hard instances for lower bounds.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from invbo import group as grp
from invbo.domain import Hypercube, Sphere, parse_domain
from invbo.gp import ObservationSet, fit, sample_prior
from invbo.group import FiniteGroup
from invbo.kernel import Kernel, Symmetrized, from_config as kernel_from_config

H0 = math.exp(-1.0)
FLOOR_TOL = 1e-9
RECORD_SCHEMA = "invbo.objective/1"


def safe_floor(v: float) -> int:
    """floor() that does not lose a unit to rounding, e.g. 1 / 0.1 -> 10."""
    return int(math.floor(v + FLOOR_TOL))


@dataclass(frozen=True)
class Optimum:
    point: np.ndarray
    value: float
    method: str
    residual: float = 0.0


class FiniteSpanFunction:
    """f = sum_i coeffs[i] * k(points[i], .)."""

    def __init__(self, kernel: Kernel, points, coeffs):
        self.kernel = kernel
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.coeffs = np.asarray(coeffs, dtype=float).ravel()
        if self.points.shape[0] != self.coeffs.shape[0]:
            raise ValueError("points and coefficients differ in length")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = self.kernel(np.atleast_2d(X), self.points) @ self.coeffs
        return float(out[0]) if X.ndim == 1 else out

    def rkhs_norm(self) -> float:
        q = float(self.coeffs @ self.kernel.gram(self.points) @ self.coeffs)
        return math.sqrt(max(q, 0.0))

    def symmetrize(self, G: FiniteGroup) -> FiniteSpanFunction:
        """S_G f expressed in the same span: coefficients a_i/|G| at s^{-1}(x_i).

        Valid for simultaneously invariant kernels.
        """
        pts = np.concatenate([g.inverse().apply(self.points) for g in G.elements])
        coeffs = np.tile(self.coeffs, len(G)) / len(G)
        return FiniteSpanFunction(self.kernel, pts, coeffs)


def symmetrize_values(f, G: FiniteGroup, X) -> np.ndarray:
    """(S_G f)(X) = mean over s of f(s(X)), for any callable f."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.mean([f(img) for img in G.images(X)], axis=0)


# -- synthetic RKHS objectives ----------------------------------------------


@dataclass(frozen=True, eq=False)
class SyntheticObjective:
    kernel: Kernel
    support_points: np.ndarray
    coefficients: np.ndarray
    optimum: Optimum
    rkhs_norm: float
    domain: Hypercube | Sphere
    meta: dict = field(default_factory=dict)

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = self.kernel(np.atleast_2d(X), self.support_points) @ self.coefficients
        return float(out[0]) if X.ndim == 1 else out

    def to_record(self) -> dict:
        return {
            "schema": RECORD_SCHEMA,
            "kernel": self.kernel.to_config(),
            "domain": self.domain.name,
            "support_points": self.support_points.tolist(),
            "coefficients": self.coefficients.tolist(),
            "optimum": {"point": self.optimum.point.tolist(), "value": self.optimum.value,
                        "method": self.optimum.method, "residual": self.optimum.residual},
            "rkhs_norm": self.rkhs_norm,
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_record(cls, rec: dict) -> SyntheticObjective:
        if rec.get("schema") != RECORD_SCHEMA:
            raise ValueError(f"unrecognised objective schema {rec.get('schema')!r}")
        o = rec["optimum"]
        return cls(
            kernel_from_config(rec["kernel"]),
            np.array(rec["support_points"], dtype=float),
            np.array(rec["coefficients"], dtype=float),
            Optimum(np.array(o["point"], dtype=float), float(o["value"]), o["method"], float(o["residual"])),
            float(rec["rkhs_norm"]),
            parse_domain(rec["domain"]),
            rec.get("meta", {}),
        )

    @classmethod
    def loads(cls, text: str) -> SyntheticObjective:
        return cls.from_record(json.loads(text))


def synthesize(kernel: Kernel, n: int, seed: int, domain="hypercube:2", jitter: float = 1e-8,
               search_count: int = 100_000, refine_starts: int = 8) -> SyntheticObjective:
    """Posterior mean of a noiseless GP fitted to one prior draw at n uniform points."""
    if n < 1:
        raise ValueError("n must be >= 1")
    domain = parse_domain(domain)
    pts_rng, prior_rng, search_rng = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3))
    X = domain.uniform(pts_rng, n)
    y = sample_prior(kernel, X, prior_rng)
    model = fit(kernel, ObservationSet(X, y, jitter))
    alpha = model.weights
    K = kernel.gram(X)
    norm = math.sqrt(max(float(alpha @ K @ alpha), 0.0))
    f = FiniteSpanFunction(kernel, X, alpha)
    opt = certify_optimum(f, kernel, domain, search_rng, search_count, refine_starts)
    meta = {"seed": seed, "n": n, "jitter": model.effective_jitter, "search_count": search_count}
    return SyntheticObjective(kernel, X, alpha, opt, norm, domain, meta)


def _search_group(kernel: Kernel) -> FiniteGroup | None:
    if isinstance(kernel, Symmetrized) and kernel.group.is_permutation:
        return kernel.group
    return None


def certify_optimum(f, kernel: Kernel, domain, rng: np.random.Generator, search_count: int = 100_000,
                    refine_starts: int = 8) -> Optimum:
    """Dense random search followed by coordinate refinement.

    When ``f`` is invariant under a permutation group, the dense samples are
    mapped into the fundamental domain first, which concentrates the search
    by a factor |G| without losing the maximum.
    """
    X = domain.uniform(rng, search_count)
    G = _search_group(kernel)
    method = "dense"
    if G is not None and isinstance(domain, Hypercube):
        X = grp.canonicalize(G, X)
        method = "dense_fundamental_domain"
    vals = np.asarray(f(X))
    starts = np.argsort(-vals, kind="stable")[:refine_starts]
    best_x, best_v = X[starts[0]], float(vals[starts[0]])
    dense_best = best_v
    for s in starts:
        x, v = _coordinate_search(f, X[s], float(vals[s]), domain)
        if v > best_v:
            best_x, best_v = x, v
    # residual: how far the dense search alone fell short of the refined optimum
    return Optimum(best_x, best_v, method + "+coordinate_refine", best_v - dense_best)


def _coordinate_search(f, x0, v0, domain, step0: float = 0.02, min_step: float = 1e-9):
    x, v, step = np.array(x0, dtype=float), v0, step0
    d = x.shape[0]
    while step > min_step:
        moves = np.concatenate([np.eye(d), -np.eye(d)]) * step
        trial = domain.project(x[None, :] + moves)
        tv = np.asarray(f(trial))
        k = int(np.argmax(tv))
        if tv[k] > v:
            x, v = trial[k], float(tv[k])
        else:
            step *= 0.5
    return x, v


# -- bump functions and lattices --------------------------------------------


def bump_profile(u: np.ndarray) -> np.ndarray:
    """h(u) = exp(-1 / (1 - u^2)) for u < 1, else 0, as a function of u = |x|."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    inside = u < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - u[inside] ** 2))
    return out


@dataclass(frozen=True)
class BumpSpec:
    center: np.ndarray
    width: float
    height: float

    def __post_init__(self):
        if not self.width > 0 or not self.height > 0:
            raise ValueError("bump width and height must be > 0")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))


def bump_eval(spec: BumpSpec, x) -> float | np.ndarray:
    """g(x - c; w, eps) = (2 eps / h(0)) h((x - c) / w): peak 2 eps, zero for |x - c| >= w."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(np.atleast_2d(x) - spec.center, axis=-1)
    out = 2.0 * spec.height / H0 * bump_profile(r / spec.width)
    return float(out[0]) if x.ndim == 1 else out


def lattice(alpha: float, d: int) -> np.ndarray:
    """Points ((2 lam - 1)/2) * alpha per axis inside [0, 1]^d; floor(1/alpha)^d of them."""
    if not 0 < alpha <= 1 + FLOOR_TOL:
        raise ValueError(f"lattice spacing must lie in (0, 1], got {alpha}")
    return _lattice_points(safe_floor(1.0 / alpha), alpha, d)


def _lattice_indices(K: int, d: int) -> np.ndarray:
    return np.array(list(itertools.product(range(K), repeat=d)), dtype=np.intp).reshape(-1, d)


def _lattice_points(K: int, alpha: float, d: int) -> np.ndarray:
    return (_lattice_indices(K, d) + 0.5) * alpha


def _orbit_labels(idx: np.ndarray, G: FiniteGroup, K: int) -> np.ndarray:
    """Orbit label per lattice index row, via the minimal code over the orbit."""
    perms = G.perm_array()
    if perms is None:
        raise ValueError("hypercube bump families need a coordinate-permutation group")
    weights = K ** np.arange(idx.shape[1], dtype=np.int64)[::-1]
    codes = np.stack([idx[:, p] @ weights for p in perms])
    canon = codes.min(axis=0)
    _, first, inv = np.unique(canon, return_index=True, return_inverse=True)
    # number orbits in order of first appearance so member order follows the lattice
    rank = np.empty(first.size, dtype=np.intp)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.ravel()]


@dataclass(frozen=True, eq=False)
class InvariantBumpFamily:
    """Symmetrized bumps, one per G-orbit of lattice centres.

    Members are (1/|G|) sum_s g(s(x) - c_i) with bump height |G| eps. Their
    support radius is ``bump_radius`` (half the lattice spacing on the
    hypercube, so each bump sits inside its own lattice cell).
    """

    group: FiniteGroup
    width: float
    epsilon: float
    nu: float
    spacing: float
    bump_radius: float
    centers: np.ndarray
    labels: np.ndarray
    representatives: np.ndarray
    domain: Hypercube | Sphere
    approximate: bool = False

    @property
    def bump_height(self) -> float:
        return len(self.group) * self.epsilon

    @property
    def size(self) -> int:
        return len(self.representatives)

    def orbit_points(self, m: int) -> np.ndarray:
        return self.centers[self.labels == m]

    def orbit_size(self, m: int) -> int:
        return int(np.sum(self.labels == m))

    def free_members(self) -> list[int]:
        g = len(self.group)
        return [m for m in range(self.size) if self.orbit_size(m) == g]

    def member_max(self, m: int) -> float:
        return 2.0 * len(self.group) * self.epsilon / self.orbit_size(m)

    def member(self, m: int, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        spec = BumpSpec(self.centers[self.representatives[m]], self.bump_radius, self.bump_height)
        return np.mean([bump_eval(spec, img) for img in self.group.images(X)], axis=0)

    def region(self, X) -> np.ndarray:
        """Member index whose region contains each point, -1 if none.

        On the hypercube the region of a member is the union of the lattice
        cells of its orbit; on the sphere it is the union of the bump supports.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if isinstance(self.domain, Hypercube):
            K = safe_floor(1.0 / self.spacing)
            cell = np.floor(X / self.spacing).astype(np.intp)
            cell = np.where(cell == K, K - 1, cell) if K * self.spacing >= 1 - FLOOR_TOL else cell
            ok = np.all((cell >= 0) & (cell < K), axis=1)
            flat = np.zeros(X.shape[0], dtype=np.intp)
            weights = K ** np.arange(X.shape[1], dtype=np.int64)[::-1]
            flat[ok] = cell[ok] @ weights
            out = np.full(X.shape[0], -1, dtype=np.intp)
            out[ok] = self.labels[flat[ok]]
            return out
        dist = np.linalg.norm(X[:, None, :] - self.centers[None], axis=-1)
        near = np.argmin(dist, axis=1)
        out = self.labels[near].copy()
        out[dist[np.arange(X.shape[0]), near] >= self.bump_radius] = -1
        return out


def rescaled_spacing(group_order: int, w: float, nu: float) -> float:
    return group_order ** (1.0 / nu) * w


def build_family(G: FiniteGroup, w: float, epsilon: float, nu: float) -> InvariantBumpFamily:
    """Hypercube family for a coordinate-permutation group."""
    d = G.dim
    alpha = rescaled_spacing(len(G), w, nu)
    if alpha > 1 + FLOOR_TOL:
        raise ValueError(f"rescaled spacing {alpha:.4g} exceeds the unit hypercube")
    K = safe_floor(1.0 / alpha)
    idx = _lattice_indices(K, d)
    labels = _orbit_labels(idx, G, K)
    reps = np.array([int(np.flatnonzero(labels == m)[0]) for m in range(labels.max() + 1)], dtype=np.intp)
    return InvariantBumpFamily(G, w, epsilon, nu, alpha, alpha / 2.0, (idx + 0.5) * alpha, labels, reps,
                               Hypercube(d))


@dataclass(frozen=True)
class FamilyCounts:
    N: int
    N_prime: int
    K: int
    M: int
    W0: int
    W0_enumerated: int
    free_orbits: int
    orbit_size_total: int
    rho_w: float
    group_order: int

    @property
    def m_bound_holds(self) -> bool:
        """M >= N' / |G|."""
        return self.M * self.group_order >= self.N_prime

    @property
    def w0_bound_holds(self) -> bool:
        """M |G| >= |W(0)|."""
        return self.M * self.group_order >= self.W0


def count_family(G: FiniteGroup, w: float, nu: float) -> FamilyCounts:
    """Exact lattice and orbit counts for the hypercube family."""
    d, g = G.dim, len(G)
    alpha = rescaled_spacing(g, w, nu)
    K = safe_floor(1.0 / alpha)
    idx = _lattice_indices(K, d)
    labels = _orbit_labels(idx, G, K)
    sizes = np.bincount(labels)
    distinct = np.sum(np.all(np.diff(np.sort(idx, axis=1), axis=1) != 0, axis=1)) if d > 1 else len(idx)
    M = int(sizes.size)
    W0 = math.perm(K, d)
    return FamilyCounts(
        N=safe_floor(1.0 / w) ** d,
        N_prime=K**d,
        K=K,
        M=M,
        W0=W0,
        W0_enumerated=int(distinct),
        free_orbits=int(np.sum(sizes == g)),
        orbit_size_total=int(sizes.sum()),
        rho_w=W0 / (g * M) if M else 0.0,
        group_order=g,
    )


# -- two-instance construction ----------------------------------------------


class BumpObjective:
    """Callable combination sum_m weight_m * member_m with a known optimum."""

    def __init__(self, family: InvariantBumpFamily, weights: dict[int, float]):
        self.family = family
        self.weights = dict(weights)
        best_m = max(self.weights, key=lambda m: self.weights[m] * family.member_max(m))
        center = family.centers[family.representatives[best_m]]
        self.optimum = Optimum(center, self.weights[best_m] * family.member_max(best_m), "analytic")

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = sum(w * self.family.member(m, X) for m, w in self.weights.items())
        return float(out[0]) if X.ndim == 1 else out


@dataclass(frozen=True)
class InstancePair:
    f: BumpObjective
    f_prime: BumpObjective
    i: int
    j: int


def pair_instances(family: InvariantBumpFamily, i: int, j: int) -> InstancePair:
    """f = S_G f_i and f' = S_G f_i + 2 S_G f_j for two free-orbit members."""
    if i == j:
        raise ValueError("the two members must differ")
    g = len(family.group)
    for m in (i, j):
        if family.orbit_size(m) != g:
            raise ValueError(f"member {m} does not have a free orbit")
    return InstancePair(BumpObjective(family, {i: 1.0}), BumpObjective(family, {i: 1.0, j: 2.0}), i, j)


# -- sphere families --------------------------------------------------------


def build_sphere_family(G: FiniteGroup, w: float, epsilon: float, nu: float, base, pool: int = 4000,
                        seed: int = 0) -> InvariantBumpFamily:
    """Approximate packing-based family on the unit sphere.

    Bump centres are chosen by greedy farthest-point insertion inside the
    Dirichlet domain of ``base`` so that all images of all centres are at
    geodesic distance >= 2 r, where r is the geodesic radius of the ambient
    support radius |G|^{1/nu} w. The packing is not optimal.
    """
    from invbo.analysis import geodesic_radius

    d, g = G.dim, len(G)
    rho = rescaled_spacing(g, w, nu)
    r = geodesic_radius(rho)
    sphere = Sphere(d)
    rng = np.random.default_rng(seed)
    P = grp.canonicalize(G, sphere.uniform(rng, pool), base=base, metric="geodesic")
    imgsP = G.images(P)  # (g, n, d)
    # distance from each pool point to its own non-trivial images
    self_sep = np.full(pool, np.inf)
    for s in range(g):
        ang = np.arccos(np.clip(np.einsum("nd,nd->n", P, imgsP[s]), -1, 1))
        ang = np.where(ang < 1e-12, np.inf, ang)
        self_sep = np.minimum(self_sep, ang)
    ok = self_sep >= 2 * r
    mind = np.full(pool, np.inf)
    reps: list[np.ndarray] = []
    while True:
        score = np.where(ok, mind, -np.inf)
        k = int(np.argmax(score))
        if score[k] < 2 * r:
            break
        c = P[k]
        reps.append(c)
        ang = np.arccos(np.clip(P @ G.images(c).T, -1, 1)).min(axis=1)
        mind = np.minimum(mind, ang)
    if not reps:
        raise ValueError("no bump centre fits; decrease w")
    reps_arr = np.array(reps)
    centers = np.concatenate([G.images(c) for c in reps_arr])
    labels = np.repeat(np.arange(len(reps_arr)), g)
    rep_idx = np.arange(len(reps_arr)) * g
    return InvariantBumpFamily(G, w, epsilon, nu, rho, rho, centers, labels, rep_idx, sphere, approximate=True)
