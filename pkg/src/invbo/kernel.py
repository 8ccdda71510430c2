"""Matérn base kernels and the invariant, additive and sphere wrappers.

Every kernel is an immutable object whose ``__call__(X, Y)`` returns the
cross-covariance matrix between the rows of ``X`` and ``Y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
import numpy as np

from invbo.group import FiniteGroup, builtin, from_config as group_from_config

HALF_INTEGER_NUS = (0.5, 1.5, 2.5, 3.5)
SPHERE_TOL = 1e-8
_CHUNK = 1 << 22


class KernelError(ValueError):
    pass


def _as_points(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise KernelError(f"expected a point or a 2-D array of points, got shape {X.shape}")
    return X


def pairwise_distance(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Euclidean distances from explicit differences, so r = 0 is exact."""
    if X.shape[1] != Y.shape[1]:
        raise KernelError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    n, m, d = X.shape[0], Y.shape[0], X.shape[1]
    out = np.empty((n, m))
    rows = max(1, _CHUNK // max(1, m * d))
    for s in range(0, n, rows):
        diff = X[s : s + rows, None, :] - Y[None, :, :]
        out[s : s + rows] = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    return out


class Kernel:
    """Common surface: ``k(X, Y)``, ``k.eval(x, y)``, ``k.diag(X)``, ``k.gram(X)``."""

    def __call__(self, X, Y) -> np.ndarray:
        return self._cross(_as_points(X), _as_points(Y))

    def eval(self, x, y) -> float:
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        if x.shape != y.shape:
            raise KernelError(f"dimension mismatch: {x.shape} vs {y.shape}")
        return float(self._cross(x[None], y[None])[0, 0])

    def diag(self, X) -> np.ndarray:
        X = _as_points(X)
        return self._paired(X, X)

    def paired(self, X, Y) -> np.ndarray:
        """Elementwise k(X[i], Y[i])."""
        X, Y = _as_points(X), _as_points(Y)
        if X.shape != Y.shape:
            raise KernelError(f"shape mismatch: {X.shape} vs {Y.shape}")
        return self._paired(X, Y)

    def gram(self, X) -> np.ndarray:
        X = _as_points(X)
        if X.shape[0] == 0:
            raise KernelError("gram needs at least one point")
        K = self._cross(X, X)
        return 0.5 * (K + K.T)

    def _cross(self, X, Y):
        raise NotImplementedError

    def _paired(self, X, Y):
        raise NotImplementedError

    def to_config(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Matern(Kernel):
    """Isotropic Matérn kernel for half-integer smoothness, in closed form."""

    nu: float = 2.5
    lengthscale: float = 1.0
    amplitude: float = 1.0

    def __post_init__(self):
        if float(self.nu) not in HALF_INTEGER_NUS:
            raise KernelError(f"nu must be one of {HALF_INTEGER_NUS}, got {self.nu}")
        if not self.lengthscale > 0 or not self.amplitude > 0:
            raise KernelError("lengthscale and amplitude must be strictly positive")

    def profile(self, r: np.ndarray) -> np.ndarray:
        """Covariance as a function of the distance r."""
        s = math.sqrt(2 * self.nu) * np.asarray(r, dtype=float) / self.lengthscale
        if self.nu == 0.5:
            poly = 1.0
        elif self.nu == 1.5:
            poly = 1.0 + s
        elif self.nu == 2.5:
            poly = 1.0 + s + s * s / 3.0
        else:
            poly = 1.0 + s + 0.4 * s * s + s**3 / 15.0
        return self.amplitude * poly * np.exp(-s)

    def _cross(self, X, Y):
        return self.profile(pairwise_distance(X, Y))

    def _paired(self, X, Y):
        diff = X - Y
        return self.profile(np.sqrt(np.einsum("ij,ij->i", diff, diff)))

    def to_config(self) -> dict:
        return {"kind": "matern", "nu": self.nu, "lengthscale": self.lengthscale,
                "amplitude": self.amplitude}


@dataclass(frozen=True, eq=False)
class Symmetrized(Kernel):
    """Totally invariant kernel obtained by averaging ``base`` over ``group``.

    ``single_sum`` is (1/|G|) sum_s k(s x, y), valid when ``base`` is
    simultaneously invariant (every isotropic kernel is, for orthogonal
    groups). ``double_sum`` is (1/|G|^2) sum_{s,t} k(s x, t y).
    """

    base: Kernel
    group: FiniteGroup
    mode: str = "single_sum"

    def __post_init__(self):
        if self.mode not in ("single_sum", "double_sum"):
            raise KernelError(f"unknown symmetrization mode {self.mode!r}")
        if self.mode == "single_sum" and not _simultaneously_invariant(self.base):
            raise KernelError("single_sum needs a simultaneously invariant base kernel")

    def _check_dim(self, X):
        if X.shape[1] != self.group.dim:
            raise KernelError(f"point dimension {X.shape[1]} != group dimension {self.group.dim}")

    def _cross(self, X, Y):
        self._check_dim(X)
        self._check_dim(Y)
        gx = self.group.images(X)
        out = np.zeros((X.shape[0], Y.shape[0]))
        if self.mode == "single_sum":
            for img in gx:
                out += self.base._cross(img, Y)
            return out / len(self.group)
        gy = self.group.images(Y)
        for img in gx:
            for jmg in gy:
                out += self.base._cross(img, jmg)
        return out / len(self.group) ** 2

    def _paired(self, X, Y):
        self._check_dim(X)
        gx = self.group.images(X)
        out = np.zeros(X.shape[0])
        if self.mode == "single_sum":
            for img in gx:
                out += self.base._paired(img, Y)
            return out / len(self.group)
        gy = self.group.images(Y)
        for img in gx:
            for jmg in gy:
                out += self.base._paired(img, jmg)
        return out / len(self.group) ** 2

    def to_config(self) -> dict:
        return {"kind": "symmetrized", "base": self.base.to_config(), "group": self.group.name,
                "mode": self.mode}


def _simultaneously_invariant(k: Kernel) -> bool:
    if isinstance(k, Matern):
        return True
    if isinstance(k, SphereRestricted):
        return _simultaneously_invariant(k.base)
    if isinstance(k, Additive):
        return all(_simultaneously_invariant(c) for _, c in k.components)
    return False


@dataclass(frozen=True, eq=False)
class Additive(Kernel):
    """Weighted sum of kernels; models quasi-invariant objectives."""

    components: tuple[tuple[float, Kernel], ...]

    def __post_init__(self):
        comps = tuple((float(w), k) for w, k in self.components)
        if not comps:
            raise KernelError("additive kernel needs at least one component")
        ws = [w for w, _ in comps]
        if min(ws) < 0 or max(ws) <= 0:
            raise KernelError("additive weights must be nonnegative with one positive")
        object.__setattr__(self, "components", comps)

    def _cross(self, X, Y):
        out = np.zeros((X.shape[0], Y.shape[0]))
        for w, k in self.components:
            if w:
                out += w * k._cross(X, Y)
        return out

    def _paired(self, X, Y):
        out = np.zeros(X.shape[0])
        for w, k in self.components:
            if w:
                out += w * k._paired(X, Y)
        return out

    def to_config(self) -> dict:
        return {"kind": "additive",
                "components": [{"weight": w, "kernel": k.to_config()} for w, k in self.components]}


@dataclass(frozen=True, eq=False)
class SphereRestricted(Kernel):
    """Ambient kernel restricted to the unit sphere; rejects non-unit inputs."""

    base: Kernel

    @staticmethod
    def _check(X):
        norms = np.sqrt(np.einsum("ij,ij->i", X, X))
        if np.any(np.abs(norms - 1.0) > SPHERE_TOL):
            raise KernelError("sphere-restricted kernel got a non-unit input")

    def _cross(self, X, Y):
        self._check(X)
        self._check(Y)
        return self.base._cross(X, Y)

    def _paired(self, X, Y):
        self._check(X)
        self._check(Y)
        return self.base._paired(X, Y)

    def to_config(self) -> dict:
        return {"kind": "sphere", "base": self.base.to_config()}


def quasi_invariant(invariant: Kernel, standard: Kernel, eps: float, normalization: str = "sum") -> Additive:
    """``k_G + eps k'`` (``sum``) or ``(1 - eps) k_G + eps k'`` (``convex``)."""
    if normalization == "sum":
        return Additive(((1.0, invariant), (eps, standard)))
    if normalization == "convex":
        return Additive(((1.0 - eps, invariant), (eps, standard)))
    raise KernelError(f"unknown normalization {normalization!r}")


def gram(k: Kernel, X) -> np.ndarray:
    return k.gram(X)


def symmetrized_eval(k: Symmetrized, x, y) -> float:
    return k.eval(x, y)


def additive_eval(k: Additive, x, y) -> float:
    return k.eval(x, y)


def from_config(cfg: dict, groups: dict[str, FiniteGroup] | None = None) -> Kernel:
    """Build a kernel from a nested mapping.

    Example: ``{kind: symmetrized, group: "symmetric:2",
    base: {kind: matern, nu: 2.5, lengthscale: 0.12}}``.
    """
    if not isinstance(cfg, dict) or "kind" not in cfg:
        raise KernelError(f"kernel config needs a 'kind' key: {cfg!r}")
    kind = cfg["kind"]
    if kind == "matern":
        return Matern(float(cfg.get("nu", 2.5)), float(cfg.get("lengthscale", 1.0)),
                      float(cfg.get("amplitude", 1.0)))
    if kind == "symmetrized":
        g = cfg["group"]
        group = (groups or {}).get(g) if isinstance(g, str) else None
        if group is None:
            group = builtin(g) if isinstance(g, str) else group_from_config(g)
        return Symmetrized(from_config(cfg["base"], groups), group, cfg.get("mode", "single_sum"))
    if kind == "additive":
        comps = tuple((float(c["weight"]), from_config(c["kernel"], groups)) for c in cfg["components"])
        return Additive(comps)
    if kind == "sphere":
        return SphereRestricted(from_config(cfg["base"], groups))
    raise KernelError(f"unknown kernel kind {kind!r}")
