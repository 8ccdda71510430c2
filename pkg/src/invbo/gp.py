"""Exact GP posterior through a Cholesky factor of the regularised Gram matrix."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from invbo.kernel import Kernel

MAX_JITTER_ATTEMPTS = 6
PRIOR_SAMPLE_JITTER = 1e-10


class GPFitError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class ObservationSet:
    X: np.ndarray
    y: np.ndarray
    lam: float = 0.0

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim == 1:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, 0)
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} observations")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("observations must be finite")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def t(self) -> int:
        return self.y.shape[0]

    @classmethod
    def empty(cls, d: int, lam: float = 0.0) -> ObservationSet:
        return cls(np.zeros((0, d)), np.zeros(0), lam)


def cholesky_with_jitter(K: np.ndarray, lam: float) -> tuple[np.ndarray, float]:
    """Cholesky of K + lam I, escalating lam by 10x on failure (6 attempts)."""
    n = K.shape[0]
    eye = np.eye(n)
    jitter = lam
    for attempt in range(MAX_JITTER_ATTEMPTS + 1):
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            if attempt == MAX_JITTER_ATTEMPTS:
                break
            jitter = max(jitter, 1e-12) * 10
    raise GPFitError(f"Cholesky failed with jitter up to {jitter:g}")


@dataclass(frozen=True, eq=False)
class PosteriorModel:
    kernel: Kernel
    observations: ObservationSet
    cholesky_factor: np.ndarray
    weights: np.ndarray
    effective_jitter: float

    @property
    def X(self) -> np.ndarray:
        return self.observations.X

    def cross(self, Xq) -> np.ndarray:
        """k(Xq, X_train), shape (q, t)."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        return self.kernel(Xq, self.X)

    def mean(self, Xq, Kq: np.ndarray | None = None) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if self.observations.t == 0:
            return np.zeros(Xq.shape[0])
        Kq = self.cross(Xq) if Kq is None else Kq
        return Kq @ self.weights

    def var(self, Xq, Kq: np.ndarray | None = None, prior_diag: np.ndarray | None = None) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        kxx = self.kernel.diag(Xq) if prior_diag is None else prior_diag
        if self.observations.t == 0:
            return kxx.copy()
        Kq = self.cross(Xq) if Kq is None else Kq
        V = solve_triangular(self.cholesky_factor, Kq.T, lower=True, check_finite=False)
        return np.maximum(kxx - np.einsum("ij,ij->j", V, V), 0.0)

    def mean_var(self, Xq, prior_diag: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        if self.observations.t == 0:
            return self.mean(Xq), self.var(Xq, prior_diag=prior_diag)
        Kq = self.cross(Xq)
        return self.mean(Xq, Kq), self.var(Xq, Kq, prior_diag)


def fit(kernel: Kernel, obs: ObservationSet) -> PosteriorModel:
    if obs.t == 0:
        return PosteriorModel(kernel, obs, np.zeros((0, 0)), np.zeros(0), obs.lam)
    K = kernel.gram(obs.X)
    L, jitter = cholesky_with_jitter(K, obs.lam)
    z = solve_triangular(L, obs.y, lower=True, check_finite=False)
    alpha = solve_triangular(L.T, z, lower=False, check_finite=False)
    return PosteriorModel(kernel, obs, L, alpha, jitter)


def posterior_mean(model: PosteriorModel, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    out = model.mean(x)
    return float(out[0]) if x.ndim == 1 else out


def posterior_var(model: PosteriorModel, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    out = model.var(x)
    return float(out[0]) if x.ndim == 1 else out


def sample_prior(kernel: Kernel, X, seed) -> np.ndarray:
    """One draw of f(X) under GP(0, kernel); deterministic per seed."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    L, _ = cholesky_with_jitter(kernel.gram(X), PRIOR_SAMPLE_JITTER)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return L @ rng.standard_normal(X.shape[0])


def information_gain(kernel: Kernel, X, tau: float) -> float:
    """0.5 * log det(I + K / tau)."""
    if tau <= 0:
        raise ValueError("tau must be > 0")
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0.0
    K = kernel.gram(np.atleast_2d(X))
    L = np.linalg.cholesky(np.eye(K.shape[0]) + K / tau)
    return float(np.sum(np.log(np.diag(L))))
