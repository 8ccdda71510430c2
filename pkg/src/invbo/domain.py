"""Search domains and candidate-set generation."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

SCHEMES = ("grid", "uniform_random", "sobol")


@dataclass(frozen=True)
class Hypercube:
    dim: int

    @property
    def name(self) -> str:
        return f"hypercube:{self.dim}"

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(0.0, 1.0, size=(n, self.dim))

    def sobol(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return _sobol(self.dim, rng, n)

    def grid(self, n: int) -> np.ndarray:
        """Regular grid with round(n ** (1/d)) nodes per axis, endpoints included."""
        m = max(1, int(round(n ** (1.0 / self.dim))))
        axis = np.linspace(0.0, 1.0, m) if m > 1 else np.array([0.5])
        mesh = np.meshgrid(*([axis] * self.dim), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def project(self, X: np.ndarray) -> np.ndarray:
        return np.clip(X, 0.0, 1.0)


@dataclass(frozen=True)
class Sphere:
    """Unit sphere in R^dim."""

    dim: int

    @property
    def name(self) -> str:
        return f"sphere:{self.dim}"

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.project(rng.standard_normal((n, self.dim)))

    def sobol(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = np.clip(_sobol(self.dim, rng, n), 1e-12, 1 - 1e-12)
        return self.project(ndtri(u))

    def grid(self, n: int) -> np.ndarray:
        if self.dim == 2:
            theta = 2 * math.pi * np.arange(n) / n
            return np.stack([np.cos(theta), np.sin(theta)], axis=1)
        if self.dim == 3:
            # Fibonacci lattice
            i = np.arange(n) + 0.5
            z = 1 - 2 * i / n
            phi = math.pi * (1 + math.sqrt(5)) * i
            r = np.sqrt(1 - z * z)
            return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
        raise ValueError("sphere grids are only defined for dim 2 and 3")

    def project(self, X: np.ndarray) -> np.ndarray:
        return X / np.linalg.norm(X, axis=-1, keepdims=True)


def _sobol(d: int, rng: np.random.Generator, n: int) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # non power-of-two sample sizes
        return qmc.Sobol(d, scramble=True, seed=rng).random(n)


def parse_domain(spec) -> Hypercube | Sphere:
    if isinstance(spec, (Hypercube, Sphere)):
        return spec
    kind, _, dim = str(spec).partition(":")
    if kind == "hypercube":
        return Hypercube(int(dim))
    if kind == "sphere":
        return Sphere(int(dim))
    raise ValueError(f"unknown domain {spec!r}")


def candidates(domain, scheme: str, count: int, rng: np.random.Generator) -> np.ndarray:
    if count < 1:
        raise ValueError("candidate_count must be >= 1")
    if scheme == "grid":
        return domain.grid(count)
    if scheme == "uniform_random":
        return domain.uniform(rng, count)
    if scheme == "sobol":
        return domain.sobol(rng, count)
    raise ValueError(f"unknown candidate scheme {scheme!r}; expected one of {SCHEMES}")
