"""Finite groups of orthogonal transformations acting on R^d.

Elements are stored as dense orthogonal matrices. Permutation elements also
carry an index map so that ``g(x)`` costs O(d) instead of O(d^2); this is the
inner loop of every symmetrized kernel evaluation.

Convention for permutations: the element with index map ``perm`` acts as
``g(x)[i] = x[perm[i]]``, i.e. its matrix has ``P[i, perm[i]] = 1``.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

ORTHO_TOL = 1e-12
DEDUP_TOL = 1e-10
TIE_TOL = 1e-10
DEFAULT_CAP = 10**6


class GroupError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GroupElement:
    matrix: np.ndarray
    perm: tuple[int, ...] | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise GroupError(f"group element must be square, got shape {m.shape}")
        if np.max(np.abs(m.T @ m - np.eye(m.shape[0]))) > ORTHO_TOL:
            raise GroupError("group element is not orthogonal")
        if self.perm is None:
            rounded = np.round(m)
            if np.max(np.abs(m - rounded)) <= ORTHO_TOL and np.all((rounded == 0) | (rounded == 1)):
                m = rounded
                object.__setattr__(self, "perm", tuple(int(j) for j in np.argmax(m, axis=1)))
        if self.perm is not None:
            perm = tuple(int(p) for p in self.perm)
            if sorted(perm) != list(range(m.shape[0])):
                raise GroupError(f"{perm} is not a permutation")
            if not np.array_equal(m, _perm_matrix(perm)):
                raise GroupError("matrix does not match its permutation index map")
            object.__setattr__(self, "perm", perm)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def from_perm(cls, perm: Sequence[int]) -> GroupElement:
        perm = tuple(int(p) for p in perm)
        return cls(_perm_matrix(perm), perm)

    @classmethod
    def identity(cls, d: int) -> GroupElement:
        return cls.from_perm(range(d))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_permutation(self) -> bool:
        return self.perm is not None

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Act on a point or on a stack of points (last axis is the coordinate)."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise GroupError(f"point dimension {x.shape[-1]} != group dimension {self.dim}")
        if self.perm is not None:
            return x[..., list(self.perm)]
        return x @ self.matrix.T

    __call__ = apply

    def inverse(self) -> GroupElement:
        if self.perm is not None:
            inv = [0] * self.dim
            for i, p in enumerate(self.perm):
                inv[p] = i
            return GroupElement.from_perm(inv)
        return GroupElement(self.matrix.T.copy())

    def key(self) -> tuple:
        if self.perm is not None:
            return ("p",) + self.perm
        return ("m",) + tuple(np.round(self.matrix, 9).ravel() + 0.0)

    def __repr__(self):
        if self.perm is not None:
            return f"GroupElement(perm={self.perm})"
        return f"GroupElement(matrix={self.matrix.tolist()})"


def _perm_matrix(perm: Sequence[int]) -> np.ndarray:
    d = len(perm)
    m = np.zeros((d, d))
    m[np.arange(d), list(perm)] = 1.0
    return m


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Return ``a o b``, the map ``x -> a(b(x))``."""
    if a.dim != b.dim:
        raise GroupError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.perm is not None and b.perm is not None:
        return GroupElement.from_perm([b.perm[p] for p in a.perm])
    return GroupElement(a.matrix @ b.matrix)


@dataclass(frozen=True, eq=False)
class FiniteGroup:
    """A finite group given by its full, duplicate-free element list.

    Construction checks identity membership, uniqueness and closure under
    composition and inversion. The closure table has |G|^2 entries, so for
    very large groups pass ``check=False``.
    """

    elements: tuple[GroupElement, ...]
    dim: int
    name: str = "G"
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        elements = tuple(self.elements)
        object.__setattr__(self, "elements", elements)
        if not elements:
            raise GroupError("a group needs at least the identity")
        if any(g.dim != self.dim for g in elements):
            raise GroupError("all elements must act on the same dimension")
        if self.check:
            self._validate()

    def _validate(self):
        n = len(self.elements)
        perms = self.perm_array()
        if perms is not None:
            self._validate_perms(perms)
            return
        stack = np.stack([g.matrix for g in self.elements])
        eye = np.eye(self.dim)
        if not np.any(np.max(np.abs(stack - eye), axis=(1, 2)) <= DEDUP_TOL):
            raise GroupError(f"{self.name}: identity missing")
        index = _MatrixIndex(stack.reshape(n, -1))
        if len(index) != n:
            raise GroupError(f"{self.name}: duplicate elements")
        for i in range(n):
            products = np.einsum("ij,njk->nik", stack[i], stack).reshape(n, -1)
            if any(index.find(p) is None for p in products):
                raise GroupError(f"{self.name}: not closed under composition")
            if index.find(stack[i].T.ravel()) is None:
                raise GroupError(f"{self.name}: not closed under inversion")

    def _validate_perms(self, perms: np.ndarray):
        n, d = perms.shape
        weights = d ** np.arange(d, dtype=np.int64)
        codes = perms @ weights
        if np.unique(codes).size != n:
            raise GroupError(f"{self.name}: duplicate elements")
        if (np.arange(d) @ weights) not in set(codes.tolist()):
            raise GroupError(f"{self.name}: identity missing")
        # (a o b).perm = b.perm[a.perm]
        for a in perms:
            if not np.all(np.isin(perms[:, a] @ weights, codes)):
                raise GroupError(f"{self.name}: not closed under composition")
        inv = np.argsort(perms, axis=1)
        if not np.all(np.isin(inv @ weights, codes)):
            raise GroupError(f"{self.name}: not closed under inversion")

    def __len__(self):
        return len(self.elements)

    def __iter__(self):
        return iter(self.elements)

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def is_permutation(self) -> bool:
        return all(g.is_permutation for g in self.elements)

    def perm_array(self) -> np.ndarray | None:
        """(|G|, d) integer array of index maps, or None for non-permutation groups."""
        if not self.is_permutation:
            return None
        return np.array([g.perm for g in self.elements], dtype=np.intp)

    def images(self, x: np.ndarray) -> np.ndarray:
        """All images g(x), shape (|G|, *x.shape)."""
        x = np.asarray(x, dtype=float)
        perms = self.perm_array()
        if perms is not None:
            return np.stack([x[..., p] for p in perms])
        mats = np.stack([g.matrix for g in self.elements])
        return np.einsum("gij,...j->g...i", mats, x)

    def same_elements(self, other: FiniteGroup, tol: float = DEDUP_TOL) -> bool:
        if self.dim != other.dim or len(self) != len(other):
            return False
        index = _MatrixIndex(np.stack([g.matrix.ravel() for g in self.elements]), tol)
        return all(index.find(g.matrix.ravel()) is not None for g in other.elements)


class _MatrixIndex:
    """Tolerance-aware lookup of flattened matrices via rounded hash keys."""

    def __init__(self, rows: np.ndarray, tol: float = DEDUP_TOL):
        self.tol = tol
        self.rows = rows
        self.table: dict[tuple, list[int]] = {}
        self._keep = []
        for i, r in enumerate(rows):
            if self.find(r) is None:
                self.table.setdefault(self._key(r), []).append(i)
                self._keep.append(i)

    def _key(self, r):
        return tuple(np.round(r, 6) + 0.0)

    def find(self, r) -> int | None:
        for cand in self.table.get(self._key(r), ()):
            if np.max(np.abs(self.rows[cand] - r)) <= self.tol:
                return cand
        # rounding boundary: fall back to a linear scan only on a hash miss
        if self.table:
            keep = np.array(self._keep)
            dev = np.max(np.abs(self.rows[keep] - r), axis=1)
            hit = np.flatnonzero(dev <= self.tol)
            if hit.size:
                return int(keep[hit[0]])
        return None

    def __len__(self):
        return len(self._keep)


def generate_group(
    generators: Sequence[GroupElement], dim: int | None = None, cap: int = DEFAULT_CAP, name: str = "G"
) -> FiniteGroup:
    """Closure of ``generators`` by breadth-first search from the identity.

    Raises GroupError once more than ``cap`` elements have been found.
    """
    if cap < 1:
        raise GroupError("cap must be >= 1")
    if dim is None:
        if not generators:
            raise GroupError("dimension required when there are no generators")
        dim = generators[0].dim
    if any(g.dim != dim for g in generators):
        raise GroupError("generator dimension mismatch")
    e = GroupElement.identity(dim)
    elements = [e]
    seen = {_elem_key(e)}
    queue = deque([e])
    while queue:
        h = queue.popleft()
        for g in generators:
            c = compose(g, h)
            k = _elem_key(c)
            if k in seen:
                continue
            seen.add(k)
            elements.append(c)
            if len(elements) > cap:
                raise GroupError(f"group closure exceeds cap={cap}")
            queue.append(c)
    return FiniteGroup(tuple(elements), dim, name, check=len(elements) <= 2000)


def _elem_key(g: GroupElement) -> tuple:
    # 1e-9 rounding is far coarser than float drift from composing orthogonal matrices
    return g.key()


def symmetric(d: int) -> FiniteGroup:
    if d < 1:
        raise GroupError("d must be >= 1")
    elems = tuple(GroupElement.from_perm(p) for p in itertools.permutations(range(d)))
    return FiniteGroup(elems, d, f"symmetric:{d}", check=d <= 6)


def cyclic(d: int) -> FiniteGroup:
    """Cyclic shifts of the d coordinates."""
    if d < 1:
        raise GroupError("d must be >= 1")
    elems = tuple(GroupElement.from_perm([(i + s) % d for i in range(d)]) for s in range(d))
    return FiniteGroup(elems, d, f"cyclic:{d}")


def block_permutation(d: int, block: int) -> FiniteGroup:
    """Permutations of contiguous coordinate blocks of length ``block``."""
    if block < 1 or d % block:
        raise GroupError(f"block={block} does not divide d={d}")
    nb = d // block
    elems = []
    for p in itertools.permutations(range(nb)):
        elems.append(GroupElement.from_perm([p[i // block] * block + i % block for i in range(d)]))
    return FiniteGroup(tuple(elems), d, f"block:{d}:{block}", check=nb <= 6)


def rotation_2d(n: int) -> FiniteGroup:
    """Cyclic group of rotations of the plane by multiples of 2*pi/n."""
    if n < 1:
        raise GroupError("n must be >= 1")
    elems = [GroupElement(_rot(2 * math.pi * k / n)) for k in range(n)]
    return FiniteGroup(tuple(elems), 2, f"rotation:{n}")


def dihedral_2d(n: int) -> FiniteGroup:
    """Symmetries of the regular n-gon: n rotations and n reflections of R^2."""
    if n < 1:
        raise GroupError("n must be >= 1")
    elems = [GroupElement(_rot(2 * math.pi * k / n)) for k in range(n)]
    flip = np.array([[1.0, 0.0], [0.0, -1.0]])
    elems += [GroupElement(_rot(2 * math.pi * k / n) @ flip) for k in range(n)]
    return FiniteGroup(tuple(elems), 2, f"dihedral:{n}")


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    m = np.array([[c, -s], [s, c]])
    m[np.abs(m) < 1e-15] = 0.0
    return m


def trivial(d: int) -> FiniteGroup:
    return FiniteGroup((GroupElement.identity(d),), d, f"trivial:{d}")


def builtin(spec: str) -> FiniteGroup:
    """Parse ``symmetric:6``, ``block:12:3``, ``cyclic:3``, ``dihedral:5``,
    ``rotation:4`` or ``trivial:2``."""
    parts = spec.strip().split(":")
    kind, args = parts[0], parts[1:]
    try:
        nums = [int(a) for a in args]
    except ValueError:
        raise GroupError(f"bad group spec {spec!r}") from None
    makers = {
        "symmetric": (symmetric, 1),
        "cyclic": (cyclic, 1),
        "block": (block_permutation, 2),
        "dihedral": (dihedral_2d, 1),
        "rotation": (rotation_2d, 1),
        "trivial": (trivial, 1),
    }
    if kind not in makers:
        raise GroupError(f"unknown group kind {kind!r}")
    fn, nargs = makers[kind]
    if len(nums) != nargs:
        raise GroupError(f"{kind} takes {nargs} integer argument(s), got {spec!r}")
    return fn(*nums)


def from_config(value) -> FiniteGroup:
    """Build a group from a builtin string or ``{generators: [[...], ...], dim: d}``."""
    if isinstance(value, str):
        return builtin(value)
    if isinstance(value, dict) and "generators" in value:
        gens = [GroupElement(np.array(m, dtype=float)) for m in value["generators"]]
        return generate_group(gens, dim=value.get("dim"), cap=value.get("cap", DEFAULT_CAP),
                              name=value.get("name", "generated"))
    raise GroupError(f"cannot build a group from {value!r}")


@dataclass(frozen=True)
class Orbit:
    representative: np.ndarray
    points: np.ndarray
    size: int

    def stabilizer_size(self, group_order: int) -> int:
        return group_order // self.size


def orbit(G: FiniteGroup, x, tol: float = DEDUP_TOL) -> Orbit:
    x = np.asarray(x, dtype=float)
    imgs = G.images(x)
    kept: list[np.ndarray] = []
    for p in imgs:
        if not any(np.max(np.abs(p - q)) <= tol for q in kept):
            kept.append(p)
    return Orbit(x, np.array(kept), len(kept))


class Membership(NamedTuple):
    inside: bool  # closed fundamental domain
    tie: bool  # on the boundary, within TIE_TOL


def in_fundamental_domain(G: FiniteGroup, x, mode="sorted_coordinates", base=None,
                          metric: str = "euclidean") -> Membership:
    """Closed-domain membership of ``x`` plus a boundary-tie flag.

    ``sorted_coordinates``: for permutation groups, ``x`` is the
    lexicographically smallest point of its orbit. For the full symmetric
    group this is exactly ``x[0] <= x[1] <= ... <= x[d-1]``.

    ``dirichlet``: ``x`` is at least as close to ``base`` as to every other
    image ``g(base)``. ``base`` must have a free orbit. ``metric`` is
    ``euclidean`` or ``geodesic`` (for points on the unit sphere).
    """
    x = np.asarray(x, dtype=float)
    if mode == "sorted_coordinates":
        perms = G.perm_array()
        if perms is None:
            raise GroupError("sorted_coordinates mode needs a permutation group")
        return _lexmin_membership(x, x[perms], perms)
    if mode == "dirichlet":
        if base is None:
            raise GroupError("dirichlet mode needs a base point")
        return _dirichlet_membership(x, dirichlet_images(G, base), metric)
    raise GroupError(f"unknown fundamental-domain mode {mode!r}")


def dirichlet_images(G: FiniteGroup, base) -> np.ndarray:
    """Images of a Dirichlet base point, identity first; checks the orbit is free."""
    base = np.asarray(base, dtype=float)
    if orbit(G, base).size != len(G):
        raise GroupError("dirichlet base point must have a free orbit")
    imgs = G.images(base)
    e = _identity_index(G)
    order = [e] + [i for i in range(len(G)) if i != e]
    return imgs[order]


def _identity_index(G: FiniteGroup) -> int:
    eye = np.eye(G.dim)
    for i, g in enumerate(G.elements):
        if np.max(np.abs(g.matrix - eye)) <= DEDUP_TOL:
            return i
    raise GroupError("identity missing")


def _lexmin_membership(x: np.ndarray, imgs: np.ndarray, perms: np.ndarray) -> Membership:
    d = x.shape[-1]
    diff = imgs - x
    moved = perms != np.arange(d)
    decisive = moved & (np.abs(diff) > TIE_TOL)
    coincide = moved & ~decisive
    inside, tie = True, False
    for k in range(len(perms)):
        hits = np.flatnonzero(decisive[k])
        f = hits[0] if hits.size else d
        if f < d and diff[k, f] < 0:
            inside = False
        if np.any(coincide[k, :f]):
            tie = True
    return Membership(inside, tie)


def _distances(x: np.ndarray, pts: np.ndarray, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.sqrt(np.sum((pts - x) ** 2, axis=-1))
    if metric == "geodesic":
        return np.arccos(np.clip(pts @ x, -1.0, 1.0))
    raise GroupError(f"unknown metric {metric!r}")


def _dirichlet_membership(x: np.ndarray, base_imgs: np.ndarray, metric: str) -> Membership:
    dist = _distances(x, base_imgs, metric)
    d0, rest = dist[0], dist[1:]
    tie = bool(np.any(np.abs(rest - d0) <= TIE_TOL))
    inside = bool(np.all(d0 <= rest + TIE_TOL))
    return Membership(inside, tie)


def fundamental_domain_mask(G: FiniteGroup, X: np.ndarray, mode="sorted_coordinates", base=None,
                            metric: str = "euclidean") -> np.ndarray:
    """Vectorised closed-domain membership for a stack of points."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if mode == "sorted_coordinates":
        perms = G.perm_array()
        if perms is None:
            raise GroupError("sorted_coordinates mode needs a permutation group")
        if len(G) == math.factorial(G.dim):
            return np.all(np.diff(X, axis=1) >= -TIE_TOL, axis=1)
        return np.array([_lexmin_membership(x, x[perms], perms).inside for x in X], dtype=bool)
    if mode == "dirichlet":
        imgs = dirichlet_images(G, base)
        if metric == "euclidean":
            dist = np.sqrt(np.sum((X[:, None, :] - imgs[None]) ** 2, axis=-1))
        else:
            dist = np.arccos(np.clip(X @ imgs.T, -1.0, 1.0))
        return np.all(dist[:, :1] <= dist[:, 1:] + TIE_TOL, axis=1)
    raise GroupError(f"unknown fundamental-domain mode {mode!r}")


def canonicalize(G: FiniteGroup, X: np.ndarray, base=None, metric: str = "euclidean") -> np.ndarray:
    """Map each row of ``X`` to its orbit representative in the fundamental domain.

    Permutation groups without ``base`` use the lexicographic minimum; otherwise
    the image closest to the Dirichlet ``base`` is chosen.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    imgs = G.images(X)  # (g, n, d)
    n = X.shape[0]
    if base is None:
        if not G.is_permutation:
            raise GroupError("non-permutation groups need a Dirichlet base point")
        alive = np.ones(imgs.shape[:2], dtype=bool)
        for col in range(X.shape[1]):
            vals = np.where(alive, imgs[:, :, col], np.inf)
            alive &= vals <= vals.min(axis=0)
        pick = np.argmax(alive, axis=0)
    else:
        base = np.asarray(base, dtype=float)
        if metric == "geodesic":
            score = -np.einsum("gnd,d->gn", imgs, base)
        else:
            score = np.sum((imgs - base) ** 2, axis=-1)
        pick = np.argmin(score, axis=0)
    return imgs[pick, np.arange(n)]
