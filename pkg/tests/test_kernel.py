import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import gamma, kv
from scipy.stats import special_ortho_group

from invbo import group as grp
from invbo import kernel as kn
from invbo.kernel import Additive, KernelError, Matern, SphereRestricted, Symmetrized


def bessel_matern(r, nu, l, a=1.0):
    """Textbook Matérn via the modified Bessel function of the second kind."""
    r = np.asarray(r, dtype=float)
    s = math.sqrt(2 * nu) * r / l
    with np.errstate(invalid="ignore"):
        out = a * 2 ** (1 - nu) / gamma(nu) * s**nu * kv(nu, s)
    return np.where(r == 0, a, out)


@pytest.mark.parametrize("nu", kn.HALF_INTEGER_NUS)
def test_closed_form_matches_bessel(nu):
    r = np.linspace(0, 3, 301)
    k = Matern(nu, 0.7, 1.3)
    assert np.allclose(k.profile(r), bessel_matern(r, nu, 0.7, 1.3), rtol=1e-12, atol=1e-14)


def test_exponential_case():
    k = Matern(0.5, 0.3)
    x, y = np.array([0.1, 0.2]), np.array([0.4, 0.6])
    assert k.eval(x, y) == pytest.approx(math.exp(-0.5 / 0.3), rel=1e-14)


def test_matern52_at_one_lengthscale():
    k = Matern(2.5, 0.12)
    s = math.sqrt(5)
    expected = (1 + s + 5 / 3) * math.exp(-s)
    assert k.eval(np.array([0.0, 0.0]), np.array([0.12, 0.0])) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("nu", kn.HALF_INTEGER_NUS)
def test_zero_distance_is_exact(nu):
    x = np.array([0.3, 0.7, 0.11])
    assert Matern(nu, 0.2, 2.0).eval(x, x) == 2.0


def test_bad_parameters():
    with pytest.raises(KernelError):
        Matern(2.0)
    with pytest.raises(KernelError):
        Matern(2.5, lengthscale=0.0)
    with pytest.raises(KernelError):
        Matern(2.5).eval(np.zeros(2), np.zeros(3))


def test_trivial_group_symmetrization_is_base():
    base = Matern(2.5, 0.3)
    k = Symmetrized(base, grp.trivial(2))
    X = np.random.default_rng(0).uniform(size=(10, 2))
    assert np.array_equal(k(X, X), base(X, X))


def test_s2_formula():
    base = Matern(1.5, 0.4)
    k = Symmetrized(base, grp.symmetric(2))
    x, y = np.array([0.2, 0.9]), np.array([0.5, 0.1])
    expected = 0.5 * (base.eval(x, y) + base.eval(x[::-1], y))
    assert k.eval(x, y) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("name", ["symmetric:3", "dihedral:5", "cyclic:5", "block:6:2"])
def test_single_sum_equals_double_sum(name):
    G = grp.builtin(name)
    rng = np.random.default_rng(1)
    X, Y = rng.uniform(size=(20, G.dim)), rng.uniform(size=(20, G.dim))
    base = Matern(2.5, 0.5)
    a = Symmetrized(base, G, "single_sum").paired(X, Y)
    b = Symmetrized(base, G, "double_sum").paired(X, Y)
    assert np.max(np.abs(a - b)) <= 1e-12


def test_single_sum_requires_simultaneous_invariance():
    class Linear(kn.Kernel):
        def _cross(self, X, Y):
            return X @ Y.T

        def _paired(self, X, Y):
            return np.einsum("ij,ij->i", X, Y)

    with pytest.raises(KernelError):
        Symmetrized(Linear(), grp.symmetric(2))
    Symmetrized(Linear(), grp.symmetric(2), "double_sum")


@given(st.sampled_from(["symmetric:2", "symmetric:3", "cyclic:3", "dihedral:5", "block:6:3"]),
       st.sampled_from(["single_sum", "double_sum"]), st.integers(0, 2**32 - 1))
def test_total_invariance(name, mode, seed):
    G = grp.builtin(name)
    rng = np.random.default_rng(seed)
    k = Symmetrized(Matern(2.5, rng.uniform(0.1, 1)), G, mode)
    x, y = rng.uniform(size=G.dim), rng.uniform(size=G.dim)
    s, t = G.elements[rng.integers(len(G))], G.elements[rng.integers(len(G))]
    assert abs(k.eval(s(x), t(y)) - k.eval(x, y)) <= 1e-10


def test_additive_is_weighted_sum():
    G = grp.symmetric(2)
    inv = Symmetrized(Matern(2.5, 0.12), G)
    std = Matern(2.5, 0.12)
    x, y = np.array([0.3, 0.35]), np.array([0.32, 0.3])
    eps = 0.05
    caption = kn.quasi_invariant(inv, std, eps)
    convex = kn.quasi_invariant(inv, std, eps, "convex")
    assert caption.eval(x, y) == pytest.approx(inv.eval(x, y) + eps * std.eval(x, y), abs=1e-15)
    assert convex.eval(x, y) == pytest.approx((1 - eps) * inv.eval(x, y) + eps * std.eval(x, y), abs=1e-15)
    pure = kn.quasi_invariant(inv, std, 0.0, "convex")
    assert pure.eval(x, y) == pytest.approx(inv.eval(x, y), abs=1e-15)


def test_additive_weights_validated():
    with pytest.raises(KernelError):
        Additive(((-0.1, Matern()),))
    with pytest.raises(KernelError):
        Additive(((0.0, Matern()),))
    with pytest.raises(KernelError):
        Additive(())


def _variants():
    G = grp.symmetric(3)
    b = Matern(2.5, 0.4)
    return {
        "matern": b,
        "single": Symmetrized(b, G),
        "double": Symmetrized(b, G, "double_sum"),
        "additive": kn.quasi_invariant(Symmetrized(b, G), Matern(1.5, 0.2), 0.1),
        "sphere": SphereRestricted(b),
    }


@pytest.mark.parametrize("name", list(_variants()))
def test_gram_psd_and_symmetric(name):
    k = _variants()[name]
    X = np.random.default_rng(2).standard_normal((50, 3))
    X = X / np.linalg.norm(X, axis=1, keepdims=True) if name == "sphere" else np.abs(X) % 1
    K = k.gram(X)
    assert np.array_equal(K, K.T)
    assert np.linalg.eigvalsh(K).min() >= -1e-8
    Y = X[::-1].copy()
    assert np.max(np.abs(k(X, Y) - k(Y, X).T)) <= 1e-12


def test_gram_single_point_and_diagonal():
    k = Matern(2.5, 0.3, 1.7)
    assert k.gram(np.array([[0.1, 0.2]])).tolist() == [[1.7]]
    X = np.random.default_rng(3).uniform(size=(10, 2))
    assert np.all(np.diag(k.gram(X)) == 1.7)
    with pytest.raises(KernelError):
        k.gram(np.zeros((0, 2)))


def test_symmetrized_gram_invariant_under_swapping_inputs():
    k = Symmetrized(Matern(2.5, 0.2), grp.symmetric(2))
    X = np.random.default_rng(4).uniform(size=(15, 2))
    assert np.max(np.abs(k.gram(X) - k.gram(X[:, ::-1]))) <= 1e-12


def test_sphere_rejects_non_unit():
    k = SphereRestricted(Matern())
    with pytest.raises(KernelError):
        k.eval(np.array([1.0, 0.0]), np.array([0.5, 0.5]))
    assert k.eval(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(Matern().profile(math.sqrt(2)))


@given(st.integers(0, 2**32 - 1))
def test_matern_is_stationary_under_rigid_motions(seed):
    rng = np.random.default_rng(seed)
    k = Matern(2.5, 0.5)
    x, y = rng.uniform(size=3), rng.uniform(size=3)
    Q = special_ortho_group.rvs(3, random_state=rng)
    shift = rng.standard_normal(3)
    assert abs(k.eval(Q @ x + shift, Q @ y + shift) - k.eval(x, y)) <= 1e-12


def test_config_round_trip():
    cfg = {"kind": "additive", "components": [
        {"weight": 1.0, "kernel": {"kind": "symmetrized", "group": "symmetric:2",
                                   "base": {"kind": "matern", "nu": 2.5, "lengthscale": 0.12}}},
        {"weight": 0.05, "kernel": {"kind": "matern", "nu": 2.5, "lengthscale": 0.12}}]}
    k = kn.from_config(cfg)
    k2 = kn.from_config(k.to_config())
    X = np.random.default_rng(5).uniform(size=(6, 2))
    assert np.array_equal(k(X, X), k2(X, X))
    with pytest.raises(KernelError):
        kn.from_config({"kind": "rbf"})
