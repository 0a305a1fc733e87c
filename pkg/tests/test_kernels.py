import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permkern.kernels import (
    KernelFamily,
    PotentialValidationError,
    diag_plus_constant,
    dpc_tail_family,
    exp_toeplitz,
    exp_toeplitz_family,
    family_from_matrix,
    from_descriptor,
    min_family,
    min_kernel,
    monotone_function,
    perturb,
    potential_from_generator,
    random_potential,
    validate_potential,
)
from permkern.symcheck import Symmetrizable, symmetrizable

from oracles import inv3


def test_exp_toeplitz_examples():
    K = exp_toeplitz([1, 2, 3], np.log(2))
    assert np.allclose(np.diag(K.entries), 1.0)
    assert K.entries[0, 1] == pytest.approx(0.5, rel=1e-15)
    assert K.entries[0, 2] == pytest.approx(0.25, rel=1e-15)
    assert exp_toeplitz([0.0], 3.0).entries.tolist() == [[1.0]]
    assert K.labels.tolist() == [1.0, 2.0, 3.0]
    with pytest.raises(ValueError):
        exp_toeplitz([1, 1, 2], 1.0)
    with pytest.raises(ValueError):
        exp_toeplitz([1, 2], 0.0)


def test_exp_toeplitz_is_toeplitz_on_equal_spacing():
    K = exp_toeplitz(np.arange(7) * 0.25 + 1.0, 1.7).entries
    for off in range(-6, 7):
        d = np.diagonal(K, off)
        assert np.all(d == d[0])
    assert np.array_equal(K, K.T)


def test_min_kernel_examples():
    assert min_kernel([1, 2, 3]).entries.tolist() == [[1, 1, 1], [1, 2, 2], [1, 2, 3]]
    assert min_kernel([5]).entries.tolist() == [[5.0]]
    with pytest.raises(ValueError):
        min_kernel([0, 1])
    with pytest.raises(ValueError):
        min_kernel([2, 1])


def test_diag_plus_constant_examples():
    assert diag_plus_constant([1, 2, 3], 1).entries.tolist() == [[2, 1, 1], [1, 3, 1], [1, 1, 4]]
    assert np.array_equal(diag_plus_constant([0, 0, 0], 1).entries, np.ones((3, 3)))
    assert np.array_equal(diag_plus_constant([1, 2], 0).entries, np.diag([1.0, 2.0]))
    with pytest.raises(ValueError):
        diag_plus_constant([1, 0], 0)


def test_perturb_examples():
    P = perturb(np.zeros((2, 2)), [1, 2])
    assert P.composed.entries.tolist() == [[1, 2], [1, 2]]
    M = perturb(min_kernel([1, 2, 3]), [1, 2, 3]).composed.entries
    # row j, column k: min(s_j, s_k) + f(s_k)
    assert M.tolist() == [[2, 3, 4], [2, 4, 5], [2, 4, 6]]
    T = perturb(exp_toeplitz([1, 2, 3], np.log(2)), [1, 2, 3]).composed.entries
    assert np.allclose(np.diag(T), [2, 3, 4])
    assert T[0, 1] == pytest.approx(2.5) and T[1, 0] == pytest.approx(1.5)
    with pytest.raises(ValueError):
        perturb(np.eye(2), [1, 2, 3])
    with pytest.raises(ValueError):
        perturb(np.eye(2), [1, 0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_perturb_column_constant(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    B = rng.standard_normal((n, n))
    f = rng.uniform(0.1, 5, n)
    C = perturb(B, f).composed.entries
    assert np.array_equal(C, B + f[None, :])
    # on integer entries the column shift is recovered exactly
    Bi = np.round(B * 8)
    fi = np.round(f * 8) + 1
    D = perturb(Bi, fi).composed.entries - Bi
    assert np.all(D == fi[None, :])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000))
def test_dpc_plus_f_symmetrizable_with_explicit_witness(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 8))
    lam = rng.uniform(0, 3, n)
    d = float(rng.uniform(0.1, 2))
    f = rng.uniform(0.1, 3, n)
    K = perturb(diag_plus_constant(lam, d), f).composed.entries
    assert isinstance(symmetrizable(K), Symmetrizable)
    g = np.sqrt(f + d)
    C = g[:, None] * K / g[None, :]
    assert np.max(np.abs(C - C.T)) <= 1e-12 * np.abs(C).max()


def test_validate_potential_examples():
    assert validate_potential(np.array([[2, 1], [1, 2]]) / 3).ok
    rep = validate_potential([[1, 2], [2, 1]])
    assert not rep.dominated and "dominated" in rep.failures
    rep = validate_potential(np.eye(4))
    assert rep.ok and not rep.details["strictly_positive"]
    assert not validate_potential([[1, 0.5], [0.4, 1]]).symmetric
    assert not validate_potential([[1, -0.1], [-0.1, 1]]).positive


def test_potential_from_generator_two_by_two():
    P = potential_from_generator([[2, -1], [-1, 2]])
    assert np.allclose(P.U.entries, np.array([[2, 1], [1, 2]]) / 3, rtol=1e-14)
    with pytest.raises(PotentialValidationError):
        potential_from_generator([[1, 2], [2, 1]])
    with pytest.raises(PotentialValidationError):
        potential_from_generator(np.eye(3))


def test_random_potential_small():
    P = random_potential(1, seed=3)
    assert P.U.entries[0, 0] > 0
    assert P.U.entries[0, 0] == pytest.approx(1.0 / P.generator.entries[0, 0])
    P = random_potential(3, seed=11)
    assert np.allclose(P.U.entries, inv3(P.generator.entries), rtol=1e-10)


def test_random_potential_many_seeds():
    for n in (3, 10, 30):
        for seed in range(1000):
            P = random_potential(n, seed=seed, dominance=0.1)
            assert validate_potential(P.U).ok, (n, seed)


def test_random_potential_deterministic():
    a = random_potential(10, seed=5).U.entries
    b = random_potential(10, seed=5).U.entries
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        random_potential(0)


def test_generator_structure():
    A = random_potential(12, seed=2).generator.entries
    off = A[~np.eye(12, dtype=bool)]
    assert np.all(off <= 0)
    assert np.all(np.diag(A) > 0)
    rs = A.sum(axis=1)
    assert np.all(rs >= 0) and np.any(rs > 0)


def test_monotone_catalog():
    sat = monotone_function("monotone:k->2-exp(-k)")
    assert sat(0.0) == 1.0
    assert sat(mpmath.mpf(1)) == 2 - mpmath.exp(-1)
    aff = monotone_function("affine:1,0.5")
    assert aff(np.array([0.0, 2.0])).tolist() == [1.0, 2.0]
    pw = monotone_function({"kind": "power", "q": 1, "beta": 2.5})
    assert pw(4.0) == pytest.approx(33.0)
    assert "caveat" in pw.describe()
    with pytest.raises(ValueError):
        monotone_function("sin")
    with pytest.raises(ValueError):
        monotone_function("affine:1,0")


def test_families():
    fam = exp_toeplitz_family(1.0, "saturating")
    assert fam.entry(3, 5) == pytest.approx(np.exp(-2) + 2 - np.exp(-5))
    with mpmath.workdps(50):
        assert abs(fam.entry_mp(3, 5) - (mpmath.exp(-2) + 2 - mpmath.exp(-5))) < mpmath.mpf(10) ** -45
    m = min_family("affine:0,1")
    assert m.entry(2, 7) == 9.0
    t = dpc_tail_family(4, "affine:0,1", lam=1, d=0.5)
    assert t.entry(5, 5) == 1.5 + 5 and t.entry(5, 6) == 0.5 + 6
    assert t.entry(1, 2) == pytest.approx(1.5 * np.exp(-1) + 2)
    F = family_from_matrix(np.arange(9.0).reshape(3, 3))
    assert F.size == 3 and F.entry(2, 3) == 5.0
    assert isinstance(F, KernelFamily)


def test_from_descriptor():
    K = from_descriptor({"family": "exp_toeplitz", "points": [1, 2, 3], "lambda": 1.0})
    assert K.n == 3
    P = from_descriptor({"family": "min_kernel", "points": [1, 2, 3], "f": [1, 2, 3]})
    assert P.composed.entries.tolist() == [[2, 3, 4], [2, 4, 5], [2, 4, 6]]
    P = from_descriptor({"family": "min_kernel", "points": [1, 2, 3], "f": "affine:0,1"})
    assert P.composed.entries.tolist() == [[2, 3, 4], [2, 4, 5], [2, 4, 6]]
    D = from_descriptor({"family": "diag_plus_constant", "lam": [1, 2], "d": 1})
    assert D.entries.tolist() == [[2, 1], [1, 3]]
    fam = from_descriptor({"family": "exp_toeplitz_plus_f", "lambda": 1, "f": "monotone:k->2-exp(-k)"})
    assert fam.size is None
    with pytest.raises(ValueError):
        from_descriptor({"family": "nope"})
