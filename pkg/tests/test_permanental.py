import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from permkern.matrix import conjugate, lt_determinant
from permkern.permanental import (
    NotSamplableError,
    PermanentalSpec,
    half_factor,
    lt_report,
    parse_alpha,
    sample_alpha,
    sample_half,
    sample_rational,
    samples_to_csv,
)


def wishart(n, rng):
    A = rng.standard_normal((n, n))
    return A @ A.T / n


def test_parse_alpha():
    assert parse_alpha("3/2") == Fraction(3, 2)
    assert parse_alpha(1) == Fraction(1)
    assert parse_alpha(0.5) == Fraction(1, 2)
    with pytest.raises(ValueError):
        parse_alpha("0/1")
    with pytest.raises(ValueError):
        parse_alpha("-1/2")


def test_spec_copies():
    assert PermanentalSpec(np.eye(2), "1/2").copies == 1
    assert PermanentalSpec(np.eye(2), "3/2").copies == 3
    assert PermanentalSpec(np.eye(2), "1/3").copies is None
    assert not PermanentalSpec(np.eye(2), "1/3").samplable
    assert not PermanentalSpec([[1, 2], [0, 1]], "1/2").samplable


def test_half_factor():
    rng = np.random.default_rng(0)
    K = wishart(4, rng)
    L, clipped = half_factor(K)
    assert np.allclose(L @ L.T, K, atol=1e-12)
    assert clipped == 0.0
    with pytest.raises(NotSamplableError):
        half_factor([[1, 0.5], [0.4, 1]])
    with pytest.raises(NotSamplableError):
        half_factor([[1, 2], [2, 1]])
    # rank-deficient kernel with a round-off negative eigenvalue is accepted
    v = rng.standard_normal(3)
    L, _ = half_factor(np.outer(v, v))
    assert np.allclose(L @ L.T, np.outer(v, v), atol=1e-12)


def test_half_marginal_means():
    Y = sample_half(np.eye(2), 1_000_000, seed=1)
    se = Y.std(axis=0, ddof=1) / np.sqrt(len(Y))
    assert np.all(np.abs(Y.mean(axis=0) - 0.5) <= 3 * se)


def test_half_lt_one_dim():
    Y = sample_half([[1.0]], 400_000, seed=2)
    e = np.exp(-Y[:, 0])
    assert lt_determinant([[1.0]], [1.0], 0.5) == pytest.approx(0.70711, abs=1e-5)
    assert abs(e.mean() - 2 ** -0.5) <= 4 * e.std(ddof=1) / np.sqrt(len(e))


def test_zero_kernel_samples_zero():
    assert np.all(sample_half(np.zeros((3, 3)), 100, seed=0) == 0.0)


def test_alpha_one_exponential():
    Y = sample_rational([[1.0]], 1, 1, 400_000, seed=3)
    se = Y.std(ddof=1) / np.sqrt(len(Y))
    assert abs(Y.mean() - 1.0) <= 4 * se
    # exponential(1): variance 1
    assert Y.var() == pytest.approx(1.0, rel=0.02)


def test_three_halves_lt():
    spec = PermanentalSpec(np.eye(2), "3/2")
    rep = lt_report(spec, [[1.0, 1.0]], count=400_000, seed=4)
    assert rep.exact[0] == pytest.approx(0.125, rel=1e-14)
    assert not rep.flags[0]


def test_lt_report_zero_probe_exact():
    rep = lt_report(PermanentalSpec(np.eye(2), "1/2"), [[0.0, 0.0], [1.0, 1.0]], count=10_000, seed=0)
    assert rep.exact[0] == 1.0 and rep.empirical[0] == 1.0 and rep.std_err[0] == 0.0
    assert rep.exact[1] == pytest.approx(0.5)
    d = json.loads(rep.to_json())
    assert d["alpha"] == "1/2" and d["sample_count"] == 10_000


def test_lt_report_std_err_definition():
    Y = sample_half(np.eye(2), 5000, seed=9)
    rep = lt_report(PermanentalSpec(np.eye(2), "1/2"), [[0.3, 0.7]], samples=Y)
    e = np.exp(-(Y @ np.array([0.3, 0.7])))
    assert rep.std_err[0] == pytest.approx(e.std(ddof=1) / np.sqrt(5000), rel=1e-12)
    assert rep.marginal_mean == pytest.approx(Y.mean(axis=0).tolist())


def test_exact_only_conjugation():
    rng = np.random.default_rng(5)
    K = rng.uniform(0.1, 1, (4, 4)) + 2 * np.eye(4)
    C = conjugate(K, rng.uniform(0.1, 10, 4))
    pts = rng.uniform(0, 2, (6, 4))
    a = lt_report(PermanentalSpec(K, "1/3"), pts, exact_only=True)
    b = lt_report(PermanentalSpec(C, "1/3"), pts, exact_only=True)
    assert np.allclose(a.exact, b.exact, rtol=1e-10, atol=0)
    assert a.empirical is None and a.sample_count == 0


def test_not_samplable_errors():
    with pytest.raises(NotSamplableError):
        sample_rational(np.eye(2), 1, 3, 10)
    with pytest.raises(NotSamplableError):
        lt_report(PermanentalSpec(np.eye(2), "1/3"), [[1, 1]])
    with pytest.raises(ValueError):
        sample_half(np.eye(2), 0)
    with pytest.raises(ValueError):
        lt_report(PermanentalSpec(np.eye(2), "1/2"), [[1, 1, 1]])
    with pytest.raises(ValueError):
        lt_report(PermanentalSpec(np.eye(2), "1/2"), [[-1, 1]])


def test_seed_determinism_and_threads(monkeypatch):
    K = wishart(3, np.random.default_rng(6))
    monkeypatch.setenv("PERMKERN_THREADS", "1")
    a = sample_alpha(K, "3/2", 200_000, seed=11)
    monkeypatch.setenv("PERMKERN_THREADS", "4")
    b = sample_alpha(K, "3/2", 200_000, seed=11)
    assert np.array_equal(a, b)
    c = sample_alpha(K, "3/2", 200_000, seed=12)
    assert not np.array_equal(a, c)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["1/2", "1", "3/2", "2"]))
def test_superposition_matches_exact(seed, alpha):
    rng = np.random.default_rng(seed)
    K = wishart(3, rng)
    pts = rng.uniform(0, 2, (5, 3))
    rep = lt_report(PermanentalSpec(K, alpha), pts, count=100_000, seed=seed)
    # 4 standard errors per probe; allow a single stray probe
    assert sum(rep.flags) <= 1
    mean_target = float(Fraction(alpha)) * np.diag(K)
    assert np.all(np.abs(np.array(rep.marginal_mean) - mean_target) <= 5 * np.array(rep.marginal_std_err))


def test_samples_csv():
    Y = sample_half(np.eye(2), 3, seed=0)
    text = samples_to_csv(Y)
    back = np.loadtxt(text.splitlines(), delimiter=",")
    assert np.array_equal(back, Y)
