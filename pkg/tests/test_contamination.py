import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_ising.contamination import AttackSpec, best_spin_for, corrupt, corrupt_vectors
from robust_ising.expfamily import SuffStatSpec
from robust_ising.ising import ParameterError, enumerate_states


def spins(n, d, seed=0):
    return np.random.default_rng(seed).choice(np.array([-1, 1], dtype=np.int8), size=(n, d))


def replaced_rows(X, Y):
    return np.flatnonzero(np.any(X != Y, axis=1))


def test_zero_eps_is_identity():
    X = spins(100, 5)
    for kind in ("replace-with-point", "mean-shift-direction", "pair-correlation-boost"):
        np.testing.assert_array_equal(corrupt(X, AttackSpec(kind, 0.0)), X)


def test_replace_with_point_shifts_pair_means():
    X = spins(200_000, 4, seed=1)
    Y = corrupt(X, AttackSpec("replace-with-point", 0.1, seed=3))
    spec = SuffStatSpec.zero_field(4)
    before = spec.transform(X).mean(axis=0)
    after = spec.transform(Y).mean(axis=0)
    np.testing.assert_allclose(before, 0.0, atol=0.01)
    np.testing.assert_allclose(after, 0.1, atol=0.01)


def test_same_seed_same_corruption():
    X = spins(500, 6)
    a = AttackSpec("pair-correlation-boost", 0.2, {"pairs": [(0, 1), (2, 5)]}, seed=9)
    np.testing.assert_array_equal(corrupt(X, a), corrupt(X, a))
    b = AttackSpec("pair-correlation-boost", 0.2, {"pairs": [(0, 1), (2, 5)]}, seed=10)
    assert not np.array_equal(corrupt(X, a), corrupt(X, b))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**31),
    n=st.integers(1, 300),
    eps=st.floats(0.0, 0.49),
    kind=st.sampled_from(["replace-with-point", "mean-shift-direction", "pair-correlation-boost"]),
)
def test_replacement_contract(seed, n, eps, kind):
    X = spins(n, 5, seed)
    Y = corrupt(X, AttackSpec(kind, eps, seed=seed))
    assert set(np.unique(Y)) <= {-1, 1}
    changed = replaced_rows(X, Y)
    # a replaced row can coincide with its original, so at most floor(eps n) differ
    assert changed.size <= math.floor(eps * n)
    keep = np.setdiff1d(np.arange(n), changed)
    np.testing.assert_array_equal(Y[keep], X[keep])
    # replacement realizes TV contamination at level <= eps
    assert changed.size / n <= eps + 1e-12


def test_exactly_floor_eps_n_rows_replaced():
    # every clean row is -1s, the point is +1s, so every replaced row differs
    X = -np.ones((97, 3), dtype=np.int8)
    Y = corrupt(X, AttackSpec("replace-with-point", 0.13, seed=2))
    assert replaced_rows(X, Y).size == math.floor(0.13 * 97)


def test_mean_shift_maximizes_the_functional():
    d = 5
    rng = np.random.default_rng(0)
    w = rng.normal(size=10)
    best = best_spin_for(w, d)
    vals = SuffStatSpec.zero_field(d).transform(enumerate_states(d)) @ w
    assert SuffStatSpec.zero_field(d).transform(best)[0] @ w == pytest.approx(vals.max())
    np.testing.assert_array_equal(np.abs(best_spin_for(np.ones(10), d)), 1.0)
    assert abs(best_spin_for(np.ones(10), d).sum()) == d


def test_pair_boost_aligns_pairs():
    X = spins(400, 4, seed=5)
    Y = corrupt(X, AttackSpec("pair-correlation-boost", 0.25, {"pairs": [(1, 3)]}, seed=1))
    idx = np.random.default_rng(1).choice(400, size=100, replace=False)
    assert np.all(Y[idx, 1] == Y[idx, 3])


def test_heavy_tail_on_vectors_only():
    X = spins(100, 4)
    with pytest.raises(ParameterError):
        corrupt(X, AttackSpec("heavy-tail-injection", 0.1))
    T = SuffStatSpec.zero_field(4).transform(X)
    out = corrupt_vectors(T, AttackSpec("heavy-tail-injection", 0.1, {"scale": 500.0}))
    norms = np.linalg.norm(out - T.mean(axis=0), axis=1)
    assert (norms > 400).sum() == 10
    with pytest.raises(ParameterError):
        corrupt_vectors(T, AttackSpec("replace-with-point", 0.1))


def test_attack_validation():
    with pytest.raises(ParameterError):
        AttackSpec("flip-everything", 0.1)
    with pytest.raises(ParameterError):
        AttackSpec("replace-with-point", 0.5)
    with pytest.raises(ParameterError):
        corrupt(spins(10, 3), AttackSpec("replace-with-point", 0.2, {"point": [1, 0, 1]}))
    with pytest.raises(ParameterError):
        corrupt(spins(10, 3), AttackSpec("pair-correlation-boost", 0.2, {"pairs": [(0, 0)]}))


def test_antithetic_heavy_tail_keeps_the_mean():
    T = SuffStatSpec.zero_field(4).transform(spins(1000, 4, seed=2))
    out = corrupt_vectors(T, AttackSpec("heavy-tail-injection", 0.1, {"antithetic": True}, seed=4))
    changed = np.flatnonzero(np.any(out != T, axis=1))
    assert changed.size == 100
    np.testing.assert_allclose(out[changed].mean(axis=0), T.mean(axis=0), atol=1e-9)
