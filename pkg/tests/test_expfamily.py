import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from robust_ising.expfamily import (
    ApgdConfig,
    ConvergenceWarning,
    EnumeratedFamily,
    SuffStatSpec,
    apgd_minimize,
    estimate_moments,
    exact_moments,
    mle_fit,
    mle_from_mean,
    suff_stats,
    whiten_factor,
)
from robust_ising.ising import (
    CapacityError,
    DobrushinSpec,
    DomainError,
    IsingParameters,
    ParameterError,
    check_bounded,
    random_dobrushin,
)

OMEGA = DobrushinSpec.dobrushin(0.5)


# --- sufficient statistics ----------------------------------------------------


def test_zero_field_stats_example():
    np.testing.assert_array_equal(suff_stats(SuffStatSpec.zero_field(3), [1, 1, -1]), [1, -1, -1])


def test_centered_with_zero_center_reduces_to_pairs():
    x = np.array([1, -1, -1, 1])
    t = suff_stats(SuffStatSpec.centered(np.zeros(4)), x)
    np.testing.assert_array_equal(t[:6], suff_stats(SuffStatSpec.zero_field(4), x))
    np.testing.assert_array_equal(t[6:], x)


def test_centered_stats_arithmetic():
    t = suff_stats(SuffStatSpec.centered([0.5, 0.5]), [1, -1])
    np.testing.assert_allclose(t, [-0.75, 1.0, -1.0])


def test_spec_validation():
    with pytest.raises(ParameterError):
        SuffStatSpec("centered-with-linear", 3)
    with pytest.raises(ParameterError):
        SuffStatSpec.centered([0.0, np.inf])
    with pytest.raises(DomainError):
        suff_stats(SuffStatSpec.zero_field(2), [1, 2])
    assert SuffStatSpec.zero_field(6).dim == 15
    assert SuffStatSpec.centered(np.zeros(6)).dim == 21


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(2, 7))
def test_stat_ranges(seed, d):
    rng = np.random.default_rng(seed)
    x = rng.choice([-1, 1], size=(20, d))
    assert set(np.unique(SuffStatSpec.zero_field(d).transform(x))) <= {-1.0, 1.0}
    v = rng.uniform(-1, 1, d)
    t = SuffStatSpec.centered(v).transform(x)[:, : d * (d - 1) // 2]
    assert np.abs(t).max() <= (1 + np.abs(v).max()) ** 2


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_natural_round_trip_is_exact_affine_identity(seed):
    rng = np.random.default_rng(seed)
    p = random_dobrushin(5, 0.6, alpha=0.3, seed=seed)
    spec = SuffStatSpec.centered(rng.uniform(-1, 1, 5))
    back = spec.from_natural(spec.natural(p))
    np.testing.assert_array_equal(back.interaction, p.interaction)
    np.testing.assert_allclose(back.field, p.field, atol=1e-15)
    # <eta, T(x)> differs from the log-density by a constant
    X = rng.choice([-1.0, 1.0], size=(8, 5))
    e = spec.transform(X) @ spec.natural(p)
    ld = 0.5 * np.einsum("ni,ij,nj->n", X, p.interaction, X) + X @ p.field
    np.testing.assert_allclose(e - ld, (e - ld)[0], atol=1e-12)


# --- moments ------------------------------------------------------------------


def test_uniform_moments():
    spec = SuffStatSpec.zero_field(5)
    n = 40_000
    est = estimate_moments(IsingParameters.zeros(5), spec, n, 0.05, seed=1)
    tol = 5 * n**-0.5 * math.log(n)
    assert np.abs(est.mean).max() < tol
    assert np.abs(est.cov - np.eye(10)).max() < tol
    mu, cov = exact_moments(IsingParameters.zeros(5), spec)
    np.testing.assert_allclose(mu, 0, atol=1e-15)
    np.testing.assert_allclose(cov, np.eye(10), atol=1e-15)


def test_moment_estimate_against_enumeration():
    p = random_dobrushin(4, 0.5, seed=3)
    spec = SuffStatSpec.zero_field(4)
    est = estimate_moments(p, spec, 100_000, 0.01, seed=9)
    mu, _ = exact_moments(p, spec)
    assert np.linalg.norm(est.mean - mu) <= 0.02
    assert est.nUsed == 100_000 and est.gammaUsed == 0.01
    np.testing.assert_allclose(est.cov, est.cov.T, atol=1e-10)
    assert np.linalg.eigvalsh(est.cov).min() >= -1e-8


def test_moment_capacity():
    with pytest.raises(CapacityError):
        estimate_moments(IsingParameters.zeros(4), SuffStatSpec.zero_field(4), 100, 0.1, max_entries=599)
    with pytest.raises(ParameterError):
        estimate_moments(IsingParameters.zeros(4), SuffStatSpec.zero_field(4), 1, 0.1)


@pytest.mark.parametrize("seed", range(3))
def test_likelihood_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    spec = SuffStatSpec.zero_field(5)
    fam = EnumeratedFamily(spec)
    eta = random_dobrushin(5, 0.7, seed=seed).upper()
    mu_p = rng.uniform(-0.3, 0.3, spec.dim)

    def loglik(e):
        return e @ mu_p - fam.log_partition(e)

    h = 1e-5
    fd = np.array([(loglik(eta + h * np.eye(spec.dim)[k]) - loglik(eta - h * np.eye(spec.dim)[k])) / (2 * h) for k in range(spec.dim)])
    np.testing.assert_allclose(fd, mu_p - fam.mean(eta), atol=1e-6)


def test_hessian_spectrum_bounds():
    spec = SuffStatSpec.zero_field(5)
    fam = EnumeratedFamily(spec)
    lo, hi = np.inf, 0.0
    for seed in range(100):
        _, cov = fam.moments(random_dobrushin(5, 0.5, seed=seed).upper())
        w = np.linalg.eigvalsh(cov)
        lo, hi = min(lo, w[0]), max(hi, w[-1])
    # the defaults m = 0.1 and L = 10 bracket the observed curvature
    assert 0.1 < lo and hi < 10.0


def test_covariance_lipschitz_constant_is_stable():
    spec = SuffStatSpec.zero_field(5)
    fam = EnumeratedFamily(spec)

    def worst(seed0):
        r = 0.0
        for s in range(seed0, seed0 + 30):
            a = random_dobrushin(5, 0.5, seed=s).upper()
            b = random_dobrushin(5, 0.5, seed=s + 10_000).upper()
            r = max(r, np.linalg.norm(fam.moments(a)[1] - fam.moments(b)[1], 2) / np.linalg.norm(a - b))
        return r

    base = worst(0)
    assert 0 < base < 5
    for seed0 in (100, 200):
        assert abs(worst(seed0) / base - 1) <= 0.5


# --- APGD ---------------------------------------------------------------------


def box(lo, hi):
    return lambda x: np.clip(x, lo, hi)


def test_apgd_unconstrained_quadratic():
    a = np.array([0.3, -0.2, 0.1])
    cfg = ApgdConfig(smoothness=2.0, strongConvexity=1.0, targetDist=1e-6, gradientTol=1e-9, projectionTol=1e-9)
    res = apgd_minimize(lambda x, t: x - a, box(-1, 1), np.zeros(3), cfg, diameter=2 * math.sqrt(3))
    assert res.converged
    assert np.linalg.norm(res.x - a) <= 1e-6


def test_apgd_box_projection_of_outside_point():
    a = np.array([2.0, -0.5, -3.0])
    cfg = ApgdConfig(smoothness=4.0, strongConvexity=1.0, targetDist=1e-4, gradientTol=1e-9, projectionTol=1e-9)
    res = apgd_minimize(lambda x, t: x - a, box(-1, 1), np.zeros(3), cfg, diameter=2 * math.sqrt(3))
    assert np.linalg.norm(res.x - np.clip(a, -1, 1)) <= cfg.error_bound()


@pytest.mark.parametrize("seed", range(5))
def test_apgd_contraction_recursion(seed):
    rng = np.random.default_rng(seed)
    k = 6
    Q = rng.normal(size=(k, k))
    H = Q @ Q.T + 0.5 * np.eye(k)
    w = np.linalg.eigvalsh(H)
    a = rng.normal(size=k)
    xstar = np.linalg.solve(H, H @ a)
    cfg = ApgdConfig(smoothness=float(w[-1]), strongConvexity=float(w[0]), targetDist=1e-3, gradientTol=1e-12, projectionTol=1e-12)
    res = apgd_minimize(lambda x, t: H @ (x - a), lambda x: x, np.zeros(k), cfg, diameter=10 * np.linalg.norm(xstar) + 1, record=True)
    dist = [np.linalg.norm(x - xstar) for x in res.path]
    q = math.sqrt(1 - cfg.strongConvexity / cfg.smoothness)
    slack = cfg.projectionTol + cfg.gradientTol / cfg.smoothness
    for t in range(len(dist) - 1):
        assert dist[t + 1] <= slack + q * dist[t] + 1e-12
    assert dist[-1] <= cfg.targetDist


def test_apgd_iteration_cap_flag():
    cfg = ApgdConfig(smoothness=100.0, strongConvexity=0.01, targetDist=1e-8, gradientTol=1e-9, projectionTol=1e-9, maxIters=10)
    res = apgd_minimize(lambda x, t: x - 1.0, lambda x: x, np.zeros(2), cfg, diameter=10.0)
    assert not res.converged and res.iterations == 10


def test_apgd_config_validation():
    with pytest.raises(ParameterError):
        ApgdConfig(smoothness=1.0, strongConvexity=2.0)
    with pytest.raises(ParameterError):
        ApgdConfig(targetDist=0.0)


# --- maximum likelihood -------------------------------------------------------


def test_mle_of_zero_mean_is_uniform():
    theta = mle_from_mean(np.zeros(6), SuffStatSpec.zero_field(4), OMEGA, 0.01)
    assert np.linalg.norm(theta.upper()) <= 0.01


@pytest.mark.parametrize("seed", range(3))
def test_mle_recovers_parameters_from_exact_moments(seed):
    p = random_dobrushin(4, 0.45, seed=seed)
    spec = SuffStatSpec.zero_field(4)
    mu, _ = exact_moments(p, spec)
    theta = mle_from_mean(mu, spec, OMEGA, 0.01)
    assert np.linalg.norm(theta.upper() - p.upper()) <= 0.05
    assert check_bounded(theta, OMEGA)


def test_mle_perturbation_stability():
    p = random_dobrushin(4, 0.3, seed=5)
    spec = SuffStatSpec.zero_field(4)
    fam = EnumeratedFamily(spec)
    mu, cov = exact_moments(p, spec)
    c = np.linalg.eigvalsh(cov)[0]
    rng = np.random.default_rng(0)
    for _ in range(5):
        u = rng.normal(size=spec.dim)
        u /= np.linalg.norm(u)
        theta = mle_from_mean(mu + 0.02 * u, spec, OMEGA, 0.001)
        assert np.linalg.norm(theta.upper() - p.upper()) <= 2 * 0.02 / c


def test_mle_centered_layout_recovers_field():
    p = random_dobrushin(4, 0.3, alpha=0.2, seed=3)
    spec = SuffStatSpec.centered([0.1, -0.2, 0.3, 0.0])
    mu, _ = exact_moments(p, spec)
    fit = mle_fit(mu, spec, DobrushinSpec.bounded(0.3, 0.2), 0.01)
    np.testing.assert_allclose(fit.params.interaction, p.interaction, atol=1e-6)
    np.testing.assert_allclose(fit.params.field, p.field, atol=1e-6)


def test_mle_with_sampled_gradients():
    p = random_dobrushin(3, 0.4, seed=1)
    spec = SuffStatSpec.zero_field(3)
    mu, _ = exact_moments(p, spec)
    fit = mle_fit(mu, spec, OMEGA, 0.1, gradient="mc", budget=4000, max_iters=40)
    assert fit.samplesPerGradient == 4000
    assert np.linalg.norm(fit.natural - p.upper()) <= 0.1
    again = mle_fit(mu, spec, OMEGA, 0.1, gradient="mc", budget=4000, max_iters=40)
    np.testing.assert_array_equal(fit.natural, again.natural)


def test_mle_cap_warning_and_input_checks():
    spec = SuffStatSpec.zero_field(3)
    with pytest.warns(ConvergenceWarning):
        mle_from_mean(np.zeros(3), spec, OMEGA, 0.01, max_iters=3)
    with pytest.raises(ParameterError):
        mle_from_mean(np.zeros(2), spec, OMEGA, 0.01)
    with pytest.raises(ParameterError):
        mle_from_mean(np.zeros(3), spec, OMEGA, 1.5)


# --- whitening ----------------------------------------------------------------


def test_whiten_identity_and_diagonal():
    inv, sq = whiten_factor(np.eye(3))
    np.testing.assert_allclose(inv, np.eye(3), atol=1e-15)
    np.testing.assert_allclose(sq, np.eye(3), atol=1e-15)
    inv, sq = whiten_factor(np.diag([4.0, 1.0]))
    np.testing.assert_allclose(inv, np.diag([0.5, 1.0]), atol=1e-15)
    np.testing.assert_allclose(sq, np.diag([2.0, 1.0]), atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_whiten_random_spd(seed):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(6, 6))
    S = F @ F.T + 0.1 * np.eye(6)
    inv, sq = whiten_factor(S)
    assert np.linalg.norm(inv @ S @ inv - np.eye(6), 2) <= 1e-8
    np.testing.assert_allclose(sq @ inv, np.eye(6), atol=1e-8)


def test_whiten_clamps_degenerate_spectrum():
    inv, _ = whiten_factor(np.zeros((2, 2)), floor=1e-6)
    np.testing.assert_allclose(inv, 1e3 * np.eye(2))
