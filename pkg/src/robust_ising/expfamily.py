"""Sufficient statistics, moment estimation and maximum likelihood for Ising families.

Two layouts are supported.  ``zero-field-pairs`` uses T(x) = (x_i x_j)_{i<j}
with natural parameter theta_ij.  ``centered-with-linear`` uses
T(x) = ((x_i - v_i)(x_j - v_j)_{i<j}, x) with natural parameter (J, h) where
J = theta_ij and h_i = theta_i + sum_j theta_ij v_j.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

from .glauber import ChainConfig, chain_key, sample_batch
from .ising import (
    DEFAULT_ENUM_CAP,
    CapacityError,
    DobrushinSpec,
    IsingParameters,
    ParameterError,
    _check_spins,
    enumerate_states,
    exact_summary,
    project_pairs,
)

ZERO_FIELD = "zero-field-pairs"
CENTERED = "centered-with-linear"


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True, eq=False)
class SuffStatSpec:
    kind: str
    d: int
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in (ZERO_FIELD, CENTERED):
            raise ParameterError(f"unknown sufficient-statistic kind {self.kind!r}")
        if self.kind == CENTERED:
            if self.center is None:
                raise ParameterError("centered statistics need a center vector")
            v = np.asarray(self.center, dtype=float).reshape(-1)
            if v.shape != (self.d,) or not np.all(np.isfinite(v)):
                raise ParameterError("center must be a finite length-d vector")
            v.setflags(write=False)
            object.__setattr__(self, "center", v)

    @classmethod
    def zero_field(cls, d: int) -> "SuffStatSpec":
        return cls(ZERO_FIELD, d)

    @classmethod
    def centered(cls, center) -> "SuffStatSpec":
        center = np.asarray(center, dtype=float)
        return cls(CENTERED, center.size, center)

    @property
    def npairs(self) -> int:
        return self.d * (self.d - 1) // 2

    @property
    def dim(self) -> int:
        return self.npairs + (self.d if self.kind == CENTERED else 0)

    def transform(self, x) -> np.ndarray:
        """Rows of spins -> rows of T(x)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        iu, ju = np.triu_indices(self.d, k=1)
        if self.kind == ZERO_FIELD:
            return x[:, iu] * x[:, ju]
        c = x - self.center
        return np.hstack([c[:, iu] * c[:, ju], x])

    def natural(self, params: IsingParameters) -> np.ndarray:
        """Natural parameter vector of ``params`` in this layout."""
        if params.d != self.d:
            raise ParameterError("dimension mismatch")
        if self.kind == ZERO_FIELD:
            if np.any(params.field != 0):
                raise ParameterError("zero-field layout cannot carry an external field")
            return params.upper()
        h = params.field + params.interaction @ self.center
        return np.concatenate([params.upper(), h])

    def from_natural(self, eta: np.ndarray) -> IsingParameters:
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.dim,):
            raise ParameterError(f"expected a natural vector of length {self.dim}")
        if self.kind == ZERO_FIELD:
            return IsingParameters.from_upper(eta, d=self.d)
        J = IsingParameters.from_upper(eta[: self.npairs], d=self.d).interaction
        return IsingParameters(J, eta[self.npairs :] - J @ self.center)


def suff_stats(spec: SuffStatSpec, x) -> np.ndarray:
    x = _check_spins(x)
    out = spec.transform(x)
    return out[0] if x.ndim == 1 else out


@dataclass(frozen=True, eq=False)
class MomentEstimate:
    mean: np.ndarray
    cov: np.ndarray
    nUsed: int
    gammaUsed: float


def psd_clamp(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    if w.min(initial=0.0) >= 0:
        return cov
    cov = (V * np.maximum(w, 0.0)) @ V.T
    return 0.5 * (cov + cov.T)


def empirical_moments(T: np.ndarray):
    mu = T.mean(axis=0)
    c = T - mu
    return mu, psd_clamp(c.T @ c / T.shape[0])


def estimate_moments(
    params: IsingParameters,
    spec: SuffStatSpec,
    n: int,
    gamma: float,
    seed: int = 0,
    mixing_constant: float = 20.0,
    max_entries: int = 200_000_000,
) -> MomentEstimate:
    """Empirical mean and (1/n) covariance of T over n Glauber samples."""
    if n < 2:
        raise ParameterError("need at least two samples")
    if n * spec.dim > max_entries:
        raise CapacityError(f"n*dim(T) = {n * spec.dim} exceeds the budget {max_entries}")
    cfg = ChainConfig(gamma=gamma, mixingConstant=mixing_constant, masterSeed=seed)
    X = sample_batch(params, n, cfg)
    mu, cov = empirical_moments(spec.transform(X))
    return MomentEstimate(mu, cov, n, gamma)


class EnumeratedFamily:
    """Exact moments of exp(<eta, T(x)> - A(eta)) over all of {-1, +1}^d."""

    def __init__(self, spec: SuffStatSpec, cap: int = DEFAULT_ENUM_CAP):
        if spec.d > cap:
            raise CapacityError(f"d={spec.d} exceeds the enumeration cap {cap}")
        self.spec = spec
        self.T = spec.transform(enumerate_states(spec.d))

    def log_partition(self, eta) -> float:
        return float(logsumexp(self.T @ eta))

    def moments(self, eta):
        logits = self.T @ eta
        p = np.exp(logits - logsumexp(logits))
        mu = p @ self.T
        c = self.T - mu
        return mu, (c * p[:, None]).T @ c

    def mean(self, eta) -> np.ndarray:
        logits = self.T @ eta
        return np.exp(logits - logsumexp(logits)) @ self.T


def exact_moments(params: IsingParameters, spec: SuffStatSpec, cap: int = DEFAULT_ENUM_CAP):
    s = exact_summary(params, stats=spec.transform, cap=cap)
    return s.suffStatMean, s.suffStatCov


@dataclass(frozen=True)
class ApgdConfig:
    smoothness: float = 10.0
    strongConvexity: float = 0.1
    targetDist: float = 1e-2
    gradientTol: float = 1e-2
    projectionTol: float = 1e-2
    maxIters: int = 100_000

    def __post_init__(self):
        if not (0 < self.strongConvexity <= self.smoothness):
            raise ParameterError("need 0 < m <= L")
        if min(self.targetDist, self.gradientTol, self.projectionTol) <= 0:
            raise ParameterError("tolerances must be positive")

    def iterations(self, diameter: float) -> int:
        ratio = self.smoothness / self.strongConvexity
        return max(1, math.ceil(ratio * math.log(max(diameter / self.targetDist, 1.0 + 1e-12))))

    def error_bound(self) -> float:
        """Distance-to-optimum guarantee after the full iteration count."""
        q = math.sqrt(1.0 - self.strongConvexity / self.smoothness)
        slack = self.projectionTol + self.gradientTol / self.smoothness
        return self.targetDist + (slack / (1.0 - q) if q < 1 else slack)


@dataclass(eq=False)
class ApgdResult:
    x: np.ndarray
    iterations: int
    converged: bool
    path: list = field(default_factory=list)


def apgd_minimize(
    grad_oracle: Callable[[np.ndarray, int], np.ndarray],
    proj_oracle: Callable[[np.ndarray], np.ndarray],
    start,
    cfg: ApgdConfig,
    diameter: float,
    record: bool = False,
) -> ApgdResult:
    """Projected gradient descent with inexact gradients and projections.

    ``grad_oracle(x, t)`` receives the iteration index so stochastic oracles
    can draw fresh randomness per step.  Runs cfg.iterations(diameter) steps
    of x <- proj(x - g / L); if that exceeds cfg.maxIters the iterate with the
    smallest step length is returned with ``converged=False``.
    """
    x = np.asarray(start, dtype=float).copy()
    wanted = cfg.iterations(diameter)
    steps = min(wanted, cfg.maxIters)
    path = [x.copy()] if record else []
    best, best_move = x.copy(), math.inf
    for t in range(steps):
        r = x - grad_oracle(x, t) / cfg.smoothness
        nxt = proj_oracle(r)
        move = float(np.linalg.norm(nxt - x))
        x = nxt
        if move < best_move:
            best, best_move = x.copy(), move
        if record:
            path.append(x.copy())
    if wanted > cfg.maxIters:
        return ApgdResult(best, steps, False, path)
    return ApgdResult(x, steps, True, path)


def make_projector(spec: SuffStatSpec, omega: DobrushinSpec, tol: float):
    """Approximate projection onto the feasible set in natural coordinates.

    For the centered layout the projection is carried out in theta
    coordinates and mapped forward.
    """
    d, k = spec.d, spec.npairs
    if spec.kind == ZERO_FIELD:
        return lambda eta: project_pairs(eta, d, omega.M, tol)[0]
    v = spec.center

    def proj(eta):
        J = eta[:k]
        field = eta[k:] - IsingParameters.from_upper(J, d=d).interaction @ v
        J2, _ = project_pairs(J, d, omega.M, tol)
        f2 = np.clip(field, -omega.alpha, omega.alpha)
        return np.concatenate([J2, f2 + IsingParameters.from_upper(J2, d=d).interaction @ v])

    return proj


@dataclass(eq=False)
class MleFit:
    params: IsingParameters
    natural: np.ndarray
    result: ApgdResult
    samplesPerGradient: int = 0


def gradient_sample_size(dim: int, delta1: float, zeta: float, const: float = 25.0) -> int:
    return math.ceil(const * (dim + math.log(1.0 / zeta)) / delta1**2)


def mle_fit(
    mu_target,
    spec: SuffStatSpec,
    omega: DobrushinSpec,
    delta: float,
    zeta: float = 0.05,
    *,
    gradient: str = "auto",
    smoothness: float = 10.0,
    strong_convexity: float = 0.1,
    start: Optional[np.ndarray] = None,
    seed: int = 0,
    budget: int = 200_000,
    mixing_constant: float = 20.0,
    grad_const: float = 25.0,
    max_iters: int = 100_000,
    enum_cap: int = DEFAULT_ENUM_CAP,
) -> MleFit:
    """Maximize <eta, mu_target> - A(eta) over the feasible set.

    ``gradient`` selects the mean oracle: "mc" (Glauber samples, fresh per
    iteration), "exact" (enumeration) or "auto" (exact when d <= enum_cap).
    """
    mu_target = np.asarray(mu_target, dtype=float)
    if mu_target.shape != (spec.dim,) or not np.all(np.isfinite(mu_target)):
        raise ParameterError("target mean must be a finite vector of length dim(T)")
    if not (0 < delta < 1) or not (0 < zeta < 1):
        raise ParameterError("delta and zeta must lie in (0, 1)")
    if gradient == "auto":
        gradient = "exact" if spec.d <= enum_cap else "mc"
    cfg = ApgdConfig(smoothness, strong_convexity, delta, delta, delta, max_iters)
    n_grad = 0
    if gradient == "exact":
        fam = EnumeratedFamily(spec, cap=enum_cap)

        def grad(eta, t):
            return fam.mean(eta) - mu_target

    elif gradient == "mc":
        n_grad = min(budget, gradient_sample_size(spec.dim, delta, zeta, grad_const))
        gamma = min(0.5, delta**2 / (100.0 * n_grad))

        def grad(eta, t):
            chain = ChainConfig(gamma, mixing_constant, chain_key(seed, t))
            X = sample_batch(spec.from_natural(eta), n_grad, chain)
            return spec.transform(X).mean(axis=0) - mu_target

    else:
        raise ParameterError(f"unknown gradient oracle {gradient!r}")
    proj = make_projector(spec, omega, delta)
    x0 = np.zeros(spec.dim) if start is None else proj(np.asarray(start, dtype=float))
    if spec.kind == CENTERED and start is None:
        x0 = proj(x0)
    res = apgd_minimize(grad, proj, x0, cfg, omega.diameter(spec.d))
    return MleFit(spec.from_natural(res.x), res.x, res, n_grad)


def mle_from_mean(mu_target, spec: SuffStatSpec, omega: DobrushinSpec, delta: float, zeta: float = 0.05, **kw):
    fit = mle_fit(mu_target, spec, omega, delta, zeta, **kw)
    if not fit.result.converged:
        warnings.warn("APGD stopped at its iteration cap", ConvergenceWarning, stacklevel=2)
    return fit.params


def whiten_factor(cov, floor: float = 1e-6):
    """(cov^{-1/2}, cov^{1/2}) from the spectrum clamped below at ``floor``."""
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    w = np.maximum(w, floor)
    inv_sqrt = (V / np.sqrt(w)) @ V.T
    sqrt = (V * np.sqrt(w)) @ V.T
    return 0.5 * (inv_sqrt + inv_sqrt.T), 0.5 * (sqrt + sqrt.T)
