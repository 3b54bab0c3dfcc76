"""Robust parameter learning: a sqrt(eps) initial estimate followed by whitened refinement rounds."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .expfamily import (
    SuffStatSpec,
    estimate_moments,
    mle_fit,
    whiten_factor,
)
from .glauber import chain_key
from .ising import (
    DEFAULT_ENUM_CAP,
    DobrushinSpec,
    IsingParameters,
    ParameterError,
    _check_spins,
    check_bounded,
)
from .robust_mean import (
    BoundedCovConfig,
    FilterDiagnostics,
    NearIdentityConfig,
    robust_mean_bounded_cov,
    robust_mean_near_identity,
)


class ConstraintError(ParameterError):
    """The external-field sample-complexity constraint fails for the requested inputs."""

    def __init__(self, lhs: float, rhs: float):
        self.lhs, self.rhs = lhs, rhs
        super().__init__(f"constraint violated: lhs = {lhs:.17g} > rhs = {rhs:.17g}")


@dataclass(frozen=True)
class LearnerConfig:
    C0: float = 3.0
    Cref: float = 1.0
    Ctau: float = 2.0
    Cn: float = 100.0
    budget: int = 200_000
    eps0: float = 0.1
    seed: int = 0
    rounds: Optional[int] = None
    zeta: float = 0.05
    gradient: str = "auto"
    smoothness: float = 10.0
    strongConvexity: float = 0.1
    mleDeltaFactor: float = 0.1
    mleDeltaMin: float = 1e-3
    mixingConstant: float = 20.0
    enumCap: int = DEFAULT_ENUM_CAP
    sigma: Optional[float] = None
    c1: float = 0.5
    boundedCov: BoundedCovConfig = field(default_factory=BoundedCovConfig)
    nearIdentity: NearIdentityConfig = field(
        default_factory=lambda: NearIdentityConfig(
            stopConst=0.25, minThreshold=3.0, tailMult=2.0, tailScale=0.75, thresholdRule="most-significant"
        )
    )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "LearnerConfig":
        data = dict(data)
        if "boundedCov" in data and isinstance(data["boundedCov"], dict):
            data["boundedCov"] = BoundedCovConfig(**data["boundedCov"])
        if "nearIdentity" in data and isinstance(data["nearIdentity"], dict):
            data["nearIdentity"] = NearIdentityConfig(**data["nearIdentity"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ParameterError(f"unknown learner constants: {sorted(unknown)}")
        return cls(**data)


@dataclass
class RoundRecord:
    k: int
    tauK: float
    covSpectralGap: float
    filterDiag: FilterDiagnostics
    wallMs: float
    nSynthetic: int = 0
    thetaError: Optional[float] = None


@dataclass
class RefinementTrace:
    rounds: list = field(default_factory=list)
    budgetShortfall: bool = False
    apgdCapped: bool = False
    thetas: list = field(default_factory=list)

    @property
    def taus(self) -> list:
        return [r.tauK for r in self.rounds]

    def errors(self) -> list:
        return [r.thetaError for r in self.rounds]


@dataclass(frozen=True, eq=False)
class CenteredRecovery:
    v: np.ndarray
    J: np.ndarray
    h: np.ndarray

    def to_params(self) -> IsingParameters:
        return IsingParameters(self.J, self.h - self.J @ self.v)

    @classmethod
    def from_params(cls, params: IsingParameters, v) -> "CenteredRecovery":
        v = np.asarray(v, dtype=float)
        return cls(v, params.interaction.copy(), params.field + params.interaction @ v)


def num_rounds(eps: float) -> int:
    if eps <= 0:
        return 2
    inner = math.log2(1.0 / eps)
    if inner <= 1:
        return 2
    return max(2, math.ceil(math.log2(inner)) + 1)


def next_tau(tau: float, eps: float, Cref: float) -> float:
    if eps <= 0:
        return tau
    return Cref * (math.sqrt(eps * tau) + eps * math.log(1.0 / eps))


def plug_in_sigma(samples: np.ndarray) -> float:
    """sqrt(max(1, 1.5 * top covariance eigenvalue of the 80% of rows nearest the coordinate median))."""
    X = np.asarray(samples, dtype=float)
    dist = np.linalg.norm(X - np.median(X, axis=0), axis=1)
    order = np.argsort(dist, kind="stable")
    keep = X[order[: max(2, int(0.8 * X.shape[0]))]]
    C = keep - keep.mean(axis=0)
    lam = np.linalg.eigvalsh(C.T @ C / keep.shape[0])[-1]
    return math.sqrt(max(1.0, 1.5 * lam))


def _theta_error(spec: SuffStatSpec, params: IsingParameters, truth: Optional[IsingParameters]):
    if truth is None:
        return None
    return float(
        np.sqrt(np.sum((params.interaction - truth.interaction) ** 2) + np.sum((params.field - truth.field) ** 2))
    )


def _mle(mu, spec, omega, tau, cfg: LearnerConfig, seed, start, trace: RefinementTrace):
    delta = min(0.5, max(cfg.mleDeltaMin, cfg.mleDeltaFactor * tau))
    fit = mle_fit(
        mu,
        spec,
        omega,
        delta,
        cfg.zeta,
        gradient=cfg.gradient,
        smoothness=cfg.smoothness,
        strong_convexity=cfg.strongConvexity,
        start=start,
        seed=seed,
        budget=cfg.budget,
        mixing_constant=cfg.mixingConstant,
        enum_cap=cfg.enumCap,
    )
    if not fit.result.converged:
        trace.apgdCapped = True
    return fit


def robust_learn_expfam(
    T,
    eps: float,
    omega: DobrushinSpec,
    spec: SuffStatSpec,
    cfg: LearnerConfig = LearnerConfig(),
    truth: Optional[IsingParameters] = None,
):
    """Learn natural parameters from eps-corrupted sufficient-statistic rows.

    Returns (IsingParameters, RefinementTrace).  Round 0 of the trace is the
    bounded-covariance stage; rounds 1..K are whitened refinements.  Record k
    carries tau_k, the error scale of that round's output; round k samples and
    filters at tau_{k-1}.  When
    ``truth`` is given each record carries the parameter error.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[1] != spec.dim:
        raise ParameterError(f"expected rows of length {spec.dim}")
    if not (0 <= eps < cfg.eps0):
        raise ParameterError(f"eps must lie in [0, {cfg.eps0}), got {eps}")
    N, dim = T.shape
    trace = RefinementTrace()
    t0 = time.perf_counter()

    sigma = cfg.sigma if cfg.sigma is not None else plug_in_sigma(T)
    mu, diag = robust_mean_bounded_cov(T, eps, sigma, cfg.boundedCov)
    tau = cfg.C0 * math.sqrt(eps) if eps > 0 else math.sqrt(dim / N)
    fit = _mle(mu, spec, omega, tau, cfg, chain_key(cfg.seed, 0), None, trace)
    theta = fit.natural
    params = fit.params
    trace.thetas.append(params)
    trace.rounds.append(
        RoundRecord(0, tau, diag.finalTopEigenvalue, diag, 1e3 * (time.perf_counter() - t0), 0, _theta_error(spec, params, truth))
    )

    K = cfg.rounds if cfg.rounds is not None else num_rounds(eps)
    for k in range(1, K + 1):
        t0 = time.perf_counter()
        tau_in = tau
        tau = next_tau(tau, eps, cfg.Cref)
        n_want = math.ceil(cfg.Cn * dim / tau_in**2)
        n_k = min(cfg.budget, n_want)
        if n_k < n_want:
            trace.budgetShortfall = True
        gamma = min(0.5, max(1e-12, tau_in**2 / dim**2))
        est = estimate_moments(params, spec, n_k, gamma, seed=chain_key(cfg.seed, 2 * k), mixing_constant=cfg.mixingConstant)
        inv_sqrt, sqrt = whiten_factor(est.cov)
        Z = (T - est.mean) @ inv_sqrt
        zmu, diag = robust_mean_near_identity(Z, eps, cfg.Ctau * tau_in, cfg.nearIdentity)
        mu = est.mean + sqrt @ zmu
        fit = _mle(mu, spec, omega, tau, cfg, chain_key(cfg.seed, 2 * k + 1), theta, trace)
        theta = fit.natural
        params = fit.params
        trace.thetas.append(params)
        trace.rounds.append(
            RoundRecord(
                k, tau, diag.finalTopEigenvalue, diag, 1e3 * (time.perf_counter() - t0), n_k, _theta_error(spec, params, truth)
            )
        )
    return params, trace


def naive_mle(T, omega: DobrushinSpec, spec: SuffStatSpec, cfg: LearnerConfig = LearnerConfig()) -> IsingParameters:
    """MLE on the raw empirical mean of T, with no filtering."""
    T = np.asarray(T, dtype=float)
    tau = math.sqrt(spec.dim / T.shape[0])
    return _mle(T.mean(axis=0), spec, omega, tau, cfg, chain_key(cfg.seed, 0), None, RefinementTrace()).params


def robust_learn_ising_zero_field(samples, eps: float, eta: float, cfg: LearnerConfig = LearnerConfig(), truth=None):
    X = _check_spins(np.asarray(samples))
    if X.ndim != 2:
        raise ParameterError("samples must be a 2-D array of spins")
    omega = DobrushinSpec.dobrushin(eta)
    spec = SuffStatSpec.zero_field(X.shape[1])
    params, trace = robust_learn_expfam(spec.transform(X), eps, omega, spec, cfg, truth)
    if not check_bounded(params, omega):
        raise ParameterError("internal error: output left the Dobrushin set")
    return params, trace


def check_external_constraint(M: float, alpha: float, c0: float, c1: float, eps: float):
    """Evaluate both sides of the feasibility inequality for the external-field learner."""
    if not (0 <= M < 1):
        raise ParameterError(f"M must lie in [0, 1), got {M}")
    lhs = 4.0 * (M / (1.0 - M) + c1 * math.sqrt(eps)) ** 2
    e = math.exp(-2.0 * (alpha + 2.0 * M))
    rhs = (1.0 - c0) * (8.0 * (e / (1.0 + e)) ** 2 - 2.0 * M / (1.0 - M) - c0)
    return lhs <= rhs, lhs, rhs


def robust_learn_ising_external(
    samples, eps: float, omega: DobrushinSpec, c0: float, cfg: LearnerConfig = LearnerConfig(), truth=None
):
    """Learner for models with an external field via the v-centered statistics.

    Refuses with ConstraintError before any work when the feasibility
    inequality fails.  Returns (IsingParameters, CenteredRecovery, RefinementTrace).
    """
    ok, lhs, rhs = check_external_constraint(omega.M, omega.alpha, c0, cfg.c1, eps)
    if not ok:
        raise ConstraintError(lhs, rhs)
    X = _check_spins(np.asarray(samples)).astype(float)
    if X.ndim != 2:
        raise ParameterError("samples must be a 2-D array of spins")
    if not (0 <= eps < cfg.eps0):
        raise ParameterError(f"eps must lie in [0, {cfg.eps0}), got {eps}")
    sigma = cfg.sigma if cfg.sigma is not None else plug_in_sigma(X)
    v, _ = robust_mean_bounded_cov(X, eps, sigma, cfg.boundedCov)
    spec = SuffStatSpec.centered(v)
    params, trace = robust_learn_expfam(spec.transform(X), eps, omega, spec, replace(cfg, sigma=None), truth)
    rec = CenteredRecovery.from_params(params, v)
    return params, rec, trace


def naive_external(samples, omega: DobrushinSpec, cfg: LearnerConfig = LearnerConfig()) -> IsingParameters:
    X = np.asarray(samples, dtype=float)
    spec = SuffStatSpec.centered(X.mean(axis=0))
    return naive_mle(spec.transform(X), omega, spec, cfg)


TRACE_COLUMNS = ("k", "tau_k", "mass_removed", "cov_gap", "wall_ms")


def write_trace(trace: RefinementTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in trace.rounds:
            w.writerow([r.k, f"{r.tauK:.17g}", f"{r.filterDiag.massRemoved:.17g}", f"{r.covSpectralGap:.17g}", f"{r.wallMs:.17g}"])
