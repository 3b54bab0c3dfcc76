"""Spectral filters for mean estimation under a fraction of adversarial points."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from .ising import ParameterError


@dataclass(frozen=True)
class FilterDiagnostics:
    rounds: int
    massRemoved: float
    finalTopEigenvalue: float
    thresholdUsed: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundedCovConfig:
    stopFactor: float = 9.0
    roundsPerDim: int = 5
    powerIters: int = 200
    powerTol: float = 1e-10
    massCap: float = 3.0


@dataclass(frozen=True)
class NearIdentityConfig:
    stopConst: float = 20.0
    minThreshold: float = 10.0
    tailMult: float = 6.0
    tailScale: float = 3.0
    roundsPerDim: int = 5
    massCap: float = 3.0
    thresholdRule: str = "smallest"
    ratioSlack: float = 0.5
    farCount: float = 0.01

    def __post_init__(self):
        if self.thresholdRule not in ("smallest", "most-significant"):
            raise ParameterError(f"unknown threshold rule {self.thresholdRule!r}")


def _prepare(samples, eps: float):
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ParameterError("need a 2-D array with at least two rows")
    if not np.all(np.isfinite(X)):
        raise ParameterError("samples must be finite")
    if not (0 <= eps < 1 / 3):
        raise ParameterError(f"eps must lie in [0, 1/3), got {eps}")
    # canonical row order makes every reduction independent of input order
    order = np.lexsort(X.T[::-1])
    return X[order]


def exact_mean(X: np.ndarray) -> np.ndarray:
    """Column means from exactly rounded sums, so the result ignores row order."""
    return np.array([math.fsum(col) for col in X.T]) / X.shape[0]


def _weighted(X, w):
    s = w.sum()
    mu = (w @ X) / s
    C = X - mu
    return mu, (C * (w / s)[:, None]).T @ C


def top_eigenpair(S: np.ndarray, iters: int = 200, tol: float = 1e-10):
    """Power iteration from the all-ones direction; falls back to eigh."""
    k = S.shape[0]
    u = np.ones(k) / math.sqrt(k)
    lam = 0.0
    for _ in range(iters):
        y = S @ u
        lam = float(u @ y)
        ny = np.linalg.norm(y)
        if ny == 0:
            break
        resid = np.linalg.norm(y - lam * u)
        u = y / ny
        if resid <= tol * max(abs(lam), 1e-300):
            return float(u @ S @ u), u
    w, V = np.linalg.eigh(S)
    return float(w[-1]), V[:, -1]


def robust_mean_bounded_cov(samples, eps: float, sigma: float, cfg: BoundedCovConfig = BoundedCovConfig()):
    """Soft-downweighting filter for data with covariance at most sigma^2 I.

    Stops once the weighted top eigenvalue is at most stopFactor*sigma^2 or
    the removed weight reaches min(1/2, massCap*eps).
    """
    if sigma <= 0:
        raise ParameterError("sigma must be positive")
    X = _prepare(samples, eps)
    n, k = X.shape
    w = np.full(n, 1.0 / n)
    cap = min(0.5, cfg.massCap * eps)
    thresh = cfg.stopFactor * sigma**2
    max_rounds = cfg.roundsPerDim * k if cap > 0 else 0
    rounds = 0
    mu, S = _weighted(X, w)
    lam, u = top_eigenpair(S, cfg.powerIters, cfg.powerTol)
    while lam > thresh and rounds < max_rounds:
        scores = ((X - mu) @ u) ** 2
        smax = scores[w > 0].max()
        if smax <= 0:
            break
        new = w * (1.0 - scores / smax)
        if 1.0 - new.sum() > cap:
            # shrink the step so the total removed weight lands on the cap
            removed_now = 1.0 - w.sum()
            step = w - new
            frac = (cap - removed_now) / step.sum() if step.sum() > 0 else 0.0
            new = w - max(frac, 0.0) * step
            w = new
            rounds += 1
            mu, S = _weighted(X, w)
            lam, u = top_eigenpair(S, cfg.powerIters, cfg.powerTol)
            break
        w = new
        rounds += 1
        mu, S = _weighted(X, w)
        lam, u = top_eigenpair(S, cfg.powerIters, cfg.powerTol)
    if rounds == 0:
        mu = exact_mean(X)
    removed = float(min(max(1.0 - w.sum(), 0.0), 1.0))
    return mu, FilterDiagnostics(rounds, removed, lam, thresh)


def _tail_threshold(z: np.ndarray, frac_floor: float, cfg: NearIdentityConfig):
    """Threshold T >= minThreshold where the tail fraction beyond T exceeds the allowance.

    The allowance is tailMult*exp(-T/tailScale) + frac_floor.  Rule "smallest"
    returns the smallest qualifying T.  Rule "most-significant" returns the
    largest qualifying T whose tail/allowance ratio is within ratioSlack of
    the maximum; for a tight outlier cluster this cuts just below the cluster
    instead of into the clean tail.
    """
    a = np.sort(np.abs(z))
    n = a.size
    lo = cfg.minThreshold

    if cfg.thresholdRule == "most-significant":
        cand = np.concatenate([[lo], a[a > lo]])
        tail = (n - np.searchsorted(a, cand, side="right")) / n
        allow = cfg.tailMult * np.exp(-cand / cfg.tailScale) + frac_floor
        ratio = tail / allow
        ok = np.flatnonzero(ratio > 1.0)
        if ok.size == 0:
            return None
        # among near-maximal exceedances prefer the cut that removes the fewest points
        near = ok[ratio[ok] >= cfg.ratioSlack * ratio[ok].max()]
        return float(cand[near[-1]])
    start = np.searchsorted(a, lo, side="right")
    # on [a[j-1], a[j]) (clipped below by lo) the fraction beyond T is (n - j)/n
    edges = np.concatenate([[lo], a[start:]])
    for idx in range(edges.size - 1):
        frac = (n - (start + idx)) / n
        excess = frac - frac_floor
        if excess <= 0:
            return None
        # need tailMult * exp(-T/tailScale) < excess
        t_need = cfg.tailScale * math.log(cfg.tailMult / excess) if excess < cfg.tailMult else -math.inf
        T = max(edges[idx], t_need)
        if T < edges[idx + 1]:
            return T
    return None


def robust_mean_near_identity(samples, eps: float, tau: float, cfg: NearIdentityConfig = NearIdentityConfig()):
    """Hard-threshold filter for sub-exponential data with covariance near the identity."""
    if tau < 0:
        raise ParameterError("tau must be non-negative")
    if eps > 0 and tau > 10 * math.sqrt(eps):
        warnings.warn("tau is large compared with sqrt(eps); the sharper guarantee may not apply", RuntimeWarning, stacklevel=2)
    X = _prepare(samples, eps)
    n, k = X.shape
    keep = np.ones(n, dtype=bool)
    cap = min(0.5, cfg.massCap * eps)
    elog = eps * math.log(1.0 / eps) if eps > 0 else 0.0
    stop = cfg.stopConst * (tau + elog)
    floor = eps / (k * math.log(k)) if k > 1 else eps
    max_rounds = cfg.roundsPerDim * k if cap > 0 else 0
    rounds = 0
    used = math.nan
    mu = X.mean(axis=0)
    C = X - mu
    S = C.T @ C / n
    # only excess variance can be caused by outliers, so the gap is one-sided
    wv, V = np.linalg.eigh(S - np.eye(k))
    gap = float(wv[-1])
    while gap > stop and rounds < max_rounds:
        u = V[:, -1]
        z = X[keep] @ u
        # a median center keeps far outliers from dragging every clean point into the tail
        z -= np.median(z)
        T = _tail_threshold(z, floor, cfg)
        if T is None:
            # the floor hides a sparse far set; cut where the tail model expects
            # fewer than farCount clean points
            far = max(cfg.minThreshold, cfg.tailScale * math.log(cfg.tailMult * z.size / cfg.farCount))
            if not np.any(np.abs(z) > far):
                break
            T = far
        out = np.zeros(n, dtype=bool)
        out[np.flatnonzero(keep)[np.abs(z) > T]] = True
        if (n - keep.sum() + out.sum()) / n > cap:
            break
        keep &= ~out
        used = T
        rounds += 1
        Xk = X[keep]
        mu = Xk.mean(axis=0)
        C = Xk - mu
        S = C.T @ C / Xk.shape[0]
        wv, V = np.linalg.eigh(S - np.eye(k))
        gap = float(wv[-1])
    if rounds == 0:
        mu = exact_mean(X)
    return mu, FilterDiagnostics(rounds, float(1.0 - keep.sum() / n), gap, used)
