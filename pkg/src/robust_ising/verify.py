"""Monte Carlo checks of variance bounds, anti-concentration and tails of Ising polynomials.

All checks use f(x) = (x - v)^T A (x - v) + b^T x with A symmetric and zero
on the diagonal.  One Glauber sample set is drawn per call and shared by
every trial, which keeps the test matrices the only source of variation
between trials.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from .glauber import ChainConfig, chain_key, sample_batch
from .ising import DEFAULT_ENUM_CAP, IsingParameters, ParameterError, enumerate_states, exact_summary

N_BATCHES = 20


@dataclass(frozen=True)
class VarianceReport:
    testMatrixNorm: float
    linearNorm: float
    empiricalVariance: float
    ratio: float
    nSamples: int
    ci95HalfWidth: float


@dataclass(eq=False)
class TailReport:
    thresholds: np.ndarray
    logSurvival: np.ndarray
    fittedRate: float
    scale: float
    nSamples: int
    truncated: bool = False
    fitRange: tuple = field(default=(0, 0))

    @property
    def survival(self) -> np.ndarray:
        return np.exp(self.logSurvival)


def random_test_matrix(d: int, rng: np.random.Generator) -> np.ndarray:
    """Gaussian upper triangle, symmetrized, zero diagonal, unit Frobenius norm."""
    A = np.triu(rng.standard_normal((d, d)), 1)
    A = A + A.T
    nrm = np.linalg.norm(A)
    return A / nrm if nrm > 0 else A


def random_pair(d: int, rng: np.random.Generator, with_linear: bool):
    """(A, b) drawn isotropically over (upper triangle, b) with ||A||_F^2 + ||b||^2 = 1."""
    if not with_linear:
        return random_test_matrix(d, rng), np.zeros(d)
    k = d * (d - 1) // 2
    g = rng.standard_normal(k + d)
    # ||A||_F^2 counts each off-diagonal entry twice
    g[:k] /= math.sqrt(2.0)
    g /= math.sqrt(2.0 * np.sum(g[:k] ** 2) + np.sum(g[k:] ** 2))
    A = np.zeros((d, d))
    A[np.triu_indices(d, 1)] = g[:k]
    return A + A.T, g[k:].copy()


def poly_values(X, A, b, v) -> np.ndarray:
    Y = np.asarray(X, dtype=float) - v
    return np.einsum("ni,ij,nj->n", Y, A, Y) + np.asarray(X, dtype=float) @ b


def exact_variance(params: IsingParameters, A, b, v, cap: int = DEFAULT_ENUM_CAP) -> float:
    s = exact_summary(params, cap=cap)
    f = poly_values(enumerate_states(params.d), A, b, v)
    m = s.probabilities @ f
    return float(s.probabilities @ (f - m) ** 2)


def _variance_with_ci(f: np.ndarray):
    n = f.size
    var = float(f.var())
    nb = min(N_BATCHES, n // 2)
    if nb < 2:
        return var, math.inf
    bv = np.array([b.var() for b in np.array_split(f, nb)])
    half = stats.t.ppf(0.975, nb - 1) * bv.std(ddof=1) / math.sqrt(nb)
    return var, float(half)


def _draw(params: IsingParameters, n: int, seed: int, gamma: float, samples):
    if samples is not None:
        return np.asarray(samples, dtype=float)
    if n < 1:
        raise ParameterError("n must be at least 1")
    return sample_batch(params, n, ChainConfig(gamma=gamma, masterSeed=seed)).astype(float)


def _center(params: IsingParameters, X: np.ndarray, cap: int) -> np.ndarray:
    if params.d <= cap:
        return exact_summary(params, cap=cap).mean
    return X.mean(axis=0)


def _reports(params, trials, n, seed, gamma, samples, cap, draw_pair):
    if trials < 1:
        raise ParameterError("trials must be at least 1")
    X = _draw(params, n, seed, gamma, samples)
    v = _center(params, X, cap)
    rng = np.random.default_rng(chain_key(seed, 1 << 20))
    out = []
    for _ in range(trials):
        A, b = draw_pair(rng)
        norm2 = float(np.sum(A**2) + np.sum(b**2))
        var, half = _variance_with_ci(poly_values(X, A, b, v))
        out.append(VarianceReport(float(np.linalg.norm(A)), float(np.linalg.norm(b)), var, var / norm2, X.shape[0], half / norm2))
    return out


def mc_variance_lower_bound(
    params: IsingParameters,
    trials: int,
    n: int,
    with_linear: bool = False,
    seed: int = 0,
    gamma: float = 0.01,
    samples=None,
    cap: int = DEFAULT_ENUM_CAP,
) -> list:
    """Per-trial Var[f(X)] / (||A||_F^2 + ||b||^2) for random unit (A, b), v = E[X]."""
    d = params.d
    return _reports(params, trials, n, seed, gamma, samples, cap, lambda r: random_pair(d, r, with_linear))


def mc_variance_upper_bound(params: IsingParameters, trials: int, n: int, seed: int = 0, gamma: float = 0.01, samples=None, cap: int = DEFAULT_ENUM_CAP) -> list:
    return mc_variance_lower_bound(params, trials, n, True, seed, gamma, samples, cap)


def mc_linear_anticoncentration(params: IsingParameters, trials: int, n: int, seed: int = 0, gamma: float = 0.01, samples=None, cap: int = DEFAULT_ENUM_CAP) -> list:
    """Per-trial Var[b^T X] for random unit b."""
    d = params.d

    def draw(rng):
        b = rng.standard_normal(d)
        return np.zeros((d, d)), b / np.linalg.norm(b)

    return _reports(params, trials, n, seed, gamma, samples, cap, draw)


def fit_tail_rate(thresholds, survival, scale: float, n: int, min_count: float = 50.0):
    """Least-squares slope of log-survival against t/scale where survival >= min_count/n."""
    t = np.asarray(thresholds, dtype=float) / scale
    ok = np.flatnonzero(survival >= min_count / n)
    if ok.size < 2:
        return math.nan, True, (0, int(ok.size))
    lo, hi = int(ok[0]), int(ok[-1]) + 1
    slope, _ = np.polyfit(t[lo:hi], np.log(survival[lo:hi]), 1)
    return float(-slope), False, (lo, hi)


def mc_tail_check(
    params: IsingParameters,
    A,
    b,
    v,
    n: int,
    thresholds,
    seed: int = 0,
    gamma: float = 0.01,
    samples=None,
    min_count: float = 50.0,
) -> TailReport:
    """Empirical Pr[|f - E f| > t] on a grid of t plus a fitted exponential rate.

    The rate is the negated slope of log-survival against t/||(A, b)||; the
    report is flagged truncated when fewer than two thresholds carry enough
    tail mass to fit.
    """
    t = np.asarray(thresholds, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(np.diff(t) <= 0):
        raise ParameterError("thresholds must be strictly increasing")
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    X = _draw(params, n, seed, gamma, samples)
    f = poly_values(X, A, b, np.asarray(v, dtype=float))
    dev = np.sort(np.abs(f - f.mean()))
    m = dev.size
    surv = (m - np.searchsorted(dev, t, side="right")) / m
    scale = math.sqrt(float(np.sum(A**2) + np.sum(b**2)))
    if scale == 0:
        raise ParameterError("(A, b) must be non-zero")
    with np.errstate(divide="ignore"):
        logs = np.log(surv)
    rate, truncated, rng = fit_tail_rate(t, surv, scale, m, min_count)
    return TailReport(t, logs, rate, scale, m, truncated, rng)


def tail_bound_holds(report: TailReport, rate: float, thresholds=None) -> bool:
    """Survival <= 2 exp(-rate t / ||(A, b)||) at every threshold (or the given subset)."""
    t = report.thresholds if thresholds is None else np.asarray(thresholds)
    idx = np.searchsorted(report.thresholds, t)
    bound = 2.0 * np.exp(-rate * t / report.scale)
    return bool(np.all(report.survival[idx] <= bound))


def summarize(reports: list) -> dict:
    r = np.array([x.ratio for x in reports])
    return {"trials": int(r.size), "min_ratio": float(r.min()), "max_ratio": float(r.max()), "median_ratio": float(np.median(r))}


REPORT_COLUMNS = ("trial", "test_matrix_norm", "linear_norm", "empirical_variance", "ratio", "n_samples", "ci95_half_width")


def write_reports(reports: list, csv_path, json_path=None) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for i, r in enumerate(reports):
            w.writerow([i] + [f"{x:.17g}" if isinstance(x, float) else x for x in asdict(r).values()])
    if json_path is not None:
        with open(json_path, "w") as fh:
            json.dump(summarize(reports), fh, indent=1)
