"""Ising model parameters, exact enumeration and parameter-set projection.

Models live on {-1, +1}^d with unnormalized log-density

    (1/2) * sum_{i,j} theta_ij x_i x_j + sum_i theta_i x_i

where theta_ij is symmetric with a zero diagonal.  Flattened vectors always
use the upper-triangle order (0,1), (0,2), ..., (0,d-1), (1,2), ..., (d-2,d-1).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp

DEFAULT_ENUM_CAP = 12
HARD_ENUM_CAP = 16


class ParameterError(ValueError):
    """Invalid or inconsistent model parameters."""


class CapacityError(RuntimeError):
    """Requested computation exceeds a configured size limit."""


class NumericError(RuntimeError):
    """An iterative numerical routine failed to converge."""


class DomainError(ValueError):
    """Input outside {-1, +1}^d."""


@dataclass(frozen=True, eq=False)
class IsingParameters:
    interaction: np.ndarray
    field: np.ndarray

    def __post_init__(self):
        J = np.array(self.interaction, dtype=float)
        h = np.array(self.field, dtype=float).reshape(-1)
        if J.ndim != 2 or J.shape[0] != J.shape[1]:
            raise ParameterError(f"interaction must be square, got shape {J.shape}")
        if h.shape[0] != J.shape[0]:
            raise ParameterError("field length does not match interaction size")
        if J.shape[0] < 1:
            raise ParameterError("dimension must be positive")
        if not (np.all(np.isfinite(J)) and np.all(np.isfinite(h))):
            raise ParameterError("parameters must be finite")
        if not np.array_equal(J, J.T):
            raise ParameterError("interaction matrix must be symmetric")
        if np.any(np.diag(J) != 0.0):
            raise ParameterError("interaction diagonal must be zero")
        J.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "interaction", J)
        object.__setattr__(self, "field", h)

    @property
    def d(self) -> int:
        return self.interaction.shape[0]

    @classmethod
    def zeros(cls, d: int) -> "IsingParameters":
        return cls(np.zeros((d, d)), np.zeros(d))

    @classmethod
    def from_upper(cls, pairs, field=None, d: Optional[int] = None) -> "IsingParameters":
        """Build from a flattened upper triangle (canonical order)."""
        pairs = np.asarray(pairs, dtype=float)
        if d is None:
            d = dimension_from_pairs(pairs.size)
        J = np.zeros((d, d))
        iu = np.triu_indices(d, k=1)
        J[iu] = pairs
        J = J + J.T
        h = np.zeros(d) if field is None else np.asarray(field, dtype=float)
        return cls(J, h)

    def upper(self) -> np.ndarray:
        return self.interaction[np.triu_indices(self.d, k=1)].copy()

    def row_l1(self) -> np.ndarray:
        return np.abs(self.interaction).sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "d": self.d,
            "interaction": self.interaction.tolist(),
            "field": self.field.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, tol: float = 1e-12) -> "IsingParameters":
        d = int(data["d"])
        J = np.asarray(data["interaction"], dtype=float)
        h = np.asarray(data.get("field", np.zeros(d)), dtype=float)
        if J.shape != (d, d) or h.shape != (d,):
            raise ParameterError(f"model shapes do not match d={d}")
        if np.max(np.abs(J - J.T), initial=0.0) > tol:
            raise ParameterError("interaction matrix is not symmetric within tolerance")
        if np.max(np.abs(np.diag(J)), initial=0.0) > tol:
            raise ParameterError("interaction diagonal is not zero within tolerance")
        J = 0.5 * (J + J.T)
        np.fill_diagonal(J, 0.0)
        return cls(J, h)


@dataclass(frozen=True)
class DobrushinSpec:
    """Row-sum bound M and field bound alpha; eta is the Dobrushin slack."""

    eta: float
    M: float
    alpha: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.eta < 1.0):
            raise ParameterError(f"eta must lie in (0, 1), got {self.eta}")
        if self.M < 0 or self.alpha < 0:
            raise ParameterError("M and alpha must be nonnegative")

    @classmethod
    def dobrushin(cls, eta: float, alpha: float = 0.0) -> "DobrushinSpec":
        return cls(eta=eta, M=1.0 - eta, alpha=alpha)

    @classmethod
    def bounded(cls, M: float, alpha: float) -> "DobrushinSpec":
        if not (0.0 <= M < 1.0):
            raise ParameterError(f"M must lie in [0, 1), got {M}")
        return cls(eta=1.0 - M if M > 0 else 1.0 - 1e-12, M=M, alpha=alpha)

    def diameter(self, d: int) -> float:
        """Euclidean diameter bound of the feasible set in flattened coordinates."""
        # ||upper||^2 = (1/2) sum_i ||row_i||_2^2 <= d M^2 / 2
        return 2.0 * self.M * math.sqrt(d / 2.0) + 2.0 * self.alpha * math.sqrt(d)


@dataclass(frozen=True, eq=False)
class ExactSummary:
    logZ: float
    mean: np.ndarray
    pairMoments: np.ndarray
    suffStatMean: np.ndarray
    suffStatCov: np.ndarray
    probabilities: np.ndarray


def dimension_from_pairs(k: int) -> int:
    d = int(round((1 + math.sqrt(1 + 8 * k)) / 2))
    if d * (d - 1) // 2 != k:
        raise ParameterError(f"{k} is not a triangular number")
    return d


def _check_spins(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if not np.all((x == 1) | (x == -1)):
        raise DomainError("spin entries must be exactly +1 or -1")
    return x.astype(float)


def check_dobrushin(params: IsingParameters, eta: float) -> bool:
    if not (0.0 < eta < 1.0):
        raise ParameterError(f"eta must lie in (0, 1), got {eta}")
    return bool(params.row_l1().max() <= 1.0 - eta)


def check_bounded(params: IsingParameters, spec: DobrushinSpec) -> bool:
    return bool(
        params.row_l1().max() <= spec.M
        and np.max(np.abs(params.field), initial=0.0) <= spec.alpha
    )


def unnormalized_log_density(params: IsingParameters, x) -> np.ndarray | float:
    """Log-density up to the partition function; accepts a vector or (n, d) rows."""
    x = _check_spins(x)
    J, h = params.interaction, params.field
    if x.ndim == 1:
        return float(0.5 * x @ J @ x + h @ x)
    return 0.5 * np.einsum("ni,ij,nj->n", x, J, x) + x @ h


def conditional_model(params: IsingParameters, keep, fixed) -> IsingParameters:
    """Law of X_keep given X_rest = fixed.

    ``fixed`` maps each index outside ``keep`` to its spin (a dict, or a
    length-d vector whose entries on ``keep`` are ignored).
    """
    d = params.d
    keep = sorted(int(i) for i in keep)
    if not keep:
        raise ParameterError("keep set must be nonempty")
    if len(set(keep)) != len(keep) or keep[0] < 0 or keep[-1] >= d:
        raise ParameterError("keep indices out of range or repeated")
    rest = [j for j in range(d) if j not in set(keep)]
    if isinstance(fixed, dict):
        overlap = set(fixed) & set(keep)
        if overlap:
            raise ParameterError(f"indices {sorted(overlap)} are both kept and fixed")
        if set(fixed) != set(rest):
            raise ParameterError("fixed spins must cover exactly the complement of keep")
        xr = np.array([fixed[j] for j in rest], dtype=float)
    else:
        fixed = np.asarray(fixed, dtype=float)
        if fixed.shape == (d,):
            xr = fixed[rest]
        elif fixed.shape == (len(rest),):
            xr = fixed
        else:
            raise ParameterError("fixed vector has the wrong length")
    if xr.size:
        _check_spins(xr)
    J = params.interaction[np.ix_(keep, keep)]
    h = params.field[keep] + (params.interaction[np.ix_(keep, rest)] @ xr if rest else 0.0)
    return IsingParameters(J.copy(), h)


@lru_cache(maxsize=None)
def enumerate_states(d: int) -> np.ndarray:
    """All 2^d spin configurations as a read-only (2^d, d) float array."""
    states = np.array(list(itertools.product((-1.0, 1.0), repeat=d)), dtype=float)
    states = states.reshape(2**d, d)
    states.setflags(write=False)
    return states


def pair_products(x: np.ndarray) -> np.ndarray:
    """Upper-triangle products x_i x_j for rows of x."""
    x = np.atleast_2d(x)
    iu, ju = np.triu_indices(x.shape[1], k=1)
    return x[:, iu] * x[:, ju]


def _enum_guard(d: int, cap: int) -> None:
    cap = min(cap, HARD_ENUM_CAP)
    if d > cap:
        raise CapacityError(f"d={d} exceeds the enumeration cap {cap}")


def log_probabilities(params: IsingParameters, cap: int = DEFAULT_ENUM_CAP) -> np.ndarray:
    _enum_guard(params.d, cap)
    states = enumerate_states(params.d)
    logits = unnormalized_log_density(params, states)
    return logits - logsumexp(logits)


def exact_summary(
    params: IsingParameters,
    stats: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> ExactSummary:
    """Moments by full enumeration.

    ``stats`` maps an (n, d) spin array to sufficient statistics; defaults to
    upper-triangle pair products.
    """
    _enum_guard(params.d, cap)
    states = enumerate_states(params.d)
    logits = unnormalized_log_density(params, states)
    logZ = float(logsumexp(logits))
    p = np.exp(logits - logZ)
    mean = p @ states
    pair = (states * p[:, None]).T @ states
    pair = 0.5 * (pair + pair.T)
    np.fill_diagonal(pair, 1.0)
    T = (stats or pair_products)(states)
    mu = p @ T
    centered = T - mu
    cov = (centered * p[:, None]).T @ centered
    cov = 0.5 * (cov + cov.T)
    return ExactSummary(logZ, mean, pair, mu, cov, p)


def exact_tv(p1: IsingParameters, p2: IsingParameters, cap: int = DEFAULT_ENUM_CAP) -> float:
    if p1.d != p2.d:
        raise ParameterError(f"dimension mismatch: {p1.d} vs {p2.d}")
    a = np.exp(log_probabilities(p1, cap))
    b = np.exp(log_probabilities(p2, cap))
    return float(min(1.0, 0.5 * np.abs(a - b).sum()))


def project_l1_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Euclidean projection onto {w : ||w||_1 <= radius} (sort-based)."""
    if radius <= 0:
        return np.zeros_like(v)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    u = np.sort(a)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, u.size + 1)
    rho = np.nonzero(u * ks > css - radius)[0][-1]
    shift = (css[rho] - radius) / (rho + 1.0)
    return np.sign(v) * np.maximum(a - shift, 0.0)


@lru_cache(maxsize=None)
def _row_slots(d: int) -> tuple:
    """For each row i, positions in the flattened upper triangle touching i."""
    iu, ju = np.triu_indices(d, k=1)
    return tuple(np.nonzero((iu == i) | (ju == i))[0] for i in range(d))


def _row_sums_flat(pairs: np.ndarray, d: int) -> np.ndarray:
    return np.array([np.abs(pairs[s]).sum() for s in _row_slots(d)])


def _force_feasible(pairs: np.ndarray, d: int, M: float) -> np.ndarray:
    rows = _row_sums_flat(pairs, d)
    worst = rows.max(initial=0.0)
    while worst > M:
        pairs = pairs * (M / worst) * (1.0 - 4 * np.finfo(float).eps)
        worst = _row_sums_flat(pairs, d).max(initial=0.0)
    return pairs


def project_pairs(pairs: np.ndarray, d: int, M: float, tol: float, max_iter: Optional[int] = None):
    """Dykstra projection of flattened interactions onto max row l1 <= M.

    Returns (projected pairs, cycles used).  The result is made exactly
    feasible by a final uniform shrink of at most the residual violation.
    """
    pairs = np.asarray(pairs, dtype=float).copy()
    if M <= 0:
        return np.zeros_like(pairs), 0
    slots = _row_slots(d)
    if _row_sums_flat(pairs, d).max(initial=0.0) <= M:
        return pairs, 0
    if max_iter is None:
        diam = 2.0 * M * math.sqrt(d / 2.0) + np.linalg.norm(pairs)
        max_iter = 10 * d * max(1, math.ceil(math.log(max(diam / tol, 2.0))))
    x = pairs
    incr = [np.zeros(s.size) for s in slots]
    for it in range(1, max_iter + 1):
        prev = x.copy()
        for i, s in enumerate(slots):
            y = x[s] + incr[i]
            p = project_l1_ball(y, M)
            incr[i] = y - p
            x[s] = p
        if np.linalg.norm(x - prev) < tol / 2:
            return _force_feasible(x, d, M), it
    resid = float(np.linalg.norm(x - prev))
    raise NumericError(f"Dykstra projection did not converge: last move {resid:.3e} after {max_iter} cycles")


def project_parameter_set(raw: IsingParameters, spec: DobrushinSpec, tol: float = 1e-8) -> IsingParameters:
    """Approximate Euclidean projection onto {row l1 <= M, |field| <= alpha}."""
    if tol <= 0:
        raise ParameterError("projection tolerance must be positive")
    pairs, _ = project_pairs(raw.upper(), raw.d, spec.M, tol)
    field = np.clip(raw.field, -spec.alpha, spec.alpha)
    return IsingParameters.from_upper(pairs, field, d=raw.d)


def random_dobrushin(
    d: int,
    row_sum: float,
    alpha: float = 0.0,
    seed=None,
    exact_rows: bool = False,
) -> IsingParameters:
    """Random symmetric Gaussian couplings rescaled so the largest row l1 is row_sum.

    With ``exact_rows`` every row is pushed towards l1 == row_sum by a few
    rounds of symmetric Sinkhorn-style rescaling (rows never exceed row_sum).
    Fields are uniform on [-alpha, alpha].
    """
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((d, d))
    J = np.triu(G, 1)
    J = J + J.T
    if d > 1 and row_sum > 0:
        if exact_rows:
            for _ in range(50):
                r = np.abs(J).sum(axis=1)
                s = np.sqrt(row_sum / r)
                J = J * np.outer(s, s)
        J = J * (row_sum / np.abs(J).sum(axis=1).max())
    else:
        J = np.zeros((d, d))
    h = rng.uniform(-alpha, alpha, size=d) if alpha > 0 else np.zeros(d)
    return IsingParameters(J, h)


def load_model(path) -> IsingParameters:
    with open(path) as fh:
        return IsingParameters.from_dict(json.load(fh))


def save_model(params: IsingParameters, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=1, default=float) + "\n")
