"""Replacement adversaries: an eps fraction of rows is swapped for adversarial rows."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .ising import ParameterError, _check_spins

ATTACKS = ("replace-with-point", "mean-shift-direction", "pair-correlation-boost", "heavy-tail-injection")


@dataclass(frozen=True)
class AttackSpec:
    """Adversary description.

    payload keys by kind:
      replace-with-point: ``point`` (spin vector, default all ones)
      mean-shift-direction: ``weights`` (vector over pair statistics, default ones)
      pair-correlation-boost: ``pairs`` (list of (i, j), default [(0, 1)])
      heavy-tail-injection: ``scale`` (norm of injected vectors, default 1e3),
        ``antithetic`` (pair each direction with its negation, default false)
    """

    kind: str
    eps: float
    payload: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACKS:
            raise ParameterError(f"unknown attack {self.kind!r}; choose from {', '.join(ATTACKS)}")
        if not (0 <= self.eps < 0.5):
            raise ParameterError(f"eps must lie in [0, 1/2), got {self.eps}")


def _victims(n: int, attack: AttackSpec) -> np.ndarray:
    m = math.floor(attack.eps * n)
    rng = np.random.default_rng(attack.seed)
    return np.sort(rng.choice(n, size=m, replace=False))


def best_spin_for(weights, d: int, enum_max: int = 16) -> np.ndarray:
    """Spin vector maximizing sum_{i<j} w_ij x_i x_j (exact for small d, coordinate ascent otherwise)."""
    w = np.asarray(weights, dtype=float)
    W = np.zeros((d, d))
    W[np.triu_indices(d, 1)] = w
    W = W + W.T
    if d <= enum_max:
        X = np.array(list(itertools.product((-1.0, 1.0), repeat=d)))
        vals = np.einsum("ni,ij,nj->n", X, W, X)
        return X[int(np.argmax(vals))]
    x = np.ones(d)
    for _ in range(100 * d):
        changed = False
        for i in range(d):
            s = 1.0 if W[i] @ x >= 0 else -1.0
            if s != x[i]:
                x[i] = s
                changed = True
        if not changed:
            break
    return x


def corrupt(samples, attack: AttackSpec) -> np.ndarray:
    """Corrupt spin rows; exactly floor(eps*n) rows are replaced, the rest are untouched."""
    X = _check_spins(np.asarray(samples))
    if X.ndim != 2:
        raise ParameterError("samples must be a 2-D array of spins")
    if attack.kind == "heavy-tail-injection":
        raise ParameterError("heavy-tail-injection only applies to sufficient-statistic vectors")
    n, d = X.shape
    out = np.array(samples, copy=True)
    idx = _victims(n, attack)
    if idx.size == 0:
        return out
    p = attack.payload
    if attack.kind == "replace-with-point":
        pt = np.asarray(p.get("point", np.ones(d)))
        if pt.shape != (d,) or not np.all((pt == 1) | (pt == -1)):
            raise ParameterError("point must be a length-d spin vector")
        out[idx] = pt
    elif attack.kind == "mean-shift-direction":
        w = np.asarray(p.get("weights", np.ones(d * (d - 1) // 2)), dtype=float)
        if w.shape != (d * (d - 1) // 2,):
            raise ParameterError("weights must have one entry per pair")
        out[idx] = best_spin_for(w, d)
    else:
        pairs = p.get("pairs", [(0, 1)])
        for i, j in pairs:
            if not (0 <= i < d and 0 <= j < d and i != j):
                raise ParameterError(f"invalid pair ({i}, {j})")
            out[idx, j] = out[idx, i]
    return out


def corrupt_vectors(T, attack: AttackSpec) -> np.ndarray:
    """Corrupt sufficient-statistic rows; only heavy-tail-injection is defined here."""
    T = np.asarray(T, dtype=float)
    if attack.kind != "heavy-tail-injection":
        raise ParameterError(f"{attack.kind} acts on spin samples; use corrupt()")
    out = T.copy()
    idx = _victims(T.shape[0], attack)
    if idx.size == 0:
        return out
    rng = np.random.default_rng([attack.seed, 1])
    g = rng.standard_normal((idx.size, T.shape[1]))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    if attack.payload.get("antithetic", False):
        # pair each direction with its negation so the injected mass is centered
        g[1::2] = -g[0::2][: g[1::2].shape[0]]
    scale = float(attack.payload.get("scale", 1e3))
    out[idx] = T.mean(axis=0) + scale * g
    return out

