"""Glauber dynamics for Ising models.

Every chain owns an independent SplitMix64 stream keyed by
``chain_key(master_seed, i)``, so a batch is bit-identical regardless of how
chains are grouped, ordered or spread across threads.
"""

from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

# TBB on this platform is too old for numba; the workqueue layer is always present.
numba.config.THREADING_LAYER = "workqueue"

from .ising import CapacityError, DomainError, IsingParameters, ParameterError, check_dobrushin

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_INV53 = 1.0 / 9007199254740992.0


@dataclass(frozen=True)
class ChainConfig:
    gamma: float = 0.01
    mixingConstant: float = 20.0
    masterSeed: int = 0
    maxEntries: int = 200_000_000

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ParameterError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.mixingConstant <= 0:
            raise ParameterError("mixingConstant must be positive")


def _mix64_py(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def chain_key(master_seed: int, index: int) -> int:
    """Seed-derivation function: key of chain ``index`` under ``master_seed``."""
    base = _mix64_py(int(master_seed) & _MASK64)
    return _mix64_py(base + (int(index) + 1) * 0x9E3779B97F4A7C15)


def chain_keys(master_seed: int, start: int, n: int) -> np.ndarray:
    return np.array([chain_key(master_seed, start + i) for i in range(n)], dtype=np.uint64)


def num_steps(d: int, gamma: float, mixing_constant: float) -> int:
    return max(1, math.ceil(mixing_constant * d * (math.log(d) + math.log(1.0 / gamma))))


@numba.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@numba.njit(cache=True, parallel=True)
def _run_chains(J, h, keys, steps, out):
    n, d = out.shape
    for c in numba.prange(n):
        state = keys[c]
        x = np.empty(d, dtype=np.float64)
        for i in range(d):
            state += GOLDEN
            x[i] = 1.0 if (_mix64(state) >> np.uint64(63)) == np.uint64(1) else -1.0
        for _ in range(steps):
            state += GOLDEN
            site = int(float(_mix64(state) >> np.uint64(11)) * _INV53 * d)
            state += GOLDEN
            u = float(_mix64(state) >> np.uint64(11)) * _INV53
            local = h[site]
            for j in range(d):
                local += J[site, j] * x[j]
            # P(+1) = e^l / (e^l + e^-l)
            x[site] = 1.0 if u < 1.0 / (1.0 + math.exp(-2.0 * local)) else -1.0
        for i in range(d):
            out[c, i] = np.int8(x[i])


def _set_threads() -> None:
    cap = os.environ.get("ROBUST_ISING_THREADS")
    if cap:
        numba.set_num_threads(max(1, min(int(cap), numba.config.NUMBA_NUM_THREADS)))


def plus_probability(params: IsingParameters, state, site: int) -> float:
    """Heat-bath probability that ``site`` is set to +1 given the other spins."""
    x = np.asarray(state, dtype=float)
    local = params.field[site] + params.interaction[site] @ x
    return 1.0 / (1.0 + math.exp(-2.0 * local))


def glauber_step(params: IsingParameters, state, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(state)
    if not np.all((x == 1) | (x == -1)):
        raise DomainError("state must be a spin vector")
    x = x.astype(np.int8, copy=True)
    i = int(rng.integers(params.d))
    x[i] = 1 if rng.random() < plus_probability(params, x, i) else -1
    return x


def _warn_dobrushin(params: IsingParameters) -> None:
    if params.row_l1().max(initial=0.0) >= 1.0:
        warnings.warn(
            "model violates Dobrushin's condition; the mixing-time guarantee does not apply",
            RuntimeWarning,
            stacklevel=3,
        )


def run_chains(params: IsingParameters, keys: np.ndarray, steps: int) -> np.ndarray:
    _set_threads()
    out = np.empty((keys.size, params.d), dtype=np.int8)
    J = np.ascontiguousarray(params.interaction, dtype=np.float64)
    h = np.ascontiguousarray(params.field, dtype=np.float64)
    _run_chains(J, h, np.ascontiguousarray(keys, dtype=np.uint64), int(steps), out)
    return out


def sample(params: IsingParameters, cfg: ChainConfig, key: int | None = None) -> np.ndarray:
    """One chain run for num_steps(d, gamma, C) steps from a uniform start."""
    _warn_dobrushin(params)
    if key is None:
        key = chain_key(cfg.masterSeed, 0)
    steps = num_steps(params.d, cfg.gamma, cfg.mixingConstant)
    return run_chains(params, np.array([key], dtype=np.uint64), steps)[0]


def sample_batch(params: IsingParameters, n: int, cfg: ChainConfig, start: int = 0) -> np.ndarray:
    """n independent chains; chain i is keyed by chain_key(masterSeed, start + i)."""
    if n < 1:
        raise ParameterError("n must be at least 1")
    if n * params.d > cfg.maxEntries:
        raise CapacityError(f"n*d = {n * params.d} exceeds the budget {cfg.maxEntries}")
    _warn_dobrushin(params)
    steps = num_steps(params.d, cfg.gamma, cfg.mixingConstant)
    return run_chains(params, chain_keys(cfg.masterSeed, start, n), steps)


def write_samples(path, samples: np.ndarray, seed: int | None = None) -> None:
    samples = np.asarray(samples)
    lines = []
    if seed is not None:
        lines.append(f"# d={samples.shape[1]} seed={seed}")
    lines.extend(",".join("1" if v > 0 else "-1" for v in row) for row in samples)
    Path(path).write_text("\n".join(lines) + "\n")


def read_samples(path) -> np.ndarray:
    rows = []
    d = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            continue
        fields = line.split(",")
        if any(f not in ("1", "-1") for f in fields):
            raise DomainError(f"{path}:{lineno}: entries must be exactly '1' or '-1'")
        if d is None:
            d = len(fields)
        elif len(fields) != d:
            raise DomainError(f"{path}:{lineno}: expected {d} entries, got {len(fields)}")
        rows.append([int(f) for f in fields])
    if not rows:
        raise DomainError(f"{path}: no samples")
    return np.array(rows, dtype=np.int8)
