"""Rademacher ensembles, Khintchine and Paley-Zygmund checks.

Random signs come from a counter-based generator: every value is a pure
function of ``(seed, stream, index)``, so trials and walks can be evaluated
in any order and still reproduce bit for bit.

Generator (stable, do not change without bumping ``RNG_VERSION``)::

    key(seed, stream) = mix(mix(seed ^ C1) ^ (stream * G + C2))
    word(seed, stream, i) = mix(key + (i + 1) * G)

where ``mix`` is the SplitMix64 finalizer, ``G = 0x9E3779B97F4A7C15``.  A
sign is ``+1`` when the top bit of the word is 0.  Uniforms use the top 53
bits.
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb, sqrt

import numba as nb
import numpy as np

RNG_VERSION = 1

_G = np.uint64(0x9E3779B97F4A7C15)
_C1 = np.uint64(0xD1B54A32D192ED03)
_C2 = np.uint64(0x632BE59BD9B4E019)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@nb.njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True, inline="always")
def stream_key(seed, stream):
    s = mix64(np.uint64(seed) ^ _C1)
    return mix64(s ^ (np.uint64(stream) * _G + _C2))


@nb.njit(cache=True, inline="always")
def word_at(key, i):
    return mix64(key + (np.uint64(i) + np.uint64(1)) * _G)


@nb.njit(cache=True, inline="always")
def uniform_at(key, i):
    return (word_at(key, i) >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def _signs(m, seed, trial):
    key = stream_key(seed, trial)
    out = np.empty(m, np.int8)
    for i in range(m):
        out[i] = 1 - 2 * np.int8(word_at(key, i) >> np.uint64(63))
    return out


@nb.njit(cache=True)
def _sign_block(m, seed, first, count):
    out = np.empty((count, m), np.int8)
    for t in range(count):
        key = stream_key(seed, first + t)
        for i in range(m):
            out[t, i] = 1 - 2 * np.int8(word_at(key, i) >> np.uint64(63))
    return out


def rademacher_stream(m: int, seed: int, trial: int) -> np.ndarray:
    """Signs in {-1, +1} (int8) for one trial."""
    if m < 0:
        raise ValueError("m must be nonnegative")
    return _signs(int(m), np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), np.uint64(int(trial)))


def rademacher_block(m: int, seed: int, trials: int, first: int = 0) -> np.ndarray:
    """Rows ``first .. first+trials-1`` of the stream, shape (trials, m)."""
    return _sign_block(int(m), np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF), int(first), int(trials))


def all_sign_patterns(m: int) -> np.ndarray:
    """Every pattern in {-1,+1}^m, shape (2^m, m), int8."""
    if m > 24:
        raise ValueError("enumeration limited to m <= 24")
    bits = (np.arange(2**m, dtype=np.int64)[:, None] >> np.arange(m)) & 1
    return (1 - 2 * bits).astype(np.int8)


@dataclass(frozen=True)
class RademacherEnsemble:
    """Either exact enumeration (m <= 20) or seeded Monte Carlo."""

    mode: str = "exact"
    trials: int = 4096
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("exact", "mc"):
            raise ValueError(f"unknown ensemble mode {self.mode!r}")


@dataclass(frozen=True)
class EnsembleEstimate:
    mean: float
    ratio: float
    stderr: float
    exact: bool


def _sums(a: np.ndarray, ens: RademacherEnsemble, chunk: int = 1 << 16):
    m = a.size
    if ens.mode == "exact":
        if m > 20:
            raise ValueError("exact enumeration requires m <= 20")
        n = 2**m
        out = np.empty(n)
        bits = np.arange(m)
        for lo in range(0, n, chunk):
            idx = np.arange(lo, min(n, lo + chunk), dtype=np.int64)
            s = 1.0 - 2.0 * ((idx[:, None] >> bits) & 1)
            out[lo:lo + idx.size] = s @ a
        return out
    signs = rademacher_block(m, ens.seed, ens.trials)
    return signs.astype(np.float64) @ a


def khintchine_ratio(a, ensemble: RademacherEnsemble | None = None) -> EnsembleEstimate:
    """E|sum a_i eps_i| and its ratio to the l2 norm of a."""
    a = np.asarray(a, dtype=np.float64).ravel()
    if a.size == 0:
        raise ValueError("a must be nonempty")
    ens = ensemble or RademacherEnsemble()
    s = np.abs(_sums(a, ens))
    # fsum keeps enumeration exact for integer a
    mean = _fsum(s) / s.size
    se = 0.0 if ens.mode == "exact" else float(s.std(ddof=1) / sqrt(s.size))
    l2 = float(np.sqrt(np.sum(a * a)))
    return EnsembleEstimate(mean, mean / l2 if l2 > 0 else float("nan"), se, ens.mode == "exact")


def paley_zygmund_freq(a, ensemble: RademacherEnsemble | None = None) -> float:
    """P(|S| >= E|S| / 2) with S = sum a_i eps_i."""
    a = np.asarray(a, dtype=np.float64).ravel()
    ens = ensemble or RademacherEnsemble()
    s = np.abs(_sums(a, ens))
    mean = _fsum(s) / s.size
    return float(np.count_nonzero(s >= 0.5 * mean)) / s.size


def binomial_abs_mean(m: int):
    """Exact E|eps_1 + ... + eps_m| as a (numerator, 2^m) pair."""
    num = sum(comb(m, j) * abs(m - 2 * j) for j in range(m + 1))
    return num, 2**m


def _fsum(x: np.ndarray) -> float:
    from math import fsum

    return fsum(x.tolist())
