"""Seeded random streams and the samplers used by the optimizer.

Streams are numpy ``Generator`` objects on the PCG64 bit generator. Only
``random``, ``standard_normal`` and ``standard_cauchy`` are drawn from it; all
other distributions are built from those with plain IEEE arithmetic so that a
given seed replays identically across platforms.

Seed derivation: ``derive_seed(master, *keys)`` hashes the integer tuple through
``numpy.random.SeedSequence`` and returns the first 64-bit word of its state.
The harness derives one seed per run index, so run ``r`` of every configuration
shares a seed (paired comparisons).
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

GENERATOR = "PCG64"
MAX_REJECTIONS = 100

RngStream = np.random.Generator


def make_rng(seed: int) -> RngStream:
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(master: int, *keys: int) -> int:
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, *(int(k) for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _truncated(draw, mu, lo, hi, rng, size, mode):
    """Shared rejection loop. ``draw(k)`` returns ``k`` fresh candidates around zero."""
    if lo >= hi:
        raise ValueError("need lo < hi")
    scalar = size is None and np.ndim(mu) == 0
    shape = np.shape(mu) if size is None else (size if isinstance(size, tuple) else (size,))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), shape)
    out = mu + draw(shape)
    if mode == "rejection":
        bad = (out < lo) | (out > hi)
    elif mode == "jade":
        out = np.where(out > hi, hi, out)
        bad = out <= lo
    else:
        raise ValueError(f"unknown truncation mode {mode!r}")
    tries = 1
    while bad.any() and tries < MAX_REJECTIONS:
        idx = np.flatnonzero(bad)
        flat = out.reshape(-1)
        cand = mu.reshape(-1)[idx] + draw((idx.size,))
        if mode == "jade":
            cand = np.where(cand > hi, hi, cand)
            ok = cand > lo
        else:
            ok = (cand >= lo) & (cand <= hi)
        flat[idx[ok]] = cand[ok]
        bad.reshape(-1)[idx[ok]] = False
        tries += 1
    if bad.any():
        out[bad] = np.clip(mu[bad], lo, hi)
    return float(out) if scalar else out


def trunc_normal(mu, sigma: float, lo: float, hi: float, rng: RngStream, size=None,
                 mode: str = "rejection"):
    """Normal(mu, sigma^2) restricted to [lo, hi].

    Rejection sampling; after ``MAX_REJECTIONS`` failed attempts the draw falls
    back to ``clip(mu, lo, hi)``. ``mode="jade"`` regenerates only draws at or
    below ``lo`` and clamps draws above ``hi``.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        out = np.clip(np.asarray(mu, dtype=float), lo, hi)
        if size is not None:
            out = np.broadcast_to(out, size if isinstance(size, tuple) else (size,)).copy()
        return float(out) if out.ndim == 0 else out
    return _truncated(lambda s: sigma * rng.standard_normal(s), mu, lo, hi, rng, size, mode)


def trunc_cauchy(mu, gamma: float, lo: float, hi: float, rng: RngStream, size=None,
                 mode: str = "rejection"):
    """Cauchy(mu, gamma) restricted to [lo, hi]; same fallback rules as ``trunc_normal``."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return _truncated(lambda s: gamma * rng.standard_cauchy(s), mu, lo, hi, rng, size, mode)


@lru_cache(maxsize=256)
def _rank_weights(n: int, lam: float) -> np.ndarray:
    # math.exp keeps the weights independent of numpy's SIMD dispatch
    w = np.array([math.exp(-lam * k / n) for k in range(n)])
    w.flags.writeable = False
    return w


def rank_biased_index(n: int, lam: float, rng: RngStream) -> int:
    """Index in ``[0, n)`` (0 = best rank) with P(k) proportional to exp(-lam*k/n)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    return int(rank_biased_pick(n, lam, np.array([rng.random()]))[0])


def rank_biased_pick(n: int, lam: float, u: np.ndarray, exclude=None) -> np.ndarray:
    """Vectorized inverse-CDF rank-biased pick, one per uniform in ``u``.

    ``exclude`` optionally gives, per draw, one rank that must not be chosen.
    Consumes no randomness beyond ``u``.
    """
    u = np.asarray(u, dtype=float)
    w = np.broadcast_to(_rank_weights(n, float(lam)), (u.size, n))
    if exclude is not None:
        w = w.copy()
        w[np.arange(u.size), np.asarray(exclude)] = 0.0
    cdf = np.cumsum(w, axis=1)
    target = u * cdf[:, -1]
    k = (cdf <= target[:, None]).sum(axis=1)
    k = np.minimum(k, n - 1)
    if exclude is not None:
        # guard the measure-zero case of landing exactly on an excluded rank
        hit = k == np.asarray(exclude)
        k = np.where(hit, np.where(k == 0, 1, k - 1), k)
    return k


def pick_excluding(u: np.ndarray, n: int, excluded: np.ndarray) -> np.ndarray:
    """Uniform index in ``[0, n)`` avoiding each row of ``excluded``.

    ``excluded`` has shape ``(len(u), k)`` with distinct entries per row. One
    uniform per draw; no rejection, so the consumed randomness is fixed.
    """
    excluded = np.sort(np.asarray(excluded, dtype=np.int64), axis=1)
    k = excluded.shape[1]
    if n - k < 1:
        raise ValueError("population exhausted")
    j = np.minimum((np.asarray(u) * (n - k)).astype(np.int64), n - k - 1)
    for c in range(k):
        j = j + (j >= excluded[:, c])
    return j
