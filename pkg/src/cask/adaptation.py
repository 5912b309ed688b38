"""Self-adaptation state: success-history memories, success rate, F centre,
epsilon-level schedule and the hybrid (EB branch) rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SuccessMemory:
    M_F: np.ndarray
    M_CR: np.ndarray
    write_index: int = 0

    @classmethod
    def new(cls, H: int, init: float = 0.5) -> "SuccessMemory":
        if H < 1:
            raise ValueError("memory length must be >= 1")
        return cls(M_F=np.full(H, init), M_CR=np.full(H, init))

    @property
    def H(self) -> int:
        return self.M_F.size


@dataclass
class GenStats:
    trials: int = 0
    accepts: int = 0
    delta_eb: float = 0.0
    delta_std: float = 0.0

    @property
    def SR(self) -> float:
        return self.accepts / self.trials if self.trials else float("nan")


@dataclass
class HybridRate:
    rho: float
    rho0: float

    @classmethod
    def new(cls, rho0: float) -> "HybridRate":
        return cls(rho=rho0, rho0=rho0)


@dataclass(frozen=True)
class EpsSchedule:
    eps0: float
    cutoff_frac: float = 0.85
    cp: float = 6.0

    def __post_init__(self):
        if self.eps0 < 0:
            raise ValueError("eps0 must be non-negative")
        if not 0 < self.cutoff_frac <= 1:
            raise ValueError("cutoff_frac must lie in (0, 1]")
        if self.cp <= 0:
            raise ValueError("cp must be positive")


def mu_f_centre(SR: float, mode: str = "cask") -> float:
    """Centre of the F distribution: SR**0.4 (cask) or SR**(1/3) (baseline)."""
    if mode == "cask":
        return max(0.0, SR ** 0.4)
    if mode == "baseline":
        return max(0.0, SR ** (1.0 / 3.0))
    raise ValueError(f"unknown centre mode {mode!r}")


def update_memory(mem: SuccessMemory, successes) -> SuccessMemory:
    """SHADE memory update from ``(F, F2, CR, w)`` rows of accepted trials.

    Writes the weighted Lehmer mean of F and the weighted arithmetic mean of CR
    into the current cell and advances the write index. An empty list leaves the
    memory untouched. Mutates and returns ``mem``.
    """
    s = np.asarray(successes, dtype=float).reshape(-1, 4)
    if s.shape[0] == 0:
        return mem
    F, CR, w = s[:, 0], s[:, 2], s[:, 3]
    if np.any(w < 0) or w.sum() <= 0:
        raise ValueError("success weights must be non-negative and not all zero")
    w = w / w.sum()
    num = (w * F * F).sum()
    den = (w * F).sum()
    k = mem.write_index
    # Lehmer mean is undefined when every successful F is 0; keep the old cell
    if den > 0:
        mem.M_F[k] = min(1.0, max(0.0, num / den))
    mem.M_CR[k] = min(1.0, max(0.0, (w * CR).sum()))
    mem.write_index = (k + 1) % mem.H
    return mem


def update_rho_eb(rate: HybridRate, raw: float, delta_eb: float, delta_std: float,
                  mode: str = "smoothed") -> HybridRate:
    """Hybrid-rate update.

    ``smoothed``: 0.7*rho + 0.3*raw when both branches improved, else
    0.9*rho + 0.1*rho0. ``raw``: raw ratio when both improved, else reset to rho0.
    """
    both = delta_eb > 0 and delta_std > 0
    if mode == "smoothed":
        rho = 0.7 * rate.rho + 0.3 * raw if both else 0.9 * rate.rho + 0.1 * rate.rho0
    elif mode == "raw":
        rho = raw if both else rate.rho0
    else:
        raise ValueError(f"unknown rho update mode {mode!r}")
    return HybridRate(rho=min(1.0, max(0.0, rho)), rho0=rate.rho0)


def raw_share(delta_eb: float, delta_std: float) -> float:
    total = delta_eb + delta_std
    return delta_eb / total if total > 0 else 0.0


def epsilon_level(sched: EpsSchedule, progress: float) -> float:
    if progress >= sched.cutoff_frac:
        return 0.0
    return sched.eps0 * (1.0 - progress / sched.cutoff_frac) ** sched.cp


def success_rate(stats: GenStats, prev: float = 0.0) -> float:
    """accepts / trials, carrying ``prev`` forward for an empty generation."""
    if stats.trials == 0:
        return prev
    return stats.accepts / stats.trials
