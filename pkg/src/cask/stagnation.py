"""Per-individual stagnation counters and the overrides they trigger on the
standard branch: global-best base vector (S1), archive probability floor (S2)
and crossover-rate saturation (S3)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class StagnationState:
    sigma: np.ndarray
    SG: int = 180

    @classmethod
    def new(cls, n: int, SG: int = 180) -> "StagnationState":
        if SG < 0:
            raise ValueError("SG must be non-negative")
        return cls(sigma=np.zeros(n, dtype=np.int64), SG=SG)

    def __len__(self) -> int:
        return self.sigma.size

    def stagnated(self) -> np.ndarray:
        return self.sigma >= self.SG

    def keep(self, mask) -> None:
        """Drop counters of removed members (front reduction)."""
        self.sigma = self.sigma[np.asarray(mask, dtype=bool)]


@dataclass(frozen=True)
class OverrideSet:
    use_global_best: bool = False
    arch_floor_active: bool = False
    cr_saturate: bool = False


NO_OVERRIDES = OverrideSet()


def tick(state: StagnationState, member, accepted) -> StagnationState:
    """Reset counters of accepted members, increment the rest.

    ``member`` and ``accepted`` may be a single index/flag or matching arrays.
    """
    member = np.atleast_1d(np.asarray(member))
    accepted = np.broadcast_to(np.asarray(accepted, dtype=bool), member.shape)
    state.sigma[member] = np.where(accepted, 0, state.sigma[member] + 1)
    return state


def compute_overrides(sigma_i: int, SG: int, prev_SR: float, sr_gate: float = 0.10,
                      s3_gated: bool = True, s1_feasible_gate: bool = False,
                      best_phi: float = 0.0) -> OverrideSet:
    """Overrides for one standard-branch target.

    S1 and S2 fire whenever ``sigma_i >= SG``; S3 additionally needs
    ``prev_SR < sr_gate`` unless ``s3_gated`` is off. ``s1_feasible_gate``
    restricts S1 to a feasible global best (ablation only).
    """
    if sigma_i < SG:
        return NO_OVERRIDES
    use_best = not (s1_feasible_gate and best_phi > 0.0)
    return OverrideSet(
        use_global_best=use_best,
        arch_floor_active=True,
        cr_saturate=(not s3_gated) or prev_SR < sr_gate,
    )


def saturate_cr(cr, cr_sat: float = 0.95):
    return np.maximum(cr, cr_sat)
