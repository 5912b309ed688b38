"""Fixed-capacity external archive of displaced front entries."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .problem import EvaluatedPoint
from .randdist import pick_excluding


class ArchiveError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ArchiveEntry:
    point: EvaluatedPoint
    generation: int
    eps: float  # epsilon level in force when the entry was pushed
    gated: bool


class Archive:
    """Ring buffer of ``ArchiveEntry``.

    ``eviction="ring"`` overwrites the oldest slot once full; ``"random"``
    overwrites a uniformly chosen slot (JADE convention) and needs an rng.
    Decision vectors are mirrored in a contiguous array for fast donor lookup.
    """

    def __init__(self, capacity: int, dim: int, eviction: str = "ring"):
        if capacity < 1:
            raise ValueError("archive capacity must be >= 1")
        if eviction not in ("ring", "random"):
            raise ValueError(f"unknown eviction policy {eviction!r}")
        self.capacity = capacity
        self.eviction = eviction
        self.slots: list[Optional[ArchiveEntry]] = [None] * capacity
        self.X = np.empty((capacity, dim))
        self.write_index = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def entries(self) -> list[ArchiveEntry]:
        return [e for e in self.slots[: self.size]]

    def _store(self, slot: int, entry: ArchiveEntry):
        self.slots[slot] = entry
        self.X[slot] = entry.point.x


def push_gated(archive: Archive, displaced: EvaluatedPoint, eps: float, gate_on: bool = True,
               generation: int = 0, rng=None) -> bool:
    """Push ``displaced`` unless the gate is on and its violation exceeds ``eps``.

    Returns whether the entry was stored.
    """
    if gate_on and displaced.phi > eps:
        return False
    entry = ArchiveEntry(point=displaced, generation=generation, eps=eps, gated=gate_on)
    if archive.size < archive.capacity:
        archive._store(archive.size, entry)
        archive.size += 1
        archive.write_index = archive.size % archive.capacity
    elif archive.eviction == "ring":
        archive._store(archive.write_index, entry)
        archive.write_index = (archive.write_index + 1) % archive.capacity
    else:
        if rng is None:
            raise ArchiveError("random eviction needs an rng")
        archive._store(int(rng.random() * archive.capacity), entry)
    return True


def arch_probability(arch_size: int, pop_size: int, stagnated: bool = False,
                     floor: float = 0.65) -> float:
    if pop_size < 1:
        raise ValueError("pop_size must be >= 1")
    if arch_size == 0:
        return 0.0
    base = arch_size / (arch_size + pop_size)
    return max(base, floor) if stagnated else base


def sample_r2(archive: Archive, population, p: float, forbidden, rng):
    """Draw the second difference donor.

    With probability ``p`` a uniform archive entry, otherwise a uniform member of
    ``population`` (a sequence) whose index is not in ``forbidden``. Returns
    ``(source, index)`` with source ``"archive"`` or ``"population"``.
    """
    forbidden = sorted(set(int(i) for i in forbidden))
    u_arch, u_k, u_pop = rng.random(3)
    if archive.size > 0 and u_arch < p:
        return "archive", min(int(u_k * archive.size), archive.size - 1)
    n = len(population)
    if n - len(forbidden) < 1:
        raise ArchiveError("population exhausted")
    j = pick_excluding(np.array([u_pop]), n, np.array([forbidden], dtype=np.int64).reshape(1, -1))
    return "population", int(j[0])
