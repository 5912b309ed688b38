"""The RDEx-CASK generation loop.

One generation builds a trial for every front member from a snapshot of the
front, evaluates the batch, then applies epsilon-rule selection member by
member (archive pushes and stagnation ticks happen there). Memories, the
hybrid rate and the front size are updated at the end of the generation.

Every random quantity of a generation is drawn in a fixed order and amount
that does not depend on which branch or overrides a target ends up using, so
two runs differing only in override toggles consume identical random streams.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from . import __version__
from .adaptation import (
    EpsSchedule,
    GenStats,
    HybridRate,
    SuccessMemory,
    epsilon_level,
    mu_f_centre,
    raw_share,
    success_rate,
    update_memory,
    update_rho_eb,
)
from .archive import Archive, arch_probability, push_gated
from .problem import EvaluatedPoint, ProblemSpec, evaluate_batch
from .randdist import make_rng, pick_excluding, rank_biased_pick, trunc_cauchy, trunc_normal
from .stagnation import StagnationState, saturate_cr

_CHOICES = {
    "mode": ("cask", "baseline"),
    "f2_mode": ("cauchy", "normal", "tied"),
    "centre_mode": ("cask", "baseline"),
    "rho_update": ("smoothed", "raw"),
    "archive_eviction": ("ring", "random"),
    "truncation_mode": ("rejection", "jade"),
    "force_branch": (None, "standard", "eb"),
}

BASELINE_BUNDLE = dict(
    f2_mode="tied",
    centre_mode="baseline",
    perturbation_on=True,
    memory_H=5,
    rho0=0.7,
    rho_update="raw",
    archive_on=False,
    stagnation_on=False,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Config:
    mode: str = "cask"
    n_init: Optional[int] = None  # None -> 18 * D
    n_min: int = 4
    max_fe: Optional[int] = None  # None -> 20000 * D
    memory_H: int = 10
    sg: int = 180
    archive_cap: int = 50
    arch_floor: float = 0.65
    sr_gate: float = 0.10
    rho0: float = 0.5
    gamma_f2: float = 0.1
    sigma_f: float = 0.05
    sigma_cr: float = 0.1
    cr_sat: float = 0.95
    pbest_frac: float = 0.11
    rank_bias: float = 3.0
    eps0: Optional[float] = None  # None -> median violation of the initial front
    eps_cp: float = 6.0
    eps_cutoff: float = 0.85
    sr_init: float = 0.5
    f2_mode: str = "cauchy"
    centre_mode: str = "cask"
    perturbation_on: bool = False
    perturb_prob: float = 0.2
    perturb_scale_frac: float = 0.1
    rho_update: str = "smoothed"
    archive_on: bool = True
    archive_gate: bool = True
    strict_feasible_gate: bool = False
    archive_eviction: str = "ring"
    archive_push_std_only: bool = False
    push_reduced_to_archive: bool = False
    stagnation_on: bool = True
    s3_gated: bool = True
    s1_feasible_gate: bool = False
    truncation_mode: str = "rejection"
    force_branch: Optional[str] = None

    def __post_init__(self):
        for key, allowed in _CHOICES.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key}={getattr(self, key)!r}; expected one of {allowed}")
        if self.n_min < 4:
            raise ConfigError("n_min must be >= 4")
        if self.n_init is not None and self.n_init < self.n_min:
            raise ConfigError("n_init must be >= n_min")
        if self.max_fe is not None and self.n_init is not None and self.max_fe < self.n_init:
            raise ConfigError("max_fe must be >= n_init")
        for key in ("arch_floor", "sr_gate", "rho0", "cr_sat", "perturb_prob", "sr_init"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]")
        if not 0.0 < self.pbest_frac <= 1.0:
            raise ConfigError("pbest_frac must lie in (0, 1]")
        if self.memory_H < 1 or self.archive_cap < 1 or self.sg < 0:
            raise ConfigError("memory_H, archive_cap must be >= 1 and sg >= 0")
        if self.rank_bias < 0 or self.gamma_f2 <= 0 or self.sigma_f < 0 or self.sigma_cr < 0:
            raise ConfigError("scale parameters out of range")
        if self.eps0 is not None and self.eps0 < 0:
            raise ConfigError("eps0 must be non-negative")

    @classmethod
    def for_mode(cls, mode: str = "cask", **overrides) -> "Config":
        """Mode bundle (``cask`` defaults or the ``baseline`` set) plus overrides."""
        base = dict(BASELINE_BUNDLE) if mode == "baseline" else {}
        base.update(overrides)
        return cls(mode=mode, **base)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls.for_mode(d.pop("mode", "cask"), **d)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def resolved(self, dim: int) -> "Config":
        n_init = self.n_init if self.n_init is not None else 18 * dim
        max_fe = self.max_fe if self.max_fe is not None else 20000 * dim
        n_init = max(n_init, self.n_min)
        if max_fe < n_init:
            raise ConfigError("max_fe must be >= n_init")
        return _replace(self, n_init=n_init, max_fe=max_fe)


def _replace(cfg: Config, **kw) -> Config:
    d = cfg.to_dict()
    d.update(kw)
    return Config(**d)


# --------------------------------------------------------------------------
# Operators (row-wise; accept a single vector or a batch)
# --------------------------------------------------------------------------


def standard_donor(x_i, base, x_r1, x_r2, F, F2):
    """current-to-base/1 donor: x_i + F*(base - x_i) + F2*(x_r1 - x_r2)."""
    F = np.asarray(F, dtype=float)
    F2 = np.asarray(F2, dtype=float)
    if F.ndim:
        F, F2 = F[:, None], F2[:, None]
    return x_i + F * (base - x_i) + F2 * (x_r1 - x_r2)


def eb_donor(x_i, x_best, x_mid, x_worst, F):
    """Ordered donor: x_i + F*(x_best - x_i) + F*(x_mid - x_worst)."""
    F = np.asarray(F, dtype=float)
    if F.ndim:
        F = F[:, None]
    return x_i + F * (x_best - x_i) + F * (x_mid - x_worst)


def crossover_mask(u, jrand_u, CR):
    """Binomial crossover mask from pre-drawn uniforms.

    ``u`` has shape (n, D), ``jrand_u`` (n,), ``CR`` scalar or (n,).
    """
    u = np.atleast_2d(u)
    n, D = u.shape
    mask = u < np.reshape(CR, (-1, 1))
    jrand = np.minimum((np.asarray(jrand_u).reshape(n) * D).astype(np.int64), D - 1)
    mask[np.arange(n), jrand] = True
    return mask


def crossover(target, donor, CR, rng, mode: str = "cask", lower=None, upper=None,
              perturb_prob: float = 0.2, perturb_scale_frac: float = 0.1):
    """Binomial crossover of one target/donor pair (or a batch of rows).

    In ``cask`` mode the non-crossover coordinates copy the target. In
    ``baseline_perturb`` mode each of them is, with probability
    ``perturb_prob``, moved by a Cauchy step of scale
    ``perturb_scale_frac * (upper - lower)`` and bound-repaired.
    """
    target = np.asarray(target, dtype=float)
    single = target.ndim == 1
    T = np.atleast_2d(target)
    V = np.atleast_2d(np.asarray(donor, dtype=float))
    n, D = T.shape
    mask = crossover_mask(rng.random((n, D)), rng.random(n), CR)
    U = np.where(mask, V, T)
    if mode == "baseline_perturb":
        if lower is None or upper is None:
            raise ValueError("baseline_perturb needs bounds")
        U = _perturb(U, T, mask, rng.random((n, D)), rng.standard_cauchy((n, D)),
                     lower, upper, perturb_prob, perturb_scale_frac)
    elif mode != "cask":
        raise ValueError(f"unknown crossover mode {mode!r}")
    return U[0] if single else U


def _perturb(U, T, mask, u, steps, lower, upper, prob, scale_frac):
    hit = (~mask) & (u < prob)
    P = T + steps * (scale_frac * (np.asarray(upper) - np.asarray(lower)))
    P = bound_repair(P, T, lower, upper)
    return np.where(hit, P, U)


def bound_repair(v, parent, lower, upper):
    """Midpoint repair towards the parent for out-of-bounds coordinates."""
    v = np.asarray(v, dtype=float)
    parent = np.asarray(parent, dtype=float)
    out = np.where(v < lower, (parent + lower) / 2.0, v)
    return np.where(out > upper, (parent + upper) / 2.0, out)


def epsilon_select(target_phi, target_f, trial_phi, trial_f, eps):
    """Accept the trial iff it is no worse than the target under the epsilon rule.

    Works elementwise on arrays.
    """
    tp, tf = np.asarray(target_phi), np.asarray(target_f)
    up, uf = np.asarray(trial_phi), np.asarray(trial_f)
    both = (up <= eps) & (tp <= eps)
    out = (both & (uf <= tf)) | ((up == tp) & (uf <= tf)) | ((up < tp) & ~both)
    return bool(out) if out.ndim == 0 else out


def epsilon_rank_key(phi, f, eps):
    """Lexsort keys (primary last) ordering points best-first under the epsilon rule."""
    phi = np.asarray(phi)
    return (np.asarray(f), np.where(phi <= eps, 0.0, phi))


def front_size(n_init: int, n_min: int, fe: int, max_fe: int) -> int:
    frac = min(1.0, fe / max_fe)
    return max(n_min, int(round(n_init - (n_init - n_min) * frac)))


def better(phi_a, f_a, phi_b, f_b) -> bool:
    """Global-best order: lower violation first (feasible = 0), then lower f."""
    return phi_a < phi_b or (phi_a == phi_b and f_a < f_b)


# --------------------------------------------------------------------------
# Run state and results
# --------------------------------------------------------------------------


@dataclass
class Front:
    X: np.ndarray
    f: np.ndarray
    g: np.ndarray
    h: np.ndarray
    phi: np.ndarray

    def __len__(self):
        return self.f.size

    def point(self, i: int) -> EvaluatedPoint:
        return EvaluatedPoint(x=self.X[i].copy(), f=float(self.f[i]), g=self.g[i].copy(),
                              h=self.h[i].copy(), phi=float(self.phi[i]))

    def keep(self, mask):
        for name in ("X", "f", "g", "h", "phi"):
            setattr(self, name, getattr(self, name)[mask])


@dataclass
class RunState:
    front: Front
    best: EvaluatedPoint
    fe: int
    generation: int
    memory: SuccessMemory
    archive: Optional[Archive]
    stagnation: StagnationState
    rate: HybridRate
    prev_SR: float
    eps_schedule: EpsSchedule


@dataclass
class Trace:
    """Best-so-far (f, phi) sampled at ``K`` evenly spaced evaluation counts."""

    checkpoint_fe: np.ndarray
    best_f: np.ndarray
    best_phi: np.ndarray

    @property
    def K(self) -> int:
        return self.checkpoint_fe.size


def checkpoint_schedule(max_fe: int, K: int) -> np.ndarray:
    return np.array([-(-(k * max_fe) // K) for k in range(1, K + 1)], dtype=np.int64)


@dataclass
class GenerationRecord:
    """Per-generation snapshot handed to the optional ``callback``."""

    generation: int
    eps: float
    targets: np.ndarray
    trials: np.ndarray
    branch_eb: np.ndarray
    stagnated: np.ndarray
    overrides_fired: np.ndarray
    target_phi: np.ndarray  # violation of each target before selection
    accepted: np.ndarray
    pushed: np.ndarray
    sigma_selected: np.ndarray  # counters after selection, before reduction
    kept: np.ndarray  # members surviving the reduction step
    front_size: int
    archive_size: int
    rho: float
    SR: float


@dataclass
class RunResult:
    problem: str
    dim: int
    seed: int
    config: Config
    best: EvaluatedPoint
    fe: int
    generations: int
    trace: Trace
    final_front_size: int
    archive_size: int
    kicks: int = 0
    version: str = field(default=__version__)

    @property
    def feasible(self) -> bool:
        return self.best.phi <= 0.0

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "dim": self.dim,
            "seed": self.seed,
            "config": self.config.to_dict(),
            "best": self.best.to_dict(),
            "fe": self.fe,
            "generations": self.generations,
            "final_front_size": self.final_front_size,
            "archive_size": self.archive_size,
            "kicks": self.kicks,
            "checkpoint_fe": [int(v) for v in self.trace.checkpoint_fe],
            "best_f": [float(v) for v in self.trace.best_f],
            "best_phi": [float(v) for v in self.trace.best_phi],
        }


class InvariantError(AssertionError):
    pass


class RunAborted(RuntimeError):
    pass


# --------------------------------------------------------------------------
# The loop
# --------------------------------------------------------------------------


class _Recorder:
    """Tracks the global best and fills checkpoints as evaluations arrive."""

    def __init__(self, max_fe: int, K: int):
        self.cp_fe = checkpoint_schedule(max_fe, K)
        self.best_f = np.empty(K)
        self.best_phi = np.empty(K)
        self.next = 0
        self.fe = 0
        self.bf = math.inf
        self.bphi = math.inf
        self.bidx = None  # (batch id, row) of the current best

    def feed(self, f, phi, batch_id):
        bf, bphi, fe, nxt = self.bf, self.bphi, self.fe, self.next
        cp = self.cp_fe
        K = cp.size
        for j, (fj, pj) in enumerate(zip(f.tolist(), phi.tolist())):
            if pj < bphi or (pj == bphi and fj < bf):
                bf, bphi = fj, pj
                self.bidx = (batch_id, j)
            fe += 1
            while nxt < K and fe >= cp[nxt]:
                self.best_f[nxt] = bf
                self.best_phi[nxt] = bphi
                nxt += 1
        self.bf, self.bphi, self.fe, self.next = bf, bphi, fe, nxt


def run(problem: ProblemSpec, config: Config | None = None, seed: int = 0, *, K: int = 2000,
        callback: Optional[Callable[[GenerationRecord], None]] = None,
        audit: bool = False) -> RunResult:
    """Minimize ``problem`` with RDEx-CASK (or the baseline bundle).

    Runs until the evaluation budget is spent and returns the best feasible
    point found, or the least-violating one if none is feasible, together with
    a ``K``-point best-so-far trace. ``audit=True`` checks run invariants every
    generation and raises ``InvariantError`` on the first breach.
    """
    cfg = (config or Config()).resolved(problem.dim)
    rng = make_rng(seed)
    D = problem.dim
    lo, hi = problem.lower, problem.upper
    N_init, N_min, max_fe = cfg.n_init, cfg.n_min, cfg.max_fe
    trunc = cfg.truncation_mode

    rec = _Recorder(max_fe, K)

    def evaluate(X, batch_id):
        try:
            f, g, h, phi = evaluate_batch(problem, X)
        except Exception as exc:  # non-finite or out-of-bounds evaluations abort the run
            raise RunAborted(f"{problem.name}: {exc}") from exc
        rec.feed(f, phi, batch_id)
        return f, g, h, phi

    X0 = lo + rng.random((N_init, D)) * (hi - lo)
    f0, g0, h0, p0 = evaluate(X0, 0)
    front = Front(X0, f0, g0, h0, p0)
    best = front.point(rec.bidx[1])

    eps0 = cfg.eps0 if cfg.eps0 is not None else float(np.median(p0))
    state = RunState(
        front=front,
        best=best,
        fe=rec.fe,
        generation=0,
        memory=SuccessMemory.new(cfg.memory_H),
        archive=Archive(cfg.archive_cap, D, cfg.archive_eviction) if cfg.archive_on else None,
        stagnation=StagnationState.new(N_init, cfg.sg),
        rate=HybridRate.new(cfg.rho0),
        prev_SR=cfg.sr_init,
        eps_schedule=EpsSchedule(eps0, cfg.eps_cutoff, cfg.eps_cp),
    )
    kicks = 0

    while state.fe < max_fe:
        g_id = state.generation + 1
        fr = state.front
        N = len(fr)
        n = min(N, max_fe - state.fe)
        eps = epsilon_level(state.eps_schedule, state.fe / max_fe)
        tgt = np.arange(n)

        # epsilon ranking of the front: rank_of[i] = position of member i
        order = np.lexsort(epsilon_rank_key(fr.phi, fr.f, eps))
        rank_of = np.empty(N, dtype=np.int64)
        rank_of[order] = np.arange(N)

        # ---- parameter draws (fixed order) ----
        u_branch = rng.random(n)
        mu_F = mu_f_centre(state.prev_SR, cfg.centre_mode)
        F = trunc_normal(mu_F, cfg.sigma_f, 0.0, 1.0, rng, size=n, mode=trunc)
        if cfg.f2_mode == "cauchy":
            F2 = trunc_cauchy(mu_F, cfg.gamma_f2, 0.0, 1.0, rng, size=n, mode=trunc)
        elif cfg.f2_mode == "normal":
            F2 = trunc_normal(mu_F, cfg.gamma_f2, 0.0, 1.0, rng, size=n, mode=trunc)
        else:
            F2 = F.copy()
        cell = np.minimum((rng.random(n) * state.memory.H).astype(np.int64), state.memory.H - 1)
        CR = trunc_normal(state.memory.M_CR[cell], cfg.sigma_cr, 0.0, 1.0, rng, mode=trunc)
        CR = np.atleast_1d(CR).astype(float)

        # ---- donor index draws (fixed order) ----
        u_pbest = rng.random(n)
        u_r1 = rng.random(n)
        u_arch = rng.random(n)
        u_ak = rng.random(n)
        u_r2 = rng.random(n)
        u_eb = rng.random((n, 3))
        u_cross = rng.random((n, D))
        u_jrand = rng.random(n)
        if cfg.perturbation_on:
            u_pert = rng.random((n, D))
            c_pert = rng.standard_cauchy((n, D))

        # ---- branch and overrides ----
        if cfg.force_branch == "eb":
            is_eb = np.ones(n, dtype=bool)
        elif cfg.force_branch == "standard":
            is_eb = np.zeros(n, dtype=bool)
        else:
            is_eb = u_branch < state.rate.rho
        std = ~is_eb
        stag = state.stagnation.sigma[:n] >= cfg.sg if cfg.stagnation_on else np.zeros(n, bool)
        kick = std & stag
        use_best = kick & (not (cfg.s1_feasible_gate and state.best.phi > 0.0))
        floor_on = kick
        sat = kick & ((not cfg.s3_gated) or state.prev_SR < cfg.sr_gate)
        kicks += int(kick.sum())
        CR = np.where(sat, saturate_cr(CR, cfg.cr_sat), CR)

        # ---- standard branch donors ----
        n_p = max(2, int(math.ceil(cfg.pbest_frac * N)))
        n_p = min(n_p, N)
        pbest = order[np.minimum((u_pbest * n_p).astype(np.int64), n_p - 1)]
        r1_rank = rank_biased_pick(N, cfg.rank_bias, u_r1, exclude=rank_of[tgt])
        r1 = order[r1_rank]
        r2 = pick_excluding(u_r2, N, np.stack([tgt, r1], axis=1))
        X_r2 = fr.X[r2]
        arch = state.archive
        if arch is not None and arch.size > 0:
            p_base = arch_probability(arch.size, N)
            p_stag = arch_probability(arch.size, N, True, cfg.arch_floor)
            p = np.where(floor_on, p_stag, p_base)
            from_arch = u_arch < p
            k = np.minimum((u_ak * arch.size).astype(np.int64), arch.size - 1)
            X_r2 = np.where(from_arch[:, None], arch.X[k], X_r2)
        base = np.where(use_best[:, None], state.best.x, fr.X[pbest])
        X_i = fr.X[:n]
        V = standard_donor(X_i, base, fr.X[r1], X_r2, F, F2)

        # ---- EB branch donors ----
        if is_eb.any():
            a = pick_excluding(u_eb[:, 0], N, tgt[:, None])
            b = pick_excluding(u_eb[:, 1], N, np.stack([tgt, a], axis=1))
            c = pick_excluding(u_eb[:, 2], N, np.stack([tgt, a, b], axis=1))
            trio = np.stack([a, b, c], axis=1)
            trio = np.take_along_axis(trio, np.argsort(rank_of[trio], axis=1), axis=1)
            V_eb = eb_donor(X_i, fr.X[trio[:, 0]], fr.X[trio[:, 1]], fr.X[trio[:, 2]], F)
            V = np.where(is_eb[:, None], V_eb, V)

        # ---- crossover and repair ----
        mask = crossover_mask(u_cross, u_jrand, CR)
        V = bound_repair(V, X_i, lo, hi)
        U = np.where(mask, V, X_i)
        if cfg.perturbation_on:
            # the perturbation belongs to the standard branch only
            P = _perturb(U, X_i, mask, u_pert, c_pert, lo, hi, cfg.perturb_prob,
                         cfg.perturb_scale_frac)
            U = np.where(std[:, None], P, U)

        if audit and (np.any(U < lo) or np.any(U > hi)):
            raise InvariantError("trial outside bounds")

        # ---- evaluate and select ----
        tf, tg, th, tphi = evaluate(U, g_id)
        if rec.bidx[0] == g_id:
            j = rec.bidx[1]
            state.best = EvaluatedPoint(x=U[j].copy(), f=float(tf[j]), g=tg[j].copy(),
                                        h=th[j].copy(), phi=float(tphi[j]))
        state.fe = rec.fe

        old_phi, old_f = fr.phi[:n].copy(), fr.f[:n].copy()
        acc = epsilon_select(old_phi, old_f, tphi, tf, eps)
        both_in = (old_phi <= eps) & (tphi <= eps)
        w = np.where(both_in, np.abs(old_f - tf), old_phi - tphi)
        w = np.where(acc, w, 0.0)

        pushed = np.zeros(n, dtype=bool)
        gate_eps = 0.0 if cfg.strict_feasible_gate else eps
        acc_idx = np.flatnonzero(acc)
        if arch is not None:
            for i in acc_idx:
                if cfg.archive_push_std_only and is_eb[i]:
                    continue
                pushed[i] = push_gated(arch, fr.point(i), gate_eps, cfg.archive_gate, g_id, rng)
        fr.X[acc_idx] = U[acc_idx]
        fr.f[acc_idx] = tf[acc_idx]
        fr.g[acc_idx] = tg[acc_idx]
        fr.h[acc_idx] = th[acc_idx]
        fr.phi[acc_idx] = tphi[acc_idx]
        sig = state.stagnation.sigma
        sig[:n] = np.where(acc, 0, sig[:n] + 1)
        sigma_selected = sig.copy()
        if audit:
            _audit_selection(cfg, acc, is_eb, old_phi, gate_eps, pushed, sigma_selected[:n],
                             arch is not None)

        # ---- adaptation ----
        stats = GenStats(trials=n, accepts=int(acc.sum()),
                         delta_eb=float(w[is_eb].sum()), delta_std=float(w[std].sum()))
        SR = success_rate(stats, state.prev_SR)
        good = w > 0
        if good.any():
            update_memory(state.memory, np.stack([F[good], F2[good], CR[good], w[good]], axis=1))
        state.rate = update_rho_eb(state.rate, raw_share(stats.delta_eb, stats.delta_std),
                                   stats.delta_eb, stats.delta_std, cfg.rho_update)
        state.prev_SR = SR
        state.generation = g_id

        # ---- linear front reduction ----
        target = front_size(N_init, N_min, state.fe, max_fe)
        keep = np.ones(N, dtype=bool)
        if target < N:
            worst_first = np.lexsort((fr.f, fr.phi))[::-1]
            drop = worst_first[: N - target]
            keep[drop] = False
            if arch is not None and cfg.push_reduced_to_archive:
                for i in np.sort(drop):
                    push_gated(arch, fr.point(i), gate_eps, cfg.archive_gate, g_id, rng)
            fr.keep(keep)
            state.stagnation.keep(keep)

        if audit:
            _audit(state, cfg, target, max_fe)
        if callback is not None:
            callback(GenerationRecord(
                generation=g_id, eps=eps, targets=tgt, trials=U, branch_eb=is_eb,
                stagnated=stag, overrides_fired=kick, target_phi=old_phi, accepted=acc,
                pushed=pushed, sigma_selected=sigma_selected, kept=keep, front_size=len(fr),
                archive_size=0 if arch is None else arch.size, rho=state.rate.rho, SR=SR,
            ))

    trace = Trace(checkpoint_fe=rec.cp_fe, best_f=rec.best_f, best_phi=rec.best_phi)
    if audit:
        for k in range(1, trace.best_f.size):
            if better(trace.best_phi[k - 1], trace.best_f[k - 1],
                      trace.best_phi[k], trace.best_f[k]):
                raise InvariantError("best-so-far trace worsened")
    return RunResult(
        problem=problem.name, dim=D, seed=int(seed), config=cfg, best=state.best,
        fe=state.fe, generations=state.generation, trace=trace,
        final_front_size=len(state.front),
        archive_size=0 if state.archive is None else state.archive.size, kicks=kicks,
    )


def _audit_selection(cfg: Config, acc, is_eb, old_phi, gate_eps, pushed, sigma, has_archive):
    if np.any(sigma[acc] != 0):
        raise InvariantError("accepted member kept a non-zero stagnation counter")
    if not has_archive:
        if pushed.any():
            raise InvariantError("push recorded without an archive")
        return
    eligible = acc & ~(is_eb if cfg.archive_push_std_only else False)
    passes = (old_phi <= gate_eps) if cfg.archive_gate else np.ones_like(acc)
    if not np.array_equal(pushed, eligible & passes):
        raise InvariantError("archive pushes disagree with the gate")


def _audit(state: RunState, cfg: Config, target: int, max_fe: int):
    fr = state.front
    if state.fe > max_fe:
        raise InvariantError("evaluation budget exceeded")
    if len(fr) != target:
        raise InvariantError(f"front size {len(fr)} differs from schedule {target}")
    if len(state.stagnation) != len(fr):
        raise InvariantError("stagnation counters out of step with the front")
    if np.any(state.stagnation.sigma < 0):
        raise InvariantError("negative stagnation counter")
    if not 0.0 <= state.rate.rho <= 1.0:
        raise InvariantError("hybrid rate outside [0, 1]")
    if np.any(state.memory.M_CR < 0) or np.any(state.memory.M_CR > 1):
        raise InvariantError("memory cell outside [0, 1]")
    arch = state.archive
    if arch is not None:
        if arch.size > arch.capacity:
            raise InvariantError("archive over capacity")
        for e in arch.entries():
            if e.gated and e.point.phi > e.eps:
                raise InvariantError("archive entry violates its push gate")
    bp, bf = state.best.phi, state.best.f
    for pj, fj in zip(fr.phi.tolist(), fr.f.tolist()):
        if better(pj, fj, bp, bf):
            raise InvariantError("front member better than the recorded global best")
