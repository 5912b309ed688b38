"""Constrained problems, the averaged violation measure and the Q_p quality metric.

Evaluators are written in batch form: they take an ``(n, D)`` array and return
``(f, g, h)`` with shapes ``(n,)``, ``(n, m_g)`` and ``(n, m_h)``. Row results do
not depend on the batch they were computed in, so ``evaluate`` on a single point
and the engine's batched path agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

EPS_EQ = 1e-4

Evaluator = Callable[[np.ndarray], tuple]


class ProblemError(ValueError):
    """Raised for invalid problem definitions or evaluation requests."""


def violation(g, h, eps_eq: float = EPS_EQ):
    """Averaged constraint violation.

    ``g`` and ``h`` may be 1-D (one point) or 2-D (one row per point); the
    result is a float or an array accordingly.
    """
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    if eps_eq < 0:
        raise ProblemError("eps_eq must be non-negative")
    m = g.shape[-1] + h.shape[-1]
    if m == 0:
        raise ProblemError("no constraints")
    total = np.maximum(0.0, g).sum(axis=-1) + np.maximum(0.0, np.abs(h) - eps_eq).sum(axis=-1)
    out = total / m
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class EvaluatedPoint:
    x: np.ndarray
    f: float
    g: np.ndarray
    h: np.ndarray
    phi: float

    @property
    def feasible(self) -> bool:
        return self.phi <= 0.0

    def to_dict(self) -> dict:
        return {
            "x": [float(v) for v in self.x],
            "f": float(self.f),
            "g": [float(v) for v in self.g],
            "h": [float(v) for v in self.h],
            "phi": float(self.phi),
        }


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    name: str
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    m_g: int
    m_h: int
    evaluator: Evaluator
    known_best: Optional[tuple] = None  # (f*, x*)
    eps_eq: float = EPS_EQ
    description: str = ""

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        if lower.shape != (self.dim,) or upper.shape != (self.dim,):
            raise ProblemError(f"{self.name}: bounds must have length {self.dim}")
        if not np.all(lower < upper):
            raise ProblemError(f"{self.name}: lower < upper must hold in every coordinate")
        if self.m_g < 0 or self.m_h < 0:
            raise ProblemError(f"{self.name}: negative constraint count")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def evaluate(self, x) -> EvaluatedPoint:
        return evaluate(self, x)


def evaluate_batch(problem: ProblemSpec, X: np.ndarray):
    """Evaluate rows of ``X``; returns ``(f, g, h, phi)`` arrays.

    Checks bounds and finiteness exactly like ``evaluate``.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != problem.dim:
        raise ProblemError(f"{problem.name}: expected shape (n, {problem.dim}), got {X.shape}")
    if np.any(X < problem.lower) or np.any(X > problem.upper):
        raise ProblemError(f"{problem.name}: point outside bounds (repair before evaluating)")
    f, g, h = problem.evaluator(X)
    n = X.shape[0]
    f = np.asarray(f, dtype=float).reshape(n)
    g = np.asarray(g, dtype=float).reshape(n, problem.m_g)
    h = np.asarray(h, dtype=float).reshape(n, problem.m_h)
    if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise ProblemError(f"{problem.name}: non-finite evaluation")
    phi = violation(g, h, problem.eps_eq)
    return f, g, h, np.atleast_1d(phi)


def evaluate(problem: ProblemSpec, x) -> EvaluatedPoint:
    x = np.array(x, dtype=float).reshape(-1)
    if x.shape != (problem.dim,):
        raise ProblemError(f"{problem.name}: expected length {problem.dim}, got {x.shape[0]}")
    f, g, h, phi = evaluate_batch(problem, x[None, :])
    return EvaluatedPoint(x=x, f=float(f[0]), g=g[0].copy(), h=h[0].copy(), phi=float(phi[0]))


def q_metric(final: EvaluatedPoint, eps_feas: float = 0.0, B_p: float = 0.0) -> float:
    """Feasibility-aware final quality: ``f`` if feasible, else ``B_p + phi``."""
    if final.phi <= eps_feas:
        return float(final.f)
    return float(B_p + final.phi)


# --------------------------------------------------------------------------
# Substitute benchmark suite
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteEntry:
    name: str
    build: Callable[[int], ProblemSpec]
    dims: tuple  # (min_dim, max_dim); max_dim None means unbounded
    default_dim: int
    m_g: int
    m_h: int
    description: str = field(default="")

    def dim_ok(self, dim: int) -> bool:
        lo, hi = self.dims
        return dim >= lo and (hi is None or dim <= hi)


_REGISTRY: dict[str, SuiteEntry] = {}


def register(entry: SuiteEntry) -> SuiteEntry:
    if entry.m_g + entry.m_h == 0:
        raise ProblemError(f"{entry.name}: no constraints; unconstrained problems are not accepted")
    if entry.name in _REGISTRY:
        raise ProblemError(f"{entry.name}: already registered")
    _REGISTRY[entry.name] = entry
    return entry


def problem_names() -> list[str]:
    return list(_REGISTRY)


def suite_entry(name: str) -> SuiteEntry:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise ProblemError(f"unknown problem {name!r}; known: {', '.join(_REGISTRY)}") from None


def get_problem(name: str, dim: Optional[int] = None) -> ProblemSpec:
    entry = suite_entry(name)
    dim = entry.default_dim if dim is None else int(dim)
    if not entry.dim_ok(dim):
        raise ProblemError(f"{name}: dimension {dim} outside supported range {entry.dims}")
    return entry.build(dim)


def _cols(X):
    return [X[:, j] for j in range(X.shape[1])]


def _sphere_lineq(dim):
    def ev(X):
        f = (X * X).sum(axis=1)
        h = X.sum(axis=1) - dim
        return f, np.empty((X.shape[0], 0)), h[:, None]

    # the equality is relaxed by EPS_EQ, so the optimum sits on sum(x) = dim - EPS_EQ
    c = (dim - EPS_EQ) / dim
    return ProblemSpec(
        name="sphere-lineq", dim=dim,
        lower=np.full(dim, -10.0), upper=np.full(dim, 10.0),
        m_g=0, m_h=1, evaluator=ev,
        known_best=((dim - EPS_EQ) ** 2 / dim, np.full(dim, c)),
        description="min sum x^2 s.t. sum x = D",
    )


def _rosenbrock_disk(dim):
    def ev(X):
        a, b = X[:, :-1], X[:, 1:]
        f = (100.0 * (b - a * a) ** 2 + (1.0 - a) ** 2).sum(axis=1)
        g = (X * X).sum(axis=1) - dim
        return f, g[:, None], np.empty((X.shape[0], 0))

    return ProblemSpec(
        name="rosenbrock-disk", dim=dim,
        lower=np.full(dim, -1.5), upper=np.full(dim, 1.5),
        m_g=1, m_h=0, evaluator=ev,
        known_best=(0.0, np.ones(dim)),
        description="Rosenbrock s.t. sum x^2 <= D (optimum on the boundary)",
    )


def _g01(dim):
    def ev(X):
        x = _cols(X)
        f = 5.0 * (X[:, :4].sum(axis=1)) - 5.0 * (X[:, :4] ** 2).sum(axis=1) - X[:, 4:].sum(axis=1)
        g = np.stack([
            2 * x[0] + 2 * x[1] + x[9] + x[10] - 10,
            2 * x[0] + 2 * x[2] + x[9] + x[11] - 10,
            2 * x[1] + 2 * x[2] + x[10] + x[11] - 10,
            -8 * x[0] + x[9],
            -8 * x[1] + x[10],
            -8 * x[2] + x[11],
            -2 * x[3] - x[4] + x[9],
            -2 * x[5] - x[6] + x[10],
            -2 * x[7] - x[8] + x[11],
        ], axis=1)
        return f, g, np.empty((X.shape[0], 0))

    upper = np.ones(13)
    upper[9:12] = 100.0
    return ProblemSpec(
        name="G01", dim=13, lower=np.zeros(13), upper=upper, m_g=9, m_h=0, evaluator=ev,
        known_best=(-15.0, np.array([1.0] * 9 + [3.0, 3.0, 3.0, 1.0])),
        description="quadratic objective, 9 linear inequalities",
    )


def _g04(dim):
    def ev(X):
        x1, x2, x3, x4, x5 = _cols(X)
        f = 5.3578547 * x3 ** 2 + 0.8356891 * x1 * x5 + 37.293239 * x1 - 40792.141
        u = 85.334407 + 0.0056858 * x2 * x5 + 0.0006262 * x1 * x4 - 0.0022053 * x3 * x5
        v = 80.51249 + 0.0071317 * x2 * x5 + 0.0029955 * x1 * x2 + 0.0021813 * x3 ** 2
        w = 9.300961 + 0.0047026 * x3 * x5 + 0.0012547 * x1 * x3 + 0.0019085 * x3 * x4
        g = np.stack([u - 92.0, -u, v - 110.0, -v + 90.0, w - 25.0, -w + 20.0], axis=1)
        return f, g, np.empty((X.shape[0], 0))

    return ProblemSpec(
        name="G04", dim=5,
        lower=np.array([78.0, 33.0, 27.0, 27.0, 27.0]),
        upper=np.array([102.0, 45.0, 45.0, 45.0, 45.0]),
        m_g=6, m_h=0, evaluator=ev,
        known_best=(-30665.538671783317,
                    np.array([78.0, 33.0, 29.9952560256815985, 45.0, 36.7758129057882073])),
        description="quadratic objective, 6 nonlinear inequalities",
    )


def _g06(dim):
    def ev(X):
        x1, x2 = _cols(X)
        f = (x1 - 10.0) ** 2 * (x1 - 10.0) + (x2 - 20.0) ** 2 * (x2 - 20.0)
        g = np.stack([
            -(x1 - 5.0) ** 2 - (x2 - 5.0) ** 2 + 100.0,
            (x1 - 6.0) ** 2 + (x2 - 5.0) ** 2 - 82.81,
        ], axis=1)
        return f, g, np.empty((X.shape[0], 0))

    return ProblemSpec(
        name="G06", dim=2, lower=np.array([13.0, 0.0]), upper=np.array([100.0, 100.0]),
        m_g=2, m_h=0, evaluator=ev,
        known_best=(-6961.81387558015, np.array([14.095, 0.8429607892154795668])),
        description="cubic objective, thin crescent-shaped feasible region",
    )


def _g07(dim):
    def ev(X):
        x1, x2, x3, x4, x5, x6, x7, x8, x9, x10 = _cols(X)
        f = (x1 ** 2 + x2 ** 2 + x1 * x2 - 14 * x1 - 16 * x2 + (x3 - 10) ** 2
             + 4 * (x4 - 5) ** 2 + (x5 - 3) ** 2 + 2 * (x6 - 1) ** 2 + 5 * x7 ** 2
             + 7 * (x8 - 11) ** 2 + 2 * (x9 - 10) ** 2 + (x10 - 7) ** 2 + 45)
        g = np.stack([
            -105 + 4 * x1 + 5 * x2 - 3 * x7 + 9 * x8,
            10 * x1 - 8 * x2 - 17 * x7 + 2 * x8,
            -8 * x1 + 2 * x2 + 5 * x9 - 2 * x10 - 12,
            3 * (x1 - 2) ** 2 + 4 * (x2 - 3) ** 2 + 2 * x3 ** 2 - 7 * x4 - 120,
            5 * x1 ** 2 + 8 * x2 + (x3 - 6) ** 2 - 2 * x4 - 40,
            x1 ** 2 + 2 * (x2 - 2) ** 2 - 2 * x1 * x2 + 14 * x5 - 6 * x6,
            0.5 * (x1 - 8) ** 2 + 2 * (x2 - 4) ** 2 + 3 * x5 ** 2 - x6 - 30,
            -3 * x1 + 6 * x2 + 12 * (x9 - 8) ** 2 - 7 * x10,
        ], axis=1)
        return f, g, np.empty((X.shape[0], 0))

    return ProblemSpec(
        name="G07", dim=10, lower=np.full(10, -10.0), upper=np.full(10, 10.0),
        m_g=8, m_h=0, evaluator=ev,
        known_best=(24.30620906818, np.array([
            2.17199634142692, 2.3636830416034, 8.77392573913157, 5.09598443745173,
            0.990654756560493, 1.43057392853463, 1.32164415364306, 9.82872576524495,
            8.2800915887356, 8.3759266477347])),
        description="quadratic objective, 3 linear and 5 nonlinear inequalities",
    )


def _g09(dim):
    def ev(X):
        x1, x2, x3, x4, x5, x6, x7 = _cols(X)
        x2s, x3s, x5s, x6s, x7s = x2 * x2, x3 * x3, x5 * x5, x6 * x6, x7 * x7
        f = ((x1 - 10) ** 2 + 5 * (x2 - 12) ** 2 + x3s * x3s + 3 * (x4 - 11) ** 2
             + 10 * x5s * x5s * x5s + 7 * x6s + x7s * x7s - 4 * x6 * x7 - 10 * x6 - 8 * x7)
        g = np.stack([
            -127 + 2 * x1 * x1 + 3 * x2s * x2s + x3 + 4 * x4 * x4 + 5 * x5,
            -282 + 7 * x1 + 3 * x2 + 10 * x3s + x4 - x5,
            -196 + 23 * x1 + x2s + 6 * x6s - 8 * x7,
            4 * x1 * x1 + x2s - 3 * x1 * x2 + 2 * x3s + 5 * x6 - 11 * x7,
        ], axis=1)
        return f, g, np.empty((X.shape[0], 0))

    return ProblemSpec(
        name="G09", dim=7, lower=np.full(7, -10.0), upper=np.full(7, 10.0),
        m_g=4, m_h=0, evaluator=ev,
        known_best=(680.630057374402, np.array([
            2.33049935147405174, 1.95137236847114592, -0.477541399510615805,
            4.36572624923625874, -0.624486959100388983, 1.03813099410962173,
            1.5942266780671519])),
        description="polynomial objective, 4 nonlinear inequalities",
    )


def _g11(dim):
    def ev(X):
        x1, x2 = _cols(X)
        f = x1 * x1 + (x2 - 1.0) ** 2
        h = x2 - x1 * x1
        return f, np.empty((X.shape[0], 0)), h[:, None]

    # optimum of the EPS_EQ-relaxed equality: x1^2 = 0.5 - EPS_EQ, x2 = 0.5
    return ProblemSpec(
        name="G11", dim=2, lower=np.full(2, -1.0), upper=np.full(2, 1.0),
        m_g=0, m_h=1, evaluator=ev,
        known_best=(0.75 - EPS_EQ, np.array([-math.sqrt(0.5 - EPS_EQ), 0.5])),
        description="quadratic objective, one nonlinear equality",
    )


def _g24(dim):
    def ev(X):
        x1, x2 = _cols(X)
        x1s = x1 * x1
        x1c = x1s * x1
        x1q = x1s * x1s
        f = -x1 - x2
        g = np.stack([
            -2 * x1q + 8 * x1c - 8 * x1s + x2 - 2,
            -4 * x1q + 32 * x1c - 88 * x1s + 96 * x1 + x2 - 36,
        ], axis=1)
        return f, g, np.empty((X.shape[0], 0))

    return ProblemSpec(
        name="G24", dim=2, lower=np.array([0.0, 0.0]), upper=np.array([3.0, 4.0]),
        m_g=2, m_h=0, evaluator=ev,
        known_best=(-5.50801327159536, np.array([2.32952019747762, 3.17849307411774])),
        description="linear objective, two disconnected feasible regions",
    )


register(SuiteEntry("sphere-lineq", _sphere_lineq, (1, None), 5, 0, 1, "min sum x^2 s.t. sum x = D"))
register(SuiteEntry("rosenbrock-disk", _rosenbrock_disk, (2, None), 2, 1, 0,
                    "Rosenbrock inside the disk sum x^2 <= D"))
register(SuiteEntry("G01", _g01, (13, 13), 13, 9, 0, "CEC2006 G01"))
register(SuiteEntry("G04", _g04, (5, 5), 5, 6, 0, "CEC2006 G04"))
register(SuiteEntry("G06", _g06, (2, 2), 2, 2, 0, "CEC2006 G06"))
register(SuiteEntry("G07", _g07, (10, 10), 10, 8, 0, "CEC2006 G07"))
register(SuiteEntry("G09", _g09, (7, 7), 7, 4, 0, "CEC2006 G09"))
register(SuiteEntry("G11", _g11, (2, 2), 2, 0, 1, "CEC2006 G11"))
register(SuiteEntry("G24", _g24, (2, 2), 2, 2, 0, "CEC2006 G24"))
