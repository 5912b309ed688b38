"""Constrained differential evolution (RDEx-CASK) with a benchmark harness."""

__version__ = "0.1.0"

from .engine import Config, RunResult, run  # noqa: E402
from .problem import EvaluatedPoint, ProblemSpec, evaluate, get_problem, problem_names, q_metric, violation  # noqa: E402

__all__ = [
    "Config",
    "EvaluatedPoint",
    "ProblemSpec",
    "RunResult",
    "evaluate",
    "get_problem",
    "problem_names",
    "q_metric",
    "run",
    "violation",
]
