"""Multi-run experiments: seeded cells, checkpoint traces, Q_p tables,
time-to-target and paired ablation deltas.

Output directory layout written by ``emit``::

    manifest.json   spec, resolved configs (+ digest), per-run seeds, cell status
    runs.csv        one row per run (long format)
    summary.csv     one row per (problem, dim, config): Q_p and TTT mean/SD
    deltas.csv      per-seed Q_p deltas of every config against the reference
    traces/*.json   best-so-far (f, phi) at every checkpoint, one file per cell
    environment.json  interpreter and numpy versions (not part of the
                      reproducibility contract)
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import platform
import re
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .engine import Config, run
from .problem import get_problem, suite_entry
from .randdist import GENERATOR, derive_seed


class HarnessError(RuntimeError):
    pass


@dataclass
class ExperimentSpec:
    problems: list  # (name, dim) pairs
    configs: dict  # name -> Config
    runs_per_cell: int = 25
    K: int = 2000
    seed: int = 0
    reference: Optional[str] = None
    target_policy: str = "per_config"  # or "shared:<config name>"
    audit: bool = False

    def __post_init__(self):
        if self.runs_per_cell < 1:
            raise HarnessError("runs_per_cell must be >= 1")
        if self.K < 1:
            raise HarnessError("K must be >= 1")
        if not self.configs:
            raise HarnessError("at least one config is required")
        if self.reference is None:
            self.reference = next(iter(self.configs))
        if self.reference not in self.configs:
            raise HarnessError(f"reference config {self.reference!r} not defined")
        _parse_policy(self.target_policy, self.configs)

    def run_seed(self, run_index: int) -> int:
        # depends on the run index only, so configs and problems are seed-paired
        return derive_seed(self.seed, run_index)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        problems = []
        for p in d.pop("problems"):
            if isinstance(p, str):
                p = {"name": p}
            if isinstance(p, (list, tuple)):
                p = {"name": p[0], "dim": p[1] if len(p) > 1 else None}
            name = p["name"]
            dim = p.get("dim") or suite_entry(name).default_dim
            get_problem(name, dim)  # validates name and dim
            problems.append((name, int(dim)))
        raw = d.pop("configs", {"cask": {"mode": "cask"}})
        axes = d.pop("axes", None)
        configs = expand_grid(raw, axes)
        known = {"runs_per_cell", "K", "seed", "reference", "target_policy", "audit"}
        unknown = set(d) - known
        if unknown:
            raise HarnessError(f"unknown spec keys: {sorted(unknown)}")
        return cls(problems=problems, configs=configs, **d)

    def to_dict(self) -> dict:
        return {
            "problems": [[n, d] for n, d in self.problems],
            "configs": {k: v.to_dict() for k, v in self.configs.items()},
            "config_order": list(self.configs),
            "runs_per_cell": self.runs_per_cell,
            "K": self.K,
            "seed": self.seed,
            "reference": self.reference,
            "target_policy": self.target_policy,
            "audit": self.audit,
        }


def expand_grid(configs: dict, axes: Optional[dict] = None) -> dict:
    """Cross every named config with the axis values, naming cells ``base[k=v,...]``."""
    out = {}
    for name, overrides in configs.items():
        overrides = overrides.to_dict() if isinstance(overrides, Config) else dict(overrides)
        if not axes:
            out[name] = Config.from_dict(overrides)
            continue
        keys = list(axes)
        for combo in itertools.product(*(axes[k] for k in keys)):
            tag = ",".join(f"{k}={v}" for k, v in zip(keys, combo))
            out[f"{name}[{tag}]"] = Config.from_dict({**overrides, **dict(zip(keys, combo))})
    return out


def _parse_policy(policy: str, configs) -> Optional[str]:
    if policy == "per_config":
        return None
    if policy.startswith("shared:"):
        ref = policy.split(":", 1)[1]
        if ref not in configs:
            raise HarnessError(f"target policy refers to unknown config {ref!r}")
        return ref
    raise HarnessError(f"unknown target policy {policy!r}")


# --------------------------------------------------------------------------
# Execution
# --------------------------------------------------------------------------


@dataclass
class RunRecord:
    problem: str
    dim: int
    config: str
    run: int
    seed: int
    status: str  # "ok" or an error message
    final_f: float = math.nan
    final_phi: float = math.nan
    fe: int = 0
    best_f: list = field(default_factory=list)
    best_phi: list = field(default_factory=list)
    checkpoint_fe: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def feasible(self) -> bool:
        return self.ok and self.final_phi <= 0.0


@dataclass
class ResultSet:
    spec: ExperimentSpec
    records: list  # RunRecord, sorted by (problem, dim, config order, run)

    def cells(self):
        for (name, dim), cfg in itertools.product(self.spec.problems, self.spec.configs):
            yield name, dim, cfg, [r for r in self.records
                                   if r.problem == name and r.dim == dim and r.config == cfg]

    @property
    def failed(self) -> list:
        return [r for r in self.records if not r.ok]


def _execute(task) -> RunRecord:
    name, dim, cfg_name, cfg_dict, r, seed, K, audit = task
    try:
        res = run(get_problem(name, dim), Config.from_dict(cfg_dict), seed, K=K, audit=audit)
    except Exception as exc:
        return RunRecord(name, dim, cfg_name, r, seed, status=f"error: {type(exc).__name__}: {exc}")
    return RunRecord(
        name, dim, cfg_name, r, seed, status="ok",
        final_f=res.best.f, final_phi=res.best.phi, fe=res.fe,
        best_f=res.trace.best_f.tolist(), best_phi=res.trace.best_phi.tolist(),
        checkpoint_fe=res.trace.checkpoint_fe.tolist(),
    )


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> ResultSet:
    """Run every (problem, config, run) cell; failures are recorded, not raised."""
    tasks = [
        (name, dim, cfg_name, cfg.to_dict(), r, spec.run_seed(r), spec.K, spec.audit)
        for (name, dim), (cfg_name, cfg), r in itertools.product(
            spec.problems, spec.configs.items(), range(spec.runs_per_cell))
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_execute, tasks, chunksize=1))
    else:
        records = [_execute(t) for t in tasks]
    cfg_pos = {c: i for i, c in enumerate(spec.configs)}
    prob_pos = {p: i for i, p in enumerate(spec.problems)}
    records.sort(key=lambda r: (prob_pos[(r.problem, r.dim)], cfg_pos[r.config], r.run))
    return ResultSet(spec, records)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------


def penalty_base(finals) -> float:
    """Largest finite final objective plus one."""
    finite = [float(v) for v in finals if math.isfinite(v)]
    if not finite:
        raise HarnessError("no finite final objective; penalty base undefined")
    return max(finite) + 1.0


def q_value(f: float, phi: float, B_p: float) -> float:
    return float(f) if phi <= 0.0 else float(B_p + phi)


def q_series(best_f, best_phi, B_p: float) -> np.ndarray:
    """Best quality reached by each checkpoint (running minimum, non-increasing)."""
    f = np.asarray(best_f, dtype=float)
    phi = np.asarray(best_phi, dtype=float)
    q = np.where(phi <= 0.0, f, B_p + phi)
    return np.minimum.accumulate(q)


def mean_sd(values):
    values = [float(v) for v in values]
    if not values:
        return math.nan, math.nan
    m = statistics.fmean(values)
    sd = statistics.stdev(values) if len(values) > 1 else 0.0
    return m, sd


@dataclass
class TTTRecord:
    per_run: list
    mean: float
    sd: float
    target: float
    K: int


def first_hit(series, target: float) -> int:
    """1-based index of the first checkpoint at or below ``target``; K+1 if none."""
    series = np.asarray(series, dtype=float)
    hits = np.flatnonzero(series <= target)
    return int(hits[0]) + 1 if hits.size else series.size + 1


def compute_ttt(series_list, target: Optional[float] = None) -> TTTRecord:
    """Time-to-target over runs sharing K.

    ``target`` defaults to the median final quality of these runs.
    """
    series_list = [np.asarray(s, dtype=float) for s in series_list]
    if not series_list:
        raise HarnessError("no traces")
    Ks = {s.size for s in series_list}
    if len(Ks) != 1:
        raise HarnessError("traces must share K")
    if target is None:
        target = float(np.median([s[-1] for s in series_list]))
    per = [first_hit(s, target) for s in series_list]
    m, sd = mean_sd(per)
    return TTTRecord(per_run=per, mean=m, sd=sd, target=target, K=Ks.pop())


def problem_penalty_bases(results: ResultSet) -> dict:
    out = {}
    for name, dim in results.spec.problems:
        finals = [r.final_f for r in results.records
                  if r.ok and r.problem == name and r.dim == dim]
        # a problem whose every run aborted has nothing to score
        out[(name, dim)] = penalty_base(finals) if finals else math.nan
    return out


def score_runs(results: ResultSet, target_policy: Optional[str] = None) -> list:
    """Per-run rows with Q and TTT filled in."""
    policy = target_policy or results.spec.target_policy
    shared = _parse_policy(policy, results.spec.configs)
    bases = problem_penalty_bases(results)
    rows = []
    q_by_cell = {}
    for name, dim, cfg, recs in results.cells():
        B = bases[(name, dim)]
        ok = [r for r in recs if r.ok]
        q_by_cell[(name, dim, cfg)] = {r.run: q_series(r.best_f, r.best_phi, B) for r in ok}
    for name, dim, cfg, recs in results.cells():
        B = bases[(name, dim)]
        series = q_by_cell[(name, dim, cfg)]
        ref = series if shared is None else q_by_cell[(name, dim, shared)]
        target = float(np.median([s[-1] for s in ref.values()])) if ref else math.nan
        for r in recs:
            row = {
                "problem": name, "dim": dim, "config": cfg, "run": r.run, "seed": r.seed,
                "status": r.status, "final_f": r.final_f, "final_phi": r.final_phi,
                "feasible": r.feasible, "Q": math.nan, "TTT": math.nan, "B_p": B,
            }
            if r.ok:
                row["Q"] = q_value(r.final_f, r.final_phi, B)
                row["TTT"] = first_hit(series[r.run], target)
            rows.append(row)
    return rows


def qp_table(results: ResultSet, target_policy: Optional[str] = None) -> list:
    """Per-cell summary rows: Q_p mean/SD, TTT mean/SD and feasible-run counts."""
    rows = score_runs(results, target_policy)
    out = []
    for name, dim, cfg, _ in results.cells():
        cell = [r for r in rows if r["problem"] == name and r["dim"] == dim
                and r["config"] == cfg and r["status"] == "ok"]
        qm, qs = mean_sd([r["Q"] for r in cell])
        tm, ts = mean_sd([r["TTT"] for r in cell])
        out.append({
            "problem": name, "dim": dim, "config": cfg,
            "runs": len(cell), "failed": results.spec.runs_per_cell - len(cell),
            "feasible": sum(r["feasible"] for r in cell),
            "B_p": cell[0]["B_p"] if cell else math.nan,
            "Q_mean": qm, "Q_sd": qs, "TTT_mean": tm, "TTT_sd": ts,
            "Q": f"{qm:.2E} ± {qs:.2E}", "TTT": f"{tm:.1f} ± {ts:.1f}",
        })
    return out


def paired_deltas(results: ResultSet, reference: Optional[str] = None):
    """Per-seed Q deltas (config minus reference) plus win/loss/tie counts.

    Negative delta means the config did better than the reference on that seed.
    """
    reference = reference or results.spec.reference
    rows = score_runs(results)
    by_key = {(r["problem"], r["dim"], r["config"], r["run"]): r for r in rows}
    per_seed, summary = [], []
    for name, dim, cfg, recs in results.cells():
        if cfg == reference:
            continue
        deltas = []
        for r in recs:
            a = by_key[(name, dim, cfg, r.run)]
            b = by_key[(name, dim, reference, r.run)]
            if a["status"] != "ok" or b["status"] != "ok":
                continue
            d = a["Q"] - b["Q"]
            deltas.append(d)
            per_seed.append({"problem": name, "dim": dim, "config": cfg, "reference": reference,
                             "run": r.run, "seed": r.seed, "Q": a["Q"], "Q_ref": b["Q"],
                             "delta": d})
        m, _ = mean_sd(deltas)
        summary.append({"problem": name, "dim": dim, "config": cfg, "reference": reference,
                        "wins": sum(d < 0 for d in deltas), "losses": sum(d > 0 for d in deltas),
                        "ties": sum(d == 0 for d in deltas), "mean_delta": m})
    return per_seed, summary


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

RUN_COLUMNS = ["problem", "dim", "config", "run", "seed", "status", "final_f", "final_phi",
               "feasible", "Q", "TTT", "B_p"]
SUMMARY_COLUMNS = ["problem", "dim", "config", "runs", "failed", "feasible", "B_p", "Q_mean",
                   "Q_sd", "TTT_mean", "TTT_sd", "Q", "TTT"]
DELTA_COLUMNS = ["problem", "dim", "config", "reference", "run", "seed", "Q", "Q_ref", "delta"]
DELTA_SUMMARY_COLUMNS = ["problem", "dim", "config", "reference", "wins", "losses", "ties",
                         "mean_delta"]


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows: list, columns: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", text).strip("_")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def manifest(results: ResultSet) -> dict:
    spec = results.spec
    return {
        "package_version": __version__,
        "generator": GENERATOR,
        "spec": spec.to_dict(),
        "config_digests": {k: v.digest() for k, v in spec.configs.items()},
        "run_seeds": [spec.run_seed(r) for r in range(spec.runs_per_cell)],
        "failed": [{"problem": r.problem, "dim": r.dim, "config": r.config, "run": r.run,
                    "status": r.status} for r in results.failed],
    }


def emit(results: ResultSet, out_dir, fmt: str = "csv") -> list:
    """Write all result files under ``out_dir``; returns the written paths."""
    if fmt not in ("csv", "json"):
        raise HarnessError(f"unknown format {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise HarnessError(f"cannot write to {out}: {exc}") from exc

    runs = score_runs(results)
    summary = qp_table(results)
    deltas, delta_summary = paired_deltas(results)
    written = []

    def put(name, text):
        _write(out / name, text)
        written.append(out / name)

    if fmt == "csv":
        put("runs.csv", to_csv(runs, RUN_COLUMNS))
        put("summary.csv", to_csv(summary, SUMMARY_COLUMNS))
        put("deltas.csv", to_csv(deltas, DELTA_COLUMNS))
        put("deltas_summary.csv", to_csv(delta_summary, DELTA_SUMMARY_COLUMNS))
    else:
        put("runs.json", _dumps(runs))
        put("summary.json", _dumps(summary))
        put("deltas.json", _dumps({"per_seed": deltas, "summary": delta_summary}))
    put("manifest.json", _dumps(manifest(results)))
    for name, dim, cfg, recs in results.cells():
        payload = {
            "problem": name, "dim": dim, "config": cfg, "K": results.spec.K,
            "checkpoint_fe": next((r.checkpoint_fe for r in recs if r.ok), []),
            "runs": [{"run": r.run, "seed": r.seed, "status": r.status, "final_f": r.final_f,
                      "final_phi": r.final_phi, "fe": r.fe, "best_f": r.best_f,
                      "best_phi": r.best_phi} for r in recs],
        }
        put(f"traces/{_slug(name)}-D{dim}__{_slug(cfg)}.json", _dumps(payload))
    _write(out / "environment.json", _dumps({
        "python": platform.python_version(), "numpy": np.__version__,
        "platform": platform.platform(), "cpu_count": os.cpu_count(),
    }))
    return written


def _dumps(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=True) + "\n"


def load_results(in_dir) -> ResultSet:
    """Rebuild a ``ResultSet`` from an output directory written by ``emit``."""
    src = Path(in_dir)
    man = json.loads((src / "manifest.json").read_text())
    sd = man["spec"]
    spec = ExperimentSpec(
        problems=[tuple(p) for p in sd["problems"]],
        configs={k: Config.from_dict(sd["configs"][k]) for k in sd["config_order"]},
        runs_per_cell=sd["runs_per_cell"], K=sd["K"], seed=sd["seed"],
        reference=sd["reference"], target_policy=sd["target_policy"], audit=sd["audit"],
    )
    records = []
    for (name, dim), cfg in itertools.product(spec.problems, spec.configs):
        path = src / "traces" / f"{_slug(name)}-D{dim}__{_slug(cfg)}.json"
        cell = json.loads(path.read_text())
        for r in cell["runs"]:
            records.append(RunRecord(
                problem=name, dim=dim, config=cfg, run=r["run"], seed=r["seed"],
                status=r["status"], final_f=r["final_f"], final_phi=r["final_phi"], fe=r["fe"],
                best_f=r["best_f"], best_phi=r["best_phi"], checkpoint_fe=cell["checkpoint_fe"],
            ))
    return ResultSet(spec, records)
