"""Command line entry point: ``cask problems|solve|run|ttt|table``."""

from __future__ import annotations

import argparse
import json
import sys

from .engine import Config
from .harness import (
    ExperimentSpec,
    HarnessError,
    emit,
    load_results,
    qp_table,
    run_experiment,
    score_runs,
    to_csv,
    SUMMARY_COLUMNS,
)
from .problem import get_problem, problem_names, suite_entry


def _add_config_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("algorithm overrides")
    g.add_argument("--mode", choices=("cask", "baseline"))
    g.add_argument("--sg", type=int, help="stagnation threshold (generations)")
    g.add_argument("--arch-floor", type=float, help="archive probability floor when stagnated")
    g.add_argument("--sr-gate", type=float, help="success-rate gate for CR saturation")
    g.add_argument("--archive-cap", type=int, choices=(20, 30, 50, 100, 300))
    g.add_argument("--s3-ungated", action="store_true", help="saturate CR whenever stagnated")
    g.add_argument("--s1-feasible-gate", action="store_true",
                   help="pull towards the global best only if it is feasible")
    g.add_argument("--max-fe", type=int)
    g.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="any other config key, value parsed as JSON")


def _overrides(args) -> dict:
    out = {}
    if args.mode:
        out["mode"] = args.mode
    for key in ("sg", "arch_floor", "sr_gate", "archive_cap", "max_fe"):
        v = getattr(args, key)
        if v is not None:
            out[key] = v
    if args.s3_ungated:
        out["s3_gated"] = False
    if args.s1_feasible_gate:
        out["s1_feasible_gate"] = True
    for item in args.set:
        key, _, raw = item.partition("=")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def cmd_problems(args):
    rows = []
    for name in problem_names():
        e = suite_entry(name)
        lo, hi = e.dims
        dims = f"{lo}" if lo == hi else f"{lo}..{'inf' if hi is None else hi}"
        p = get_problem(name)
        fstar = p.known_best[0] if p.known_best else float("nan")
        rows.append(f"{name:<16} D={dims:<8} m_g={e.m_g:<2} m_h={e.m_h:<2} f*(D={p.dim})={fstar:.10g}"
                    f"  {e.description}")
    print("\n".join(rows))
    return 0


def cmd_solve(args):
    from .engine import run

    problem = get_problem(args.problem, args.dim)
    over = _overrides(args)
    cfg = Config.from_dict(over)
    res = run(problem, cfg, args.seed, K=args.K)
    out = {
        "problem": problem.name, "dim": problem.dim, "seed": args.seed,
        "f": res.best.f, "phi": res.best.phi, "feasible": res.feasible,
        "x": res.best.x.tolist(), "fe": res.fe, "generations": res.generations,
        "kicks": res.kicks,
    }
    print(json.dumps(out, indent=1))
    return 0


def cmd_run(args):
    with open(args.spec, encoding="utf-8") as fh:
        raw = json.load(fh)
    if args.seed is not None:
        raw["seed"] = args.seed
    over = _overrides(args)
    if over:
        raw["configs"] = {k: {**v, **over} for k, v in raw.get("configs", {"cask": {}}).items()}
    spec = ExperimentSpec.from_dict(raw)
    results = run_experiment(spec, workers=args.workers)
    emit(results, args.out, args.format)
    for row in qp_table(results):
        print(f"{row['problem']:<16} D={row['dim']:<3} {row['config']:<36} "
              f"Q={row['Q']}  TTT={row['TTT']}  feasible={row['feasible']}/{row['runs']}")
    if results.failed:
        for r in results.failed:
            print(f"FAILED {r.problem} D={r.dim} {r.config} run {r.run}: {r.status}",
                  file=sys.stderr)
        return 1
    return 0


def cmd_ttt(args):
    results = load_results(args.input)
    rows = score_runs(results, args.target_policy)
    if args.per_run:
        print(to_csv(rows, ["problem", "dim", "config", "run", "seed", "Q", "TTT"]), end="")
    else:
        summary = qp_table(results, args.target_policy)
        print(to_csv(summary, ["problem", "dim", "config", "runs", "TTT_mean", "TTT_sd", "TTT"]),
              end="")
    return 1 if results.failed else 0


def cmd_table(args):
    results = load_results(args.input)
    summary = qp_table(results)
    if args.format == "json":
        print(json.dumps(summary, indent=1))
    else:
        print(to_csv(summary, SUMMARY_COLUMNS), end="")
    return 1 if results.failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cask", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("problems", help="list the benchmark suite")
    sp.set_defaults(func=cmd_problems)

    sp = sub.add_parser("solve", help="single run on one problem")
    sp.add_argument("problem")
    sp.add_argument("--dim", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--K", type=int, default=2000)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("run", help="run an experiment spec")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("ttt", help="time-to-target from a result directory")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--target-policy", default=None,
                    help="per_config (default) or shared:<config name>")
    sp.add_argument("--per-run", action="store_true")
    sp.set_defaults(func=cmd_ttt)

    sp = sub.add_parser("table", help="Q_p / TTT summary from a result directory")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--format", choices=("csv", "json"), default="csv")
    sp.set_defaults(func=cmd_table)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (HarnessError, ValueError, OSError) as exc:
        print(f"cask: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
