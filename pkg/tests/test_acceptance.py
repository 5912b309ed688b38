"""Acceptance suite: one test per criterion, each under its time limit.

A ``[PASS]``/``[FAIL]`` line per criterion is printed in the terminal summary
(see ``conftest.py``).
"""

import csv
import hashlib
import json
import math
import time

import numpy as np
import pytest

from cask.adaptation import (
    EpsSchedule,
    GenStats,
    HybridRate,
    SuccessMemory,
    epsilon_level,
    mu_f_centre,
    success_rate,
    update_memory,
    update_rho_eb,
)
from cask.archive import Archive, arch_probability, push_gated
from cask.engine import (
    Config,
    bound_repair,
    eb_donor,
    epsilon_select,
    front_size,
    run,
    standard_donor,
)
from cask.harness import (
    ExperimentSpec,
    emit,
    first_hit,
    load_results,
    mean_sd,
    qp_table,
    run_experiment,
    score_runs,
)
from cask.problem import EvaluatedPoint, get_problem, q_metric, violation
from cask.randdist import make_rng, rank_biased_pick, trunc_cauchy, trunc_normal
from cask.stagnation import StagnationState, compute_overrides, tick

REL = 1e-12


def close(a, b, rel=REL):
    return math.isclose(a, b, rel_tol=rel, abs_tol=0.0 if b != 0 else 1e-300)


class Clock:
    def __init__(self, limit):
        self.limit = limit

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0
        if exc[0] is None:
            assert self.elapsed < self.limit, f"took {self.elapsed:.1f}s, limit {self.limit}s"


def _point(phi, f=0.0):
    return EvaluatedPoint(x=np.zeros(1), f=f, g=np.array([phi]), h=np.zeros(0), phi=phi)


def trace_digest(res):
    h = hashlib.sha256()
    for a in (res.trace.best_f, res.trace.best_phi, res.best.x):
        h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
    h.update(str(res.fe).encode())
    return h.hexdigest()


# ---------------------------------------------------------------------------


def test_criterion_01_equation_unit_suite():
    with Clock(1.0):
        # averaged violation
        assert violation([-1.0, -0.2], []) == 0.0
        assert close(violation([0.5, -1.0], [5e-4]), (0.5 + 4e-4) / 3)
        assert round(violation([0.5, -1.0], [5e-4]), 4) == 0.1668
        assert violation([], [1e-4]) == 0.0
        # quality metric
        assert q_metric(_point(0.0, 3.2)) == 3.2
        assert close(q_metric(_point(0.4, 1.0), B_p=10.0), 10.4)
        # archive probability and floor
        assert close(arch_probability(50, 100), 1 / 3)
        assert arch_probability(50, 100, stagnated=True) == 0.65
        assert arch_probability(0, 100, stagnated=True) == 0.0
        # override truth table
        assert compute_overrides(179, 180, 0.05) == compute_overrides(0, 180, 0.0)
        o = compute_overrides(179, 180, 0.05)
        assert (o.use_global_best, o.arch_floor_active, o.cr_saturate) == (False, False, False)
        o = compute_overrides(180, 180, 0.05)
        assert (o.use_global_best, o.arch_floor_active, o.cr_saturate) == (True, True, True)
        o = compute_overrides(180, 180, 0.50)
        assert (o.use_global_best, o.arch_floor_active, o.cr_saturate) == (True, True, False)
        # F centre
        for mode in ("cask", "baseline"):
            assert mu_f_centre(0.0, mode) == 0.0 and mu_f_centre(1.0, mode) == 1.0
        assert close(mu_f_centre(0.32, "cask"), 0.32 ** 0.4)
        assert abs(mu_f_centre(0.32, "cask") - 0.6339) < 1e-4
        # memory update
        mem = SuccessMemory.new(10)
        update_memory(mem, np.array([[0.6, 0.6, 0.3, 1.0]]))
        assert (mem.M_F[0], mem.M_CR[0]) == (0.6, 0.3)
        mem = SuccessMemory.new(10)
        update_memory(mem, np.array([[0.2, 0.2, 0.5, 1.0], [0.4, 0.4, 0.5, 1.0]]))
        assert close(mem.M_F[0], (0.04 + 0.16) / (0.2 + 0.4))
        # hybrid rate, both branches
        assert close(update_rho_eb(HybridRate(0.5, 0.5), 0.9, 1.0, 1.0).rho, 0.62)
        assert close(update_rho_eb(HybridRate(0.62, 0.5), 1.0, 1.0, 0.0).rho, 0.9 * 0.62 + 0.05)
        assert update_rho_eb(HybridRate(0.5, 0.5), 0.0, 0.0, 1.0).rho == 0.5
        # epsilon schedule and success rate
        sched = EpsSchedule(eps0=2.0)
        assert epsilon_level(sched, 0.0) == 2.0 and epsilon_level(sched, 0.85) == 0.0
        assert close(epsilon_level(sched, 0.425), 0.03125)
        assert success_rate(GenStats(50, 0)) == 0.0 and success_rate(GenStats(50, 50)) == 1.0
        assert close(success_rate(GenStats(40, 7)), 0.175)
        # donors
        x = np.array([1.0, -2.0])
        assert np.array_equal(standard_donor(x, x + 1, x + 2, x - 3, 0.0, 0.0), x)
        r1, r2 = np.array([3.0, 1.0]), np.array([0.5, 2.0])
        assert np.allclose(standard_donor(x, x, r1, r2, 0.4, 0.3), x + 0.3 * (r1 - r2),
                           rtol=REL, atol=0)
        v = standard_donor(np.array([1.0]), np.array([3.0]), np.array([2.0]), np.array([0.0]),
                           0.5, 0.2)
        assert close(v[0], 2.4)
        best = np.array([4.0, 0.0])
        assert np.allclose(eb_donor(x, best, x + 7, x + 7, 0.5), x + 0.5 * (best - x),
                           rtol=REL, atol=0)
        assert np.array_equal(eb_donor(x, best, x + 1, x - 1, 0.0), x)
        v = eb_donor(np.array([0.0]), np.array([4.0]), np.array([2.0]), np.array([1.0]), 0.5)
        assert close(v[0], 2.5)
        # repair and selection
        out = bound_repair(np.array([-5.0]), np.array([2.0]), np.array([0.0]), np.array([10.0]))
        assert out[0] == 1.0
        assert epsilon_select(0.0, 5.0, 0.0, 4.0, 0.1)
        assert epsilon_select(0.5, -9.0, 0.3, 9.0, 0.1)
        assert not epsilon_select(0.08, 4.0, 0.05, 5.0, 0.1)
        # reduction schedule
        assert front_size(90, 4, 0, 1000) == 90
        assert front_size(90, 4, 1000, 1000) == 4
        assert front_size(90, 4, 500, 1000) == 47


def test_criterion_02_distribution_suite():
    n = 10 ** 6
    with Clock(30.0):
        rng = make_rng(20)
        samples = {}
        for mu in (0.0, 0.5, 0.95, 1.3):
            for name, fn, scale in (("normal", trunc_normal, 0.1), ("cauchy", trunc_cauchy, 0.1)):
                s = fn(mu, scale, 0.0, 1.0, rng, size=n)
                assert s.shape == (n,)
                assert s.min() >= 0.0 and s.max() <= 1.0, (name, mu)
                samples[(name, mu)] = s
        assert abs(np.median(samples[("cauchy", 0.5)]) - 0.5) <= 0.02
        s = trunc_normal(0.5, 0.05, 0.0, 1.0, rng, size=n)
        assert 0.49 <= s.mean() <= 0.51
        tail_c = np.mean(np.abs(samples[("cauchy", 0.5)] - 0.5) > 0.3)
        tail_n = np.mean(np.abs(samples[("normal", 0.5)] - 0.5) > 0.3)
        assert tail_c > tail_n
        assert trunc_normal(0.5, 0.0, 0.0, 1.0, rng) == 0.5
        assert trunc_normal(1.5, 0.0, 0.0, 1.0, rng) == 1.0
        k = rank_biased_pick(10, 3.0, rng.random(n))
        counts = np.bincount(k, minlength=10)
        ratio = counts[0] / counts[9]
        assert abs(ratio / math.exp(2.7) - 1) < 0.2


def test_criterion_03_archive_suite():
    with Clock(5.0):
        rng = np.random.default_rng(3)
        arch = Archive(50, 1)
        stored = []
        for k in range(10 ** 4):
            phi, eps = float(rng.choice([0.0, rng.random()])), float(rng.random() * 0.5)
            p = EvaluatedPoint(x=np.array([float(k)]), f=0.0, g=np.array([phi]),
                               h=np.zeros(0), phi=phi)
            if push_gated(arch, p, eps, generation=k):
                stored.append(k)
            else:
                assert phi > eps
            assert arch.size <= 50
        for e in arch.entries():
            assert e.point.phi <= e.eps
        # FIFO: the archive holds exactly the last 50 admitted pushes
        assert sorted(int(e.point.x[0]) for e in arch.entries()) == stored[-50:]
        ring = Archive(50, 1)
        for k in range(51):
            push_gated(ring, _point(0.0, float(k)), 0.0)
        assert ring.size == 50 and ring.slots[0].point.f == 50.0
        assert [ring.slots[i].point.f for i in range(1, 50)] == [float(i) for i in range(1, 50)]
        assert not push_gated(ring, _point(0.2), 0.1)
        ungated = Archive(50, 1)
        assert push_gated(ungated, _point(0.2), 0.1, gate_on=False)
        assert ungated.entries()[0].point.phi > ungated.entries()[0].eps


def test_criterion_04_stagnation_suite():
    with Clock(5.0):
        rng = np.random.default_rng(4)
        SG = 180
        st = StagnationState.new(30, SG)
        ref = [0] * 30
        for _ in range(2000):
            acc = rng.random(30) < 0.05
            tick(st, np.arange(30), acc)
            ref = [0 if a else s + 1 for s, a in zip(ref, acc)]
            assert st.sigma.tolist() == ref
        one = StagnationState(np.array([179]), SG)
        assert tick(one, 0, True).sigma[0] == 0
        one = StagnationState(np.array([179]), SG)
        assert tick(one, 0, False).sigma[0] == 180
        assert StagnationState.new(5).sigma.tolist() == [0] * 5
        for sigma, sr, expect in ((SG - 1, 0.05, (0, 0, 0)), (SG, 0.05, (1, 1, 1)),
                                  (SG, 0.50, (1, 1, 0)), (SG - 1, 0.50, (0, 0, 0)),
                                  (SG + 40, 0.0999, (1, 1, 1)), (SG, 0.10, (1, 1, 0))):
            o = compute_overrides(sigma, SG, sr)
            assert (o.use_global_best, o.arch_floor_active, o.cr_saturate) == \
                tuple(map(bool, expect))
        # counters follow their members through 100 reduction steps
        N0, steps = 200, 100
        st = StagnationState.new(N0, 3)
        ids = np.arange(N0)
        shadow = {i: 0 for i in range(N0)}
        for step in range(1, steps + 1):
            acc = rng.random(ids.size) < 0.2
            tick(st, np.arange(ids.size), acc)
            for i, a in zip(ids.tolist(), acc.tolist()):
                shadow[i] = 0 if a else shadow[i] + 1
            target = front_size(N0, 4, step, steps)
            keep = np.zeros(ids.size, dtype=bool)
            keep[rng.permutation(ids.size)[:target]] = True
            st.keep(keep)
            for i in ids[~keep].tolist():
                del shadow[i]
            ids = ids[keep]
            assert len(st) == ids.size == target == len(shadow)
            assert st.sigma.tolist() == [shadow[i] for i in ids.tolist()]
        assert len(st) == 4


GOLDEN = {
    ("sphere-lineq", 5): "4c8e433ba69eefefd950aac7e3a3b259f512dbb2efe905a92f6358af29edf9b1",
    ("G06", 2): "116a05357e51c5810ff1899dd27a6d0bee5136782d66e9abded2c022ae90eb3a",
}


def test_criterion_05_determinism(tmp_path):
    with Clock(60.0):
        for (name, dim), expected in GOLDEN.items():
            p = get_problem(name, dim)
            a = run(p, Config(max_fe=20000), 2026)
            b = run(p, Config(max_fe=20000), 2026)
            assert a.to_dict() == b.to_dict()
            assert trace_digest(a) == trace_digest(b)
            # frozen on the reference machine; a mismatch elsewhere means the
            # stream is not portable
            assert trace_digest(a) == expected, name
        spec = ExperimentSpec.from_dict({
            "problems": [["G06", 2], ["sphere-lineq", 3]],
            "configs": {"cask": {"max_fe": 3000}, "baseline": {"mode": "baseline",
                                                               "max_fe": 3000}},
            "runs_per_cell": 3, "K": 100, "seed": 99})
        emit(run_experiment(spec), tmp_path / "a")
        emit(run_experiment(spec), tmp_path / "b")
        for f in sorted((tmp_path / "a").rglob("*")):
            if f.is_file() and f.name != "environment.json":
                rel = f.relative_to(tmp_path / "a")
                assert f.read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel


def test_criterion_06_desk_scale_optimization():
    with Clock(300.0):
        for name, dim in (("sphere-lineq", 5), ("rosenbrock-disk", 2)):
            p = get_problem(name, dim)
            f_star = p.known_best[0]
            for seed in range(25):
                res = run(p, Config(), seed, audit=True)
                assert res.best.phi == 0.0, (name, seed)
                assert abs(res.best.f - f_star) <= 1e-4, (name, seed, res.best.f)


def test_criterion_07_scope_rule_metamorphic():
    with Clock(60.0):
        p = get_problem("G07")
        on, off = [], []
        base = dict(max_fe=12000, sg=3, force_branch="eb")
        run(p, Config(stagnation_on=True, **base), 5, callback=on.append)
        run(p, Config(stagnation_on=False, **base), 5, callback=off.append)
        assert len(on) == len(off) > 0
        assert sum(int(r.stagnated.sum()) for r in on) > 0
        for a, b in zip(on, off):
            assert np.array_equal(a.trials, b.trials)
            assert not a.overrides_fired.any()
        # control: on the standard branch the same switch does change the trials
        on, off = [], []
        base["force_branch"] = "standard"
        run(p, Config(stagnation_on=True, **base), 5, callback=on.append)
        run(p, Config(stagnation_on=False, **base), 5, callback=off.append)
        assert any(not np.array_equal(a.trials, b.trials) for a, b in zip(on, off))


def test_criterion_08_harness_protocol(tmp_path):
    from cask.harness import ResultSet, RunRecord

    with Clock(10.0):
        assert first_hit(np.full(2000, 3.0), 1.0) == 2001
        assert first_hit([9, 6, 5, 5], 5) == 3
        spec = ExperimentSpec(problems=[("P", 2)], configs={"c": Config()}, runs_per_cell=3,
                              K=4)
        recs = [RunRecord("P", 2, "c", r, spec.run_seed(r), "ok", f, phi, 10,
                          [f] * 4, [phi] * 4, [1, 2, 3, 4])
                for r, (f, phi) in enumerate([(1.0, 0.0), (3.0, 0.0), (2.5, 0.5)])]
        rows = score_runs(ResultSet(spec, recs))
        assert rows[2]["B_p"] == 4.0
        assert [r["Q"] for r in rows] == [1.0, 3.0, 4.0 + 0.5]
        assert mean_sd([1, 2, 3])[1] == 1.0

        real = ExperimentSpec.from_dict({"problems": [["G24", 2]],
                                         "configs": {"cask": {"max_fe": 400}},
                                         "runs_per_cell": 25, "K": 2000, "seed": 1})
        res = run_experiment(real)
        emit(res, tmp_path)
        with open(tmp_path / "runs.csv", newline="") as fh:
            runs = list(csv.DictReader(fh))
        with open(tmp_path / "summary.csv", newline="") as fh:
            summary = list(csv.DictReader(fh))
        assert len(runs) == 25 and len(summary) == 1
        for col, key in (("Q", "Q"), ("TTT", "TTT")):
            m, sd = mean_sd([float(r[col]) for r in runs])
            for got, want in ((m, summary[0][f"{key}_mean"]), (sd, summary[0][f"{key}_sd"])):
                assert abs(got - float(want)) <= 1e-12 * max(1.0, abs(got))
        assert all(1 <= int(r["TTT"]) <= 2001 for r in runs)
        assert qp_table(load_results(tmp_path)) == qp_table(res)


def test_criterion_09_ablation_grid_smoke(tmp_path):
    with Clock(600.0):
        spec = ExperimentSpec.from_dict({
            "problems": [["sphere-lineq", 5]],
            "configs": {"cask": {}},
            "axes": {"archive_cap": [20, 30, 50, 100, 300]},
            "runs_per_cell": 5, "K": 2000, "seed": 0, "audit": True,
            "reference": "cask[archive_cap=50]",
        })
        res = run_experiment(spec)
        assert not res.failed, [r.status for r in res.failed]
        assert len(res.records) == 25
        emit(res, tmp_path)
        with open(tmp_path / "deltas.csv", newline="") as fh:
            deltas = list(csv.DictReader(fh))
        assert len(deltas) == 4 * 5
        for row in deltas:
            ref_seed = spec.run_seed(int(row["run"]))
            assert int(row["seed"]) == ref_seed
            assert math.isclose(float(row["delta"]), float(row["Q"]) - float(row["Q_ref"]),
                                rel_tol=0, abs_tol=1e-12)
        with open(tmp_path / "deltas_summary.csv", newline="") as fh:
            summary = list(csv.DictReader(fh))
        assert len(summary) == 4
        for row in summary:
            assert int(row["wins"]) + int(row["losses"]) + int(row["ties"]) == 5
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["failed"] == []
        # audit=True already enforced the per-generation invariants inside every run
        for r in res.records:
            assert 100000 - 90 <= r.fe <= 100000
            phi = np.asarray(r.best_phi)
            assert np.all(np.diff(phi) <= 0)
            feas = phi == 0.0
            assert np.all(np.diff(np.asarray(r.best_f)[feas]) <= 0)
