"""Acceptance criteria; each test prints one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed with
capture disabled so they show up in the normal pytest output.
"""
import dataclasses
import math
import random
import time

import pytest

from griddisperse import adversaries
from griddisperse import protocol_byzantine as pbyz
from griddisperse import protocol_crash as pc
from griddisperse.campaign import random_config, random_crashes, random_placement, trial_rng
from griddisperse.grid import Dir, GridSpec, degree_of, entry_port, label_of_dir, neighbor, straight_exit
from griddisperse.sim_engine import SimConfig, run
from griddisperse.verify import enumerate_single_crash, reference_gates

EVEN_SIDES = (2, 4, 6, 8, 10, 12, 14, 16)
ODD_SIDES = (3, 5, 7, 9, 11, 13)
PLACEMENTS = SCHEDULES = 20
SLACK = 8


def announce(capsys, number, title, ok, detail):
    with capsys.disabled():
        print(f"\nCRITERION {number} {title}: {'PASS' if ok else 'FAIL'} ({detail})")


def crash_sweep():
    """Every criterion-1 run: side -> list of (rounds, bits, budget, dispersed, violations)."""
    out = {}
    for s in EVEN_SIDES + ODD_SIDES:
        grid = GridSpec(s, s)
        rows = out[s] = []
        for p in range(PLACEMENTS):
            rng = random.Random(f"c1:{s}:{p}")
            robots = random_placement(rng, grid, s * s)
            base = SimConfig(grid, "SquareCrash", robots, seed=p)
            horizon = reference_gates(base).g_deadline
            for k in range(SCHEDULES):
                sched = random_crashes(random.Random(f"c1:{s}:{p}:{k}"), robots, horizon)
                rep = run(dataclasses.replace(base, crash_schedule=sched))
                budget = pc.crash_budget(s * s, base.idmax)
                rows.append((rep.rounds_used, rep.max_memory_bits, budget, rep.dispersed, rep.violations))
    return out


@pytest.fixture(scope="module")
def crash_runs():
    t = time.perf_counter()
    runs = crash_sweep()
    return runs, time.perf_counter() - t


def test_criterion_1_crash_round_bound(crash_runs, capsys):
    runs, elapsed = crash_runs
    bad, worst = [], {}
    for s, rows in runs.items():
        bound = 7 * s + SLACK
        worst[s] = max(r[0] for r in rows) - 7 * s
        for rounds, _, _, dispersed, violations in rows:
            if not dispersed or rounds > bound:
                bad.append((s, rounds, violations[:1]))
    total = sum(len(r) for r in runs.values())
    detail = (
        f"{total} runs, {len(bad)} failing; worst rounds minus 7*sqrt(n) per side {worst}; "
        f"runtime {elapsed:.0f}s against an expected 120s"
    )
    announce(capsys, 1, "crash round bound", not bad, detail)
    assert not bad, bad[:3]


def test_criterion_2_exhaustive_single_crash(capsys):
    t = time.perf_counter()
    results = []
    for s in (4, 5):
        grid = GridSpec(s, s)
        n = s * s
        one_node = tuple((i, (1, 1)) for i in range(n))
        spots = ((0, 1), (1, s - 1), (s - 1, s - 2), (s - 2, 0))
        spread = tuple((i, spots[i % 4]) for i in range(n))
        for label, robots in (("one node", one_node), ("four nodes", spread)):
            summary = enumerate_single_crash(SimConfig(grid, "SquareCrash", robots))
            results.append((n, label, summary))
    elapsed = time.perf_counter() - t
    ok = all(r[2].failed == 0 for r in results)
    parts = ", ".join(f"n={n} {label}: {sm.passed}/{sm.total}" for n, label, sm in results)
    announce(capsys, 2, "exhaustive single crash", ok, f"{parts}; runtime {elapsed:.0f}s against an expected 60s")
    for n, label, sm in results:
        assert sm.failed == 0, (n, label, sm.counterexample, sm.violations)


def test_criterion_3_memory_bound(crash_runs, capsys):
    runs, _ = crash_runs
    peak = {s * s: max(r[1] for r in rows) for s, rows in runs.items()}
    # each run is held to the budget of its own id range
    over = {s * s: [(r[1], r[2]) for r in rows if r[1] > r[2]][:3] for s, rows in runs.items()}
    over = {n: v for n, v in over.items() if v}
    # growth per doubling, over every pair of sizes whose ratio is a power of two
    growth = {}
    for a in peak:
        for b in peak:
            ratio = b / a
            k = round(math.log2(ratio)) if ratio > 1 else 0
            if k >= 1 and 2**k == ratio:
                growth[(a, b)] = (peak[b] - peak[a]) / k
    steep = {pair: g for pair, g in growth.items() if g > 12}
    ok = not over and not steep
    detail = f"peak bits {dict(sorted(peak.items()))}; max growth per doubling {max(growth.values()):.1f} bits"
    announce(capsys, 3, "memory bound", ok, detail)
    assert not over, over
    assert not steep, steep


def byz_configs(s):
    n = s * s
    strategies = list(adversaries.SCRIPTED) + [f"random-{k}" for k in range(200)]
    for f in sorted({1, n // 4, n // 2}):
        for name in strategies:
            rng = random.Random(f"c4:{s}:{f}:{name}")
            robots = random_placement(rng, GridSpec(s, s), n)
            byz = frozenset(rng.sample([rid for rid, _ in robots], f))
            yield SimConfig(GridSpec(s, s), "SquareByz", robots, byzantine_ids=byz, byz_strategy=(name, rng.randrange(1 << 16)))


def test_criterion_4_byzantine(capsys):
    t = time.perf_counter()
    bad, count, peak = [], 0, {}
    for s in (4, 5, 6, 8):
        n = s * s
        for cfg in byz_configs(s):
            rep = run(cfg)
            count += 1
            coloc = [v for v in rep.violations if v["kind"] == "CoLocation"]
            budget = pbyz.byz_budget(n, cfg.idmax)
            peak[n] = max(peak.get(n, 0), rep.max_memory_bits)
            if coloc or rep.rounds_used > 7 * s + SLACK or rep.max_memory_bits > budget:
                bad.append((n, cfg.byz_strategy, len(cfg.byzantine_ids), rep.rounds_used, coloc[:1]))
    elapsed = time.perf_counter() - t
    detail = f"{count} runs, {len(bad)} failing; peak honest memory bits {peak}; runtime {elapsed:.0f}s"
    announce(capsys, 4, "Byzantine invariant", not bad, detail)
    assert not bad, bad[:3]


def test_criterion_5_degenerate_equivalence(capsys):
    mismatched = []
    for k in range(50):
        mode = "SquareCrash" if k % 2 == 0 else "RectCrash"
        crash_cfg = random_config(trial_rng(5, k), mode, 64, seed=k)
        byz_cfg = dataclasses.replace(crash_cfg, mode=mode.replace("Crash", "Byz"))
        a, b = run(crash_cfg), run(byz_cfg)
        if a.trace_hash != b.trace_hash:
            mismatched.append((k, a.trace_hash, b.trace_hash))
    announce(capsys, 5, "degenerate equivalence", not mismatched, f"50 configs, {len(mismatched)} hash mismatches")
    assert not mismatched


def test_criterion_6_rectangles(capsys):
    bad, worst = [], {}
    for ell, w in ((8, 4), (16, 4), (9, 3), (12, 6)):
        for h, wd in ((ell, w), (w, ell)):
            grid = GridSpec(h, wd)
            bound = 9 * ell + SLACK
            configs = [SimConfig(grid, "RectCrash", tuple((i, (0, 0)) for i in range(grid.n)))]
            for k in range(20):
                rng = random.Random(f"c6:{h}x{wd}:{k}")
                robots = random_placement(rng, grid, grid.n)
                base = SimConfig(grid, "RectCrash", robots, seed=k)
                sched = random_crashes(rng, robots, reference_gates(base).g_deadline) if k % 2 else ()
                configs.append(dataclasses.replace(base, crash_schedule=sched))
            for cfg in configs:
                rep = run(cfg)
                worst[(h, wd)] = max(worst.get((h, wd), 0), rep.rounds_used)
                if not rep.dispersed or rep.rounds_used > bound:
                    bad.append(((h, wd), rep.rounds_used, rep.violations[:1]))
    detail = f"{len(worst) * 21} runs, {len(bad)} failing; worst rounds {worst}"
    announce(capsys, 6, "rectangular grids", not bad, detail)
    assert not bad, bad[:3]


def test_criterion_7_determinism(capsys):
    differing = []
    for k in range(100):
        mode = pc.MODES[k % 4]
        cfg = random_config(trial_rng(7, k), mode, 64, seed=k)
        a, b = run(cfg), run(cfg)
        if a.to_json() != b.to_json() or a.trace_hash != b.trace_hash:
            differing.append(k)
    announce(capsys, 7, "determinism", not differing, f"100 configs, {len(differing)} differing")
    assert not differing


def check_grid(h, w):
    """Problems found on one grid: port bijectivity, symmetry, straight walks, census."""
    g = GridSpec(h, w)
    problems = []
    census = {2: 0, 3: 0, 4: 0}
    for r in range(h):
        for c in range(w):
            v = (r, c)
            d = degree_of(g, v)
            census[d] += 1
            seen = set()
            for p in range(1, d + 1):
                u = neighbor(g, v, p)
                seen.add(u)
                if neighbor(g, u, entry_port(g, v, u)) != v:
                    problems.append(("symmetry", v, p))
            if len(seen) != d:
                problems.append(("bijectivity", v))
            if d == 4:
                # the first step of a walk heading in each compass direction
                for dr, dc, dname in ((0, -1, Dir.W), (1, 0, Dir.S), (0, 1, Dir.E), (-1, 0, Dir.N)):
                    if neighbor(g, v, label_of_dir(0, dname)) != (r + dr, c + dc):
                        problems.append(("heading", v, dname))
    expect = {2: 4, 3: 2 * (h - 2) + 2 * (w - 2), 4: (h - 2) * (w - 2)}
    if census != expect:
        problems.append(("census", census, expect))
    # every straight walk from an internal node is a suffix of one of these
    starts = []
    for r in range(1, h - 1):
        starts += [((r, 0), (r, 1)), ((r, w - 1), (r, w - 2))]
    for c in range(1, w - 1):
        starts += [((0, c), (1, c)), ((h - 1, c), (h - 2, c))]
    for prev, cur in starts:
        moves = 0
        fixed = prev[0] if prev[0] == cur[0] else None
        while degree_of(g, cur) == 4:
            nxt = neighbor(g, cur, straight_exit(4, entry_port(g, prev, cur)))
            moves += 1
            if (fixed is not None and nxt[0] != fixed) or (fixed is None and nxt[1] != prev[1]):
                problems.append(("straight", prev, cur, nxt))
                break
            prev, cur = cur, nxt
        if moves > max(h, w) - 1:
            problems.append(("walk length", prev, moves))
    return problems


def test_criterion_8_grid_oracle(capsys):
    t = time.perf_counter()
    failing = {}
    for h in range(2, 65):
        for w in range(2, 65):
            problems = check_grid(h, w)
            if problems:
                failing[(h, w)] = problems[:2]
    elapsed = time.perf_counter() - t
    announce(capsys, 8, "grid oracle properties", not failing, f"{63 * 63} grids, {len(failing)} failing; runtime {elapsed:.0f}s")
    assert not failing, list(failing.items())[:2]
