"""Randomized configurations, sweeps and fuzzing campaigns.

Everything here is driven by an explicit seed so that a rerun reproduces the
same configs, reports and counterexamples.
"""
from __future__ import annotations

import dataclasses
import math
import random
from dataclasses import dataclass

from . import adversaries
from . import protocol_crash as pc
from .grid import GridSpec
from .sim_engine import SUBSTEPS, CrashEvent, Report, SimConfig, run_with_state
from .verify import full_check, memory_budget, reference_gates, round_bound


def checked_run(config: SimConfig, strategy=None) -> Report:
    """Run ``config`` and fold the round and memory checks into the report."""
    return checked_run_with_state(config, strategy)[0]


def checked_run_with_state(config: SimConfig, strategy=None):
    report, state = run_with_state(config, strategy)
    report.violations = full_check(config, report)
    report.dispersed = not report.violations
    return report, state


def trial_rng(seed: int, trial: int) -> random.Random:
    return random.Random(f"{seed}:{trial}")


def random_placement(rng: random.Random, grid: GridSpec, k: int, clustered: bool | None = None) -> tuple:
    """k robots with distinct ids; either uniform or packed onto up to four nodes."""
    ids = sorted(rng.sample(range(2 * grid.n), k))
    nodes = [(r, c) for r in range(grid.height) for c in range(grid.width)]
    if clustered is None:
        clustered = rng.random() < 0.5
    pool = rng.sample(nodes, rng.randint(1, 4)) if clustered else nodes
    return tuple((rid, rng.choice(pool)) for rid in ids)


def random_crashes(rng: random.Random, robots: tuple, horizon: int, fraction: float | None = None) -> tuple:
    """Crash a random fraction (0 to 1) of ``robots`` at random rounds and substeps."""
    if fraction is None:
        fraction = rng.random()
    victims = rng.sample([rid for rid, _ in robots], round(fraction * len(robots)))
    return tuple(CrashEvent(rid, rng.randint(0, horizon), rng.choice(SUBSTEPS)) for rid in victims)


def random_strategy(rng: random.Random) -> tuple:
    pool = list(adversaries.SCRIPTED) + ["random"]
    name = rng.choice(pool)
    if name == "random":
        name = f"random-{rng.randrange(10_000)}"
    return (name, rng.randrange(10_000))


def grid_for(rng: random.Random, mode: str, max_n: int) -> GridSpec:
    if mode.startswith("Square"):
        side = rng.randint(2, max(2, math.isqrt(max_n)))
        return GridSpec(side, side)
    long_side = rng.randint(2, max(2, max_n // 2))
    short = rng.randint(2, max(2, min(long_side, max_n // long_side)))
    return GridSpec(long_side, short) if rng.random() < 0.5 else GridSpec(short, long_side)


def random_config(rng: random.Random, mode: str, max_n: int, seed: int = 0) -> SimConfig:
    grid = grid_for(rng, mode, max_n)
    k = rng.randint(1, grid.n)
    robots = random_placement(rng, grid, k)
    base = SimConfig(grid, mode, robots, seed=seed)
    if mode in pc.CRASH_MODES:
        return dataclasses.replace(base, crash_schedule=random_crashes(rng, robots, reference_gates(base).g_deadline))
    f = rng.randint(1, max(1, k // 2))
    byz = frozenset(rng.sample([rid for rid, _ in robots], f)) if k > 1 else frozenset()
    return dataclasses.replace(base, byzantine_ids=byz, byz_strategy=random_strategy(rng))


def shrink(config: SimConfig, fails) -> SimConfig:
    """Greedy single-event removal: drop crash events while ``fails`` stays true."""
    current = config
    changed = True
    while changed:
        changed = False
        for i in range(len(current.crash_schedule)):
            sched = current.crash_schedule[:i] + current.crash_schedule[i + 1:]
            candidate = dataclasses.replace(current, crash_schedule=sched)
            if fails(candidate):
                current = candidate
                changed = True
                break
    return current


@dataclass
class FuzzResult:
    trials: int
    failures: int
    counterexample: SimConfig | None = None
    violations: list | None = None


def fuzz(mode: str, max_n: int, trials: int, seed: int) -> FuzzResult:
    """Run ``trials`` random configs; stop at the first failure and shrink it."""
    if mode not in pc.MODES:
        raise ValueError(f"unknown mode {mode!r}")
    for t in range(trials):
        cfg = random_config(trial_rng(seed, t), mode, max_n, seed=seed)
        report = checked_run(cfg)
        if report.violations:
            small = shrink(cfg, lambda c: bool(checked_run(c).violations))
            return FuzzResult(t + 1, 1, small, checked_run(small).violations)
    return FuzzResult(trials, 0)


SWEEP_HEADER = ("n", "mode", "seed", "rounds", "bound", "mem_bits", "mem_budget", "pass")


def parse_size(text: str) -> GridSpec:
    """``16`` is a 4x4 square; ``8x4`` is an 8 by 4 rectangle."""
    text = text.strip().lower()
    if "x" in text:
        h, w = text.split("x", 1)
        return GridSpec(int(h), int(w))
    n = int(text)
    side = math.isqrt(n)
    if side * side != n:
        raise ValueError(f"{n} is not a perfect square; write HxW for rectangles")
    return GridSpec(side, side)


def sweep_config(grid: GridSpec, mode: str, seed: int) -> SimConfig:
    """Full occupancy, random placement; crash modes also get random crashes."""
    rng = random.Random(f"sweep:{grid.height}x{grid.width}:{mode}:{seed}")
    robots = random_placement(rng, grid, grid.n)
    base = SimConfig(grid, mode, robots, seed=seed)
    if mode in pc.CRASH_MODES:
        return dataclasses.replace(base, crash_schedule=random_crashes(rng, robots, reference_gates(base).g_deadline))
    f = max(1, grid.n // 4)
    byz = frozenset(rng.sample([rid for rid, _ in robots], f))
    name = adversaries.SCRIPTED[seed % len(adversaries.SCRIPTED)]
    return dataclasses.replace(base, byzantine_ids=byz, byz_strategy=(name, seed))


def sweep_row(grid: GridSpec, mode: str, seed: int) -> tuple:
    cfg = sweep_config(grid, mode, seed)
    report = checked_run(cfg)
    return (
        grid.n,
        mode,
        seed,
        report.rounds_used,
        round_bound(grid, mode),
        report.max_memory_bits,
        memory_budget(grid.n, cfg.idmax, mode),
        "pass" if not report.violations else "fail",
    ), cfg
