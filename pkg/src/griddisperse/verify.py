"""Post-hoc checks: dispersion, round and memory bounds, trace replay, crash enumeration."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field

from . import protocol_byzantine as pbyz
from . import protocol_crash as pc
from .grid import GridSpec, MASK_CORNER, SW, absent_mask, corner_node, neighbor
from .errors import NoSuchPort

ROUND_SLACK = 8
VIOLATION_KINDS = ("CoLocation", "RoundBound", "MemoryBound", "IllegalMove", "GateMiss", "Unsettled", "HashMismatch")


@dataclass(frozen=True)
class Violation:
    kind: str
    robots: tuple = ()
    nodes: tuple = ()
    round: int | None = None
    detail: str = ""

    def __post_init__(self):
        if not self.robots and not self.nodes:
            raise ValueError("a violation must name a robot or a node")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "robots": list(self.robots),
            "nodes": [list(n) for n in self.nodes],
            "round": self.round,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Violation":
        return cls(
            d["kind"],
            tuple(d.get("robots", ())),
            tuple(tuple(n) for n in d.get("nodes", ())),
            d.get("round"),
            d.get("detail", ""),
        )


def check_dispersion(placements) -> list[Violation]:
    """``placements`` is an iterable of (robot, (row, col), settled) for non-faulty robots."""
    by_node: dict = {}
    out = []
    unsettled = []
    for rid, pos, settled in placements:
        by_node.setdefault(tuple(pos), []).append(rid)
        if not settled:
            unsettled.append((rid, tuple(pos)))
    for node in sorted(by_node):
        ids = sorted(by_node[node])
        if len(ids) > 1:
            out.append(Violation("CoLocation", tuple(ids), (node,)))
    for rid, pos in sorted(unsettled):
        out.append(Violation("Unsettled", (rid,), (pos,)))
    return out


def round_bound(grid: GridSpec, mode: str) -> int:
    if mode.startswith("Rect"):
        return 9 * grid.longest + ROUND_SLACK
    return 7 * grid.height + ROUND_SLACK


def memory_budget(n: int, idmax: int, mode: str) -> int:
    if mode in pc.BYZ_MODES:
        return pbyz.byz_budget(n, idmax)
    return pc.crash_budget(n, idmax)


def _rounds_used(report):
    return report["rounds_used"] if isinstance(report, dict) else report.rounds_used


def _max_bits(report):
    return report["max_memory_bits"] if isinstance(report, dict) else report.max_memory_bits


def check_round_bound(report, grid: GridSpec, mode: str) -> list[Violation]:
    bound = round_bound(grid, mode)
    used = _rounds_used(report)
    if used > bound:
        return [Violation("RoundBound", nodes=((0, 0),), round=used, detail=f"{used} rounds > bound {bound}")]
    return []


def check_memory_bound(report, n: int, idmax: int, mode: str) -> list[Violation]:
    budget = memory_budget(n, idmax, mode)
    bits = _max_bits(report)
    if bits > budget:
        return [Violation("MemoryBound", nodes=((0, 0),), detail=f"{bits} bits > budget {budget}")]
    return []


def reference_gates(config) -> pc.GateTable:
    """Gate table of the unmodified protocol, whatever ``gate_shift`` says."""
    g = config.grid
    return pc.compute_gates(g.height, g.width, None, config.mode.startswith("Rect"), ())


def gate_expectations(config):
    """round -> (name, predicate over (grid, node)) that every live honest robot must meet."""
    grid = config.grid
    gates = reference_gates(config)

    def at_corner(node):
        return absent_mask(grid, node) in MASK_CORNER

    centre = ((grid.height - 1) // 2, (grid.width - 1) // 2)
    sw = tuple(corner_node(grid, SW))
    out = {gates.g_meet: ("g_meet", at_corner)}
    if gates.g_columns_even is not None and config.mode in pc.CRASH_MODES:
        out[gates.g_columns_even] = ("g_columns_even", at_corner)
    if gates.g_to_corner is not None:
        out[gates.g_to_corner] = ("g_to_corner", lambda node: tuple(node) == centre)
        out[gates.g_columns_odd] = ("g_columns_odd", lambda node: tuple(node) == sw)
    return out


def _parse_action(action: str):
    if action.startswith("move:"):
        return "move", int(action[5:])
    return action, 0


def trace_hash(records) -> str:
    """Recompute the engine's digest from trace records."""
    from .sim_engine import ACTION_CODE, SUBSTEP_CODE, hash_round, pack_row

    h = hashlib.blake2b(digest_size=8)
    by_round: dict = {}
    for rec in records:
        kind, port = _parse_action(rec.action)
        packed = pack_row(SUBSTEP_CODE[rec.substep], rec.robot, rec.row, rec.col, ACTION_CODE[kind], port, int(rec.crashed))
        by_round.setdefault(rec.round, []).append((rec.robot, packed))
    for rnd in sorted(by_round):
        hash_round(h, rnd, (p for _, p in sorted(by_round[rnd])))
    return h.hexdigest()


def validate_trace(records, config, expected_hash: str | None = None) -> list[Violation]:
    """Replay ``records`` against ``config``'s start positions and gate table."""
    grid = config.grid
    byz = config.byzantine_ids
    pos = {rid: tuple(p) for rid, p in config.robots}
    gone = set()
    settled = set()
    out = []
    gates = gate_expectations(config)
    by_round: dict = {}
    for rec in records:
        by_round.setdefault(rec.round, []).append(rec)
    expected_round = 0
    for rnd in sorted(by_round):
        if rnd != expected_round:
            out.append(Violation("IllegalMove", nodes=((0, 0),), round=rnd, detail=f"round {expected_round} missing"))
        expected_round = rnd + 1
        if rnd in gates:
            name, ok = gates[rnd]
            early = {r.robot for r in by_round[rnd] if r.crashed and r.substep == "StartOfRound"}
            for rid in sorted(pos):
                if rid not in gone and rid not in byz and rid not in early and not ok(pos[rid]):
                    out.append(Violation("GateMiss", (rid,), (pos[rid],), rnd, f"not in place at {name}"))
        for rec in by_round[rnd]:
            rid = rec.robot
            if rid not in pos:
                out.append(Violation("IllegalMove", (rid,), ((rec.row, rec.col),), rnd, "unknown robot"))
                continue
            here = (rec.row, rec.col)
            if rid in gone:
                out.append(Violation("IllegalMove", (rid,), (here,), rnd, "activity after crash"))
                continue
            kind, port = _parse_action(rec.action)
            prev = pos[rid]
            if rec.crashed or kind == "crash":
                if here != prev:
                    out.append(Violation("IllegalMove", (rid,), (prev, here), rnd, "moved while crashing"))
                gone.add(rid)
                continue
            if kind == "move":
                if rid in settled and rid not in byz:
                    out.append(Violation("IllegalMove", (rid,), (prev, here), rnd, "moved after settling"))
                try:
                    target = tuple(neighbor(grid, prev, port))
                except NoSuchPort:
                    target = None
                if target != here:
                    out.append(Violation("IllegalMove", (rid,), (prev, here), rnd, f"port {port} does not lead here"))
            elif here != prev:
                out.append(Violation("IllegalMove", (rid,), (prev, here), rnd, f"{kind} changed position"))
            if kind == "settle":
                settled.add(rid)
            pos[rid] = here
    if expected_hash is not None:
        got = trace_hash(records)
        if got != expected_hash:
            out.append(Violation("HashMismatch", nodes=((0, 0),), detail=f"header {expected_hash}, recomputed {got}"))
    return out


@dataclass
class EnumerationSummary:
    total: int = 0
    passed: int = 0
    failed: int = 0
    counterexample: dict | None = None
    violations: list = field(default_factory=list)


def full_check(config, report) -> list:
    """Every check the CLI applies to a finished run, as violation dicts."""
    v = list(report.violations)
    v += [x.to_dict() for x in check_round_bound(report, config.grid, config.mode)]
    v += [x.to_dict() for x in check_memory_bound(report, config.grid.n, config.idmax, config.mode)]
    return v


def enumerate_single_crash(base, substeps=None) -> EnumerationSummary:
    """Run the base config plus every single-crash schedule up to the deadline gate."""
    from .sim_engine import SUBSTEPS, CrashEvent, run

    substeps = substeps or SUBSTEPS
    deadline = reference_gates(base).g_deadline
    schedules = [()]
    for rid, _ in base.robots:
        for rnd in range(deadline + 1):
            for sub in substeps:
                schedules.append((CrashEvent(rid, rnd, sub),))
    summary = EnumerationSummary()
    for sched in schedules:
        cfg = dataclasses.replace(base, crash_schedule=sched)
        report = run(cfg)
        bad = full_check(cfg, report)
        summary.total += 1
        if bad:
            summary.failed += 1
            if summary.counterexample is None:
                summary.counterexample = cfg.to_dict()
                summary.violations = bad
        else:
            summary.passed += 1
    return summary
