"""Lockstep Communicate-Compute-Move scheduler with crash and Byzantine injection.

Each round runs six sub-steps: start-of-round crashes, Communicate (every
robot snapshots the memories at its node), after-communicate crashes,
Compute, before-move crashes and Move. Moves are applied simultaneously from
the pre-round positions, so the order in which robots are evaluated cannot
be observed.
"""
from __future__ import annotations

import hashlib
import json
import logging
import random
import struct
from dataclasses import asdict, dataclass, field
from collections.abc import Mapping
from functools import cached_property, lru_cache
from typing import Callable

from . import adversaries
from . import protocol_byzantine as pbyz
from . import protocol_crash as pc
from .errors import ConfigError, ParseError, ProtocolViolation, RegisterOverflow
from .grid import GridSpec, absent_mask, dir_of_label, DELTA, label_of_dir, opposite

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SUBSTEPS = ("StartOfRound", "AfterCommunicate", "BeforeMove")
MOVE_SUBSTEP = "Move"
SUBSTEP_CODE = {"StartOfRound": 0, "AfterCommunicate": 1, "BeforeMove": 2, "Move": 3}
ACTION_CODE = {"stay": 0, "move": 1, "settle": 2, "crash": 3}


@dataclass(frozen=True)
class CrashEvent:
    robot: int
    round: int
    substep: str = "StartOfRound"


@dataclass(frozen=True)
class SimConfig:
    grid: GridSpec
    mode: str
    robots: tuple  # ((id, (row, col)), ...)
    byzantine_ids: frozenset = frozenset()
    crash_schedule: tuple = ()
    byz_strategy: tuple = ("stay-put", 0)
    max_rounds: int | None = None
    trace: bool = False
    seed: int = 0
    gate_shift: tuple = ()

    def __post_init__(self):
        validate_config(self)

    @cached_property
    def idmax(self) -> int:
        return max((rid for rid, _ in self.robots), default=0)

    @property
    def params(self) -> pc.ProtocolParams:
        return pc.params_for_mode(self.mode, self.gate_shift)

    @property
    def gates(self) -> pc.GateTable:
        g = self.grid
        return pc.compute_gates(g.height, g.width, None, self.params.rectangular, self.params.gate_shift)

    def effective_max_rounds(self) -> int:
        return self.max_rounds if self.max_rounds is not None else 2 * self.gates.g_deadline

    def to_dict(self) -> dict:
        return {
            "grid": {"height": self.grid.height, "width": self.grid.width},
            "mode": self.mode,
            "robots": [{"id": rid, "start": list(pos)} for rid, pos in self.robots],
            "byzantine_ids": sorted(self.byzantine_ids),
            "crash_schedule": [asdict(e) for e in self.crash_schedule],
            "byz_strategy": {"name": self.byz_strategy[0], "seed": self.byz_strategy[1]},
            "max_rounds": self.max_rounds,
            "trace": self.trace,
            "seed": self.seed,
            "gate_shift": {k: v for k, v in self.gate_shift},
        }


def validate_config(cfg: SimConfig) -> None:
    if cfg.mode not in pc.MODES:
        raise ConfigError("mode", f"unknown mode {cfg.mode!r}")
    g = cfg.grid
    if cfg.mode.startswith("Square") and g.height != g.width:
        raise ConfigError("grid", "square modes need height == width")
    if len(cfg.robots) > g.n:
        raise ConfigError("robots", f"{len(cfg.robots)} robots for {g.n} nodes")
    seen = set()
    for i, (rid, pos) in enumerate(cfg.robots):
        if not isinstance(rid, int) or rid < 0:
            raise ConfigError(f"robots[{i}].id", "ids are non-negative integers")
        if rid in seen:
            raise ConfigError(f"robots[{i}].id", f"duplicate id {rid}")
        seen.add(rid)
        r, c = pos
        if not (0 <= r < g.height and 0 <= c < g.width):
            raise ConfigError(f"robots[{i}].start", f"{tuple(pos)} outside the grid")
    if cfg.byzantine_ids and cfg.mode in pc.CRASH_MODES:
        raise ConfigError("byzantine_ids", "crash modes take no Byzantine robots")
    if not cfg.byzantine_ids <= seen:
        raise ConfigError("byzantine_ids", "unknown robot id")
    crashed = set()
    for i, ev in enumerate(cfg.crash_schedule):
        if ev.robot not in seen:
            raise ConfigError(f"crash_schedule[{i}].robot", f"unknown robot {ev.robot}")
        if ev.robot in crashed:
            raise ConfigError(f"crash_schedule[{i}].robot", f"robot {ev.robot} crashes twice")
        if ev.substep not in SUBSTEPS:
            raise ConfigError(f"crash_schedule[{i}].substep", f"unknown substep {ev.substep!r}")
        if ev.round < 0:
            raise ConfigError(f"crash_schedule[{i}].round", "negative round")
        crashed.add(ev.robot)
    if cfg.byzantine_ids:
        try:
            adversaries.byz_strategy_lookup(cfg.byz_strategy[0])
        except KeyError as exc:
            raise ConfigError("byz_strategy.name", str(exc)) from None
    for i, (name, delta) in enumerate(cfg.gate_shift):
        if name not in pc.GateTable.__dataclass_fields__ or not isinstance(delta, int):
            raise ConfigError(f"gate_shift.{name}", "unknown gate or non-integer shift")
    if cfg.max_rounds is not None and cfg.max_rounds < 0:
        raise ConfigError("max_rounds", "must be non-negative")


def config_from_dict(d: dict) -> SimConfig:
    """Build a SimConfig from its JSON form; errors name the offending field."""
    for key in ("grid", "mode", "robots"):
        if key not in d:
            raise ConfigError(key, "required")
    try:
        grid = GridSpec(int(d["grid"]["height"]), int(d["grid"]["width"]))
    except (KeyError, TypeError) as exc:
        raise ConfigError("grid", str(exc)) from None
    except ValueError as exc:
        raise ConfigError("grid", str(exc)) from None
    robots = []
    for i, r in enumerate(d["robots"]):
        try:
            robots.append((r["id"], (int(r["start"][0]), int(r["start"][1]))))
        except (KeyError, TypeError, IndexError):
            raise ConfigError(f"robots[{i}]", "expected {id, start: [row, col]}") from None
    crashes = []
    for i, e in enumerate(d.get("crash_schedule", [])):
        try:
            crashes.append(CrashEvent(int(e["robot"]), int(e["round"]), e.get("substep", "StartOfRound")))
        except (KeyError, TypeError):
            raise ConfigError(f"crash_schedule[{i}]", "expected {robot, round, substep}") from None
    strat = d.get("byz_strategy") or {}
    if isinstance(strat, str):
        strat = {"name": strat}
    return SimConfig(
        grid=grid,
        mode=d["mode"],
        robots=tuple(robots),
        byzantine_ids=frozenset(d.get("byzantine_ids", [])),
        crash_schedule=tuple(crashes),
        byz_strategy=(strat.get("name", "stay-put"), int(strat.get("seed", 0))),
        max_rounds=d.get("max_rounds"),
        trace=bool(d.get("trace", False)),
        seed=int(d.get("seed", 0)),
        gate_shift=tuple(sorted((d.get("gate_shift") or {}).items())),
    )


@dataclass(frozen=True)
class TraceRecord:
    round: int
    substep: str
    robot: int
    row: int
    col: int
    action: str
    crashed: bool
    memory_bits: int


@dataclass
class Report:
    dispersed: bool
    rounds_used: int
    max_memory_bits: int
    violations: list
    live_robot_count: int
    trace_hash: str
    config: dict
    rejected_writes: list = field(default_factory=list)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


# --------------------------------------------------------------------------
# memory accounting


def memory_bits(mem, n: int, idmax: int) -> int:
    """Exact width of the canonical serialization of ``mem``."""
    if isinstance(mem, pbyz.ByzRobotMemory):
        return pbyz.serialize(mem, n, idmax)[1]
    return pc.serialize(mem, n, idmax)[1]


class _CrashAudit:
    """Fast register check for crash memories: every field must fit its width."""

    def __init__(self, n, idmax):
        w = pc.register_widths(n, idmax)
        self.total = sum(w.values())
        self.word_limit = 1 << w["side_a"]
        self.round_limit = 1 << w["round_ctr"]
        self.id_limit = 1 << w["id"]

    def __call__(self, m) -> int:
        if (
            m.round_ctr >= self.round_limit
            or m.id >= self.id_limit
            or max(m.side_a, m.side_b, m.step_ctr, m.rank, m.target_col_off, m.target_row_off) >= self.word_limit
            or min(m.step_ctr, m.rank, m.target_col_off, m.target_row_off) < 0
        ):
            raise RegisterOverflow(f"robot {m.id} memory overflows its registers")
        return self.total


# --------------------------------------------------------------------------
# state


@lru_cache(maxsize=64)
def port_table(grid: GridSpec):
    """node -> (degree, {port: (neighbor, entry label at neighbor)})."""
    table = {}
    for node in grid.nodes():
        absent = absent_mask(grid, node)
        ports = {}
        deg = 4 - bin(absent).count("1")
        for p in range(1, deg + 1):
            d = dir_of_label(absent, p)
            dr, dc = DELTA[d]
            nb = (node[0] + dr, node[1] + dc)
            ports[p] = (nb, label_of_dir(absent_mask(grid, nb), opposite(d)))
        table[(node[0], node[1])] = (deg, ports)
    return table


@dataclass
class AdversaryView:
    """Everything the engine shows an adversary: the full global state."""

    round: int
    grid: GridSpec
    robot: int
    observation: pc.Observation
    position: tuple
    positions: dict
    memories: dict
    byzantine_ids: frozenset
    honest_ids: frozenset
    params: pc.ProtocolParams
    rng: random.Random
    idmax: int


@dataclass
class SimState:
    config: SimConfig
    round: int
    positions: dict
    memories: dict
    entries: dict
    live: set
    settled: set
    crashed: set = field(default_factory=set)
    violations: list = field(default_factory=list)
    rejected_writes: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    max_bits: int = 0
    halted: bool = False
    hasher: object = None
    rngs: dict = field(default_factory=dict)
    crash_at: dict = field(default_factory=dict)
    gate_checks: dict | None = None
    occupancy: dict = field(default_factory=dict)  # node -> live robots there
    active: set = field(default_factory=set)  # robots whose compute runs this round
    idle: set = field(default_factory=set)  # robots waiting for a gate
    wake_at: dict = field(default_factory=dict)  # round -> robots resuming then
    rows: dict = field(default_factory=dict)  # robot -> packed trace row of the last round
    order: list = field(default_factory=list)  # live robots, ascending
    fixed: tuple | None = None  # per-run constants cached by step_round


def initial_state(config: SimConfig) -> SimState:
    byz_mode = config.mode in pc.BYZ_MODES
    init = pbyz.init_byz_memory if byz_mode else pc.init_memory
    memories = {rid: init(rid, config.mode) for rid, _ in config.robots}
    crash_at = {}
    for ev in config.crash_schedule:
        crash_at.setdefault((ev.round, ev.substep), []).append(ev.robot)
    rngs = {}
    name, seed = config.byz_strategy
    for rid in sorted(config.byzantine_ids):
        rngs[rid] = random.Random(hash_seed(config.seed, seed, rid))
    positions = {rid: tuple(pos) for rid, pos in config.robots}
    occupancy: dict = {}
    for rid, pos in positions.items():
        occupancy.setdefault(pos, set()).add(rid)
    return SimState(
        config=config,
        round=0,
        positions=positions,
        memories=memories,
        entries={rid: None for rid, _ in config.robots},
        live=set(positions),
        settled=set(),
        hasher=hashlib.blake2b(digest_size=8),
        rngs=rngs,
        crash_at=crash_at,
        occupancy=occupancy,
        active=set(positions),
        order=sorted(positions),
    )


def hash_seed(*parts) -> int:
    h = hashlib.blake2b(repr(parts).encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


_ROW = struct.Struct("<7q")
_ROUND_HEADER = struct.Struct("<2q")


def pack_row(substep: int, robot: int, row: int, col: int, action: int, port: int, crashed: int) -> bytes:
    return _ROW.pack(substep, robot, row, col, action, port, crashed)


def hash_round(hasher, rnd: int, packed_rows) -> None:
    """Fold one round into the digest: (round, row count) then the rows in robot order."""
    packed_rows = list(packed_rows)
    hasher.update(_ROUND_HEADER.pack(rnd, len(packed_rows)))
    hasher.update(b"".join(packed_rows))


def _crash(state: SimState, substep: str, crash_rows: dict) -> None:
    for rid in state.crash_at.get((state.round, substep), ()):
        if rid in state.live:
            state.live.discard(rid)
            state.settled.discard(rid)
            state.active.discard(rid)
            state.idle.discard(rid)
            state.crashed.add(rid)
            r, c = state.positions[rid]
            crash_rows[rid] = pack_row(SUBSTEP_CODE[substep], rid, r, c, ACTION_CODE["crash"], 0, 1)


def _fix(state: SimState) -> tuple:
    cfg = state.config
    byz_mode = cfg.mode in pc.BYZ_MODES
    idmax = cfg.idmax
    state.fixed = (
        port_table(cfg.grid),
        cfg.params,
        pbyz.step_compute_byz if byz_mode else pc.step_compute,
        idmax,
        _CrashAudit(cfg.grid.n, idmax),
        byz_mode,
    )
    return state.fixed


def step_round(state: SimState, strategy: Callable | None = None, order=None) -> SimState:
    """Run one full round in place and return the state.

    ``order`` permutes the Compute evaluation order; the result must not
    depend on it.
    """
    cfg = state.config
    table, params, honest_step, idmax, audit, byz_mode = state.fixed or _fix(state)
    if byz_mode:
        audit = None
    byz = cfg.byzantine_ids
    n = cfg.grid.n
    rnd = state.round
    memories = state.memories
    entries = state.entries
    positions = state.positions
    occupancy = state.occupancy
    live = state.live
    crash_rows: dict = {}

    _crash(state, "StartOfRound", crash_rows)
    for rid in crash_rows:
        occupancy[positions[rid]].discard(rid)
    _check_gates(state)
    for rid in state.wake_at.pop(rnd, ()):
        if rid in state.idle:
            state.idle.discard(rid)
            state.active.add(rid)

    # Communicate: node snapshots are taken lazily but reflect this instant,
    # since nothing moves or changes memory before the Move step
    snapshot = {}

    def snap(node):
        got = snapshot.get(node)
        if got is None:
            got = snapshot[node] = tuple(memories[i] for i in sorted(occupancy[node]))
        return got

    computing = sorted(state.active) if order is None else [i for i in order if i in state.active]
    for rid in computing:
        snap(positions[rid])

    late = len(crash_rows)
    _crash(state, "AfterCommunicate", crash_rows)

    # Compute and Move. Snapshots are already fixed, and an honest robot
    # reads nothing but its own position and its node's snapshot, so each
    # result can be applied straight away. Adversaries read global state and
    # therefore all compute before anything is applied.
    doomed = state.crash_at.get((rnd, "BeforeMove"), ())
    settled = state.settled
    rows = state.rows
    active = state.active
    actions = {}
    computed = []
    measuring = pc.Phase.MeasureSides

    def apply(rid, mem, act):
        kind = act.kind
        pos = positions[rid]
        if kind == "move":
            hop = table[pos][1].get(act.port)
            if hop is None:
                if rid not in byz:
                    _violate(state, "IllegalMove", robots=[rid], round=rnd, detail=f"port {act.port} at {pos}")
                    return False
                # adversaries cannot leave the graph; treat it as staying
                state.rejected_writes.append({"robot": rid, "round": rnd, "reason": f"illegal port {act.port}"})
                act = actions[rid] = pc.STAY
                kind = "stay"
            else:
                occupancy[pos].discard(rid)
                pos = positions[rid] = hop[0]
                occupancy.setdefault(pos, set()).add(rid)
                entries[rid] = hop[1]
        if kind != "move":
            entries[rid] = None
            if kind == "settle" and rid not in byz:
                settled.add(rid)
                active.discard(rid)
        memories[rid] = mem
        if rid not in byz:
            if audit is not None:
                try:
                    audit(mem)
                except RegisterOverflow as exc:
                    _violate(state, "MemoryBound", robots=[rid], round=rnd, detail=str(exc))
                    return False
                if kind == "stay":
                    # the robot now waits for a gate; skip its compute until then
                    until = pc.idle_until(mem, params)
                    if until > rnd + 1:
                        active.discard(rid)
                        state.idle.add(rid)
                        state.wake_at.setdefault(until, []).append(rid)
            else:
                computed.append(rid)
        rows[rid] = pack_row(3, rid, pos[0], pos[1], ACTION_CODE[kind], act.port, 0)
        return True

    byz_results = []
    for rid in computing:
        if rid in byz and rid in live:
            pos = positions[rid]
            obs = pc.Observation(table[pos][0], entries[rid], snapshot[pos])
            byz_results.append((rid,) + _adversary_step(state, strategy, rid, obs, params))
    for rid in computing:
        if rid in byz or rid not in live:
            continue
        mem = memories[rid]
        if mem.round_ctr != rnd:
            _violate(state, "Synchrony", robots=[rid], round=rnd)
            return state
        pos = positions[rid]
        try:
            mem, act = honest_step(mem, pc.Observation(table[pos][0], entries[rid], snapshot[pos]), params)
        except ProtocolViolation as exc:
            _violate(state, "ProtocolViolation", robots=[rid], round=rnd, detail=str(exc))
            return state
        actions[rid] = act
        if rid in doomed:
            continue
        kind = act.kind
        if audit is None or kind == "move" and act.port not in table[pos][1]:
            if not apply(rid, mem, act):
                return state
            continue
        # fast path for honest crash-mode robots; mirrors apply()
        if kind == "move":
            hop = table[pos][1][act.port]
            occupancy[pos].discard(rid)
            pos = positions[rid] = hop[0]
            occupancy.setdefault(pos, set()).add(rid)
            entries[rid] = hop[1]
        else:
            entries[rid] = None
            if kind == "settle":
                settled.add(rid)
                active.discard(rid)
        old = memories[rid]
        memories[rid] = mem
        if mem.phase != old.phase or mem.phase == measuring:
            # registers only grow on a phase change or while measuring
            try:
                audit(mem)
            except RegisterOverflow as exc:
                _violate(state, "MemoryBound", robots=[rid], round=rnd, detail=str(exc))
                return state
        if kind == "stay":
            until = pc.idle_until(mem, params)
            if until > rnd + 1:
                active.discard(rid)
                state.idle.add(rid)
                state.wake_at.setdefault(until, []).append(rid)
        rows[rid] = pack_row(3, rid, pos[0], pos[1], ACTION_CODE[kind], act.port, 0)
    for rid, mem, act in byz_results:
        actions[rid] = act
        if rid not in doomed:
            apply(rid, mem, act)
    _crash(state, "BeforeMove", crash_rows)
    for rid in list(crash_rows)[late:]:
        occupancy[positions[rid]].discard(rid)
    for rid in state.idle:
        # a waiting robot's compute only advances its round counter
        memories[rid].round_ctr = rnd + 1

    # memory audit: waiting robots only changed their round counter, which
    # the first check covers
    if audit is not None:
        if rnd + 1 >= audit.round_limit:
            _violate(state, "MemoryBound", robots=state.order[:1], round=rnd, detail="round counter overflow")
            return state
        if audit.total > state.max_bits and live:
            state.max_bits = audit.total
    # honest Byzantine-mode robots: base registers are range-checked and the
    # log only ever holds real ids, so the width follows without serializing
    base_audit = state.fixed[4]
    for rid in computed:
        if rid not in live:
            continue
        m = memories[rid]
        try:
            bits = pbyz.memory_width(m, n, idmax, base_audit(m.base))
        except RegisterOverflow as exc:
            _violate(state, "MemoryBound", robots=[rid], round=rnd, detail=str(exc))
            return state
        if bits > state.max_bits:
            state.max_bits = bits

    # trace: every live robot gets a row; robots that did not compute repeat
    # their last row, since they stayed where they were
    if crash_rows:
        order = state.order
        out = [crash_rows.get(rid) or rows.get(rid) or _row_for(rows, rid, positions) for rid in order]
        state.order = [rid for rid in order if rid in live]
    else:
        out = [rows.get(rid) or _row_for(rows, rid, positions) for rid in state.order]
    hash_round(state.hasher, rnd, out)
    if cfg.trace:
        for packed in out:
            rid = _ROW.unpack(packed)[1]
            bits = 0
            if rid in live:
                bits = audit.total if audit else memory_bits_safe(memories[rid], n, idmax)
            state.trace.append(_record_of(rnd, packed, bits))
    for rid, act in actions.items():
        if act.kind == "settle" and rid in settled:
            # from the next round on a settled robot's row is a plain stay
            _row_for(rows, rid, positions)
    state.round += 1
    return state


def _row_for(rows, rid, positions) -> bytes:
    r, c = positions[rid]
    packed = rows[rid] = pack_row(3, rid, r, c, ACTION_CODE["stay"], 0, 0)
    return packed


def memory_bits_safe(mem, n, idmax) -> int:
    try:
        return memory_bits(mem, n, idmax)
    except RegisterOverflow:
        return -1


def _record_of(rnd, packed, bits) -> TraceRecord:
    sub, rid, r, c, act, port, crashed = _ROW.unpack(packed)
    substep = next(k for k, v in SUBSTEP_CODE.items() if v == sub)
    action = {0: "stay", 1: f"move:{port}", 2: "settle", 3: "crash"}[act]
    return TraceRecord(rnd, substep, rid, r, c, action, bool(crashed), bits)


def _violate(state: SimState, kind: str, robots=(), round=None, detail="") -> None:
    from .verify import Violation

    node = state.positions[robots[0]] if robots else (0, 0)
    state.violations.append(Violation(kind, tuple(robots), (node,), round, detail).to_dict())
    state.halted = True


class _CloningView(Mapping):
    """Live robots' memories; each read hands out a private copy."""

    def __init__(self, memories, live):
        self._memories = memories
        self._live = live
        self._copies = {}

    def __getitem__(self, rid):
        if rid not in self._live:
            raise KeyError(rid)
        got = self._copies.get(rid)
        if got is None:
            got = self._copies[rid] = pbyz.clone(self._memories[rid])
        return got

    def __iter__(self):
        return (rid for rid in self._memories if rid in self._live)

    def __len__(self):
        return sum(1 for _ in self)


def _adversary_step(state, strategy, rid, obs, params):
    cfg = state.config
    old = state.memories[rid]
    view = AdversaryView(
        round=state.round,
        grid=cfg.grid,
        robot=rid,
        observation=obs,
        position=state.positions[rid],
        positions=dict(state.positions),
        memories=_CloningView(state.memories, state.live),
        byzantine_ids=cfg.byzantine_ids,
        honest_ids=frozenset(state.live - cfg.byzantine_ids),
        params=params,
        rng=state.rngs[rid],
        idmax=cfg.idmax,
    )
    mem, act = strategy(view, rid)
    if mem is None:
        mem = old
    reason = None
    if not isinstance(mem, pbyz.ByzRobotMemory):
        reason = "memory of the wrong shape"
    elif mem.base.id != rid:
        reason = f"id register write {rid} -> {mem.base.id}"
    else:
        try:
            bits = pbyz.serialize(mem, cfg.grid.n, cfg.idmax)[1]
            if bits > pbyz.byz_budget(cfg.grid.n, cfg.idmax):
                reason = f"{bits} bits exceed the memory size"
        except RegisterOverflow as exc:
            reason = str(exc)
    if reason is not None:
        state.rejected_writes.append({"robot": rid, "round": state.round, "reason": reason})
        mem = old
    if not isinstance(act, pc.Action) or act.kind not in ("stay", "move", "settle"):
        act = pc.STAY
    return mem, act


def all_settled(state: SimState) -> bool:
    honest = state.live - state.config.byzantine_ids
    return honest <= state.settled


def run(config: SimConfig, strategy: Callable | None = None) -> Report:
    """Execute ``config`` until every live honest robot has settled."""
    return run_with_state(config, strategy)[0]


def run_with_state(config: SimConfig, strategy: Callable | None = None):
    """Like :func:`run` but also hand back the final state (trace, positions)."""
    if config.byzantine_ids and strategy is None:
        strategy = adversaries.byz_strategy_lookup(config.byz_strategy[0])
    state = initial_state(config)
    limit = config.effective_max_rounds()
    while not state.halted and not all_settled(state) and state.round < limit:
        step_round(state, strategy)
    return finish(state), state


def _check_gates(state: SimState) -> None:
    """Live honest robots must stand where the reference gate table puts them."""
    from .verify import Violation, gate_expectations

    cfg = state.config
    if state.gate_checks is None:
        state.gate_checks = gate_expectations(cfg)
    check = state.gate_checks.get(state.round)
    if check is None:
        return
    name, ok = check
    for rid in sorted(state.live - cfg.byzantine_ids):
        node = state.positions[rid]
        if not ok(node):
            state.violations.append(Violation("GateMiss", (rid,), (node,), state.round, f"not in place at {name}").to_dict())


def finish(state: SimState) -> Report:
    from .verify import check_dispersion

    cfg = state.config
    violations = list(state.violations)
    if not state.halted:
        honest = sorted(state.live - cfg.byzantine_ids)
        placed = [(rid, state.positions[rid], rid in state.settled) for rid in honest]
        violations.extend(v.to_dict() for v in check_dispersion(placed))
    return Report(
        dispersed=not violations,
        rounds_used=state.round,
        max_memory_bits=state.max_bits,
        violations=violations,
        live_robot_count=len(state.live - cfg.byzantine_ids),
        trace_hash=state.hasher.hexdigest(),
        config=cfg.to_dict(),
        rejected_writes=list(state.rejected_writes),
    )


# --------------------------------------------------------------------------
# files


def write_trace(path, report: Report, records) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema_version": SCHEMA_VERSION, "trace_hash": report.trace_hash}) + "\n")
        for rec in records:
            fh.write(json.dumps(asdict(rec)) + "\n")


_TRACE_KEYS = {f for f in TraceRecord.__dataclass_fields__}


def read_trace(path):
    """Return (header, records); malformed lines raise ParseError with their number."""
    records = []
    header = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, str(exc)) from None
            if header is None:
                if not isinstance(obj, dict) or "trace_hash" not in obj:
                    raise ParseError(lineno, "missing header with trace_hash")
                header = obj
                continue
            if not isinstance(obj, dict) or set(obj) != _TRACE_KEYS:
                raise ParseError(lineno, "record fields do not match the trace schema")
            try:
                rec = TraceRecord(**obj)
                if rec.substep not in SUBSTEP_CODE or not (rec.action in ("stay", "settle", "crash") or rec.action.startswith("move:")):
                    raise ValueError(rec.action)
                if rec.action.startswith("move:"):
                    int(rec.action[5:])
            except (TypeError, ValueError) as exc:
                raise ParseError(lineno, f"bad record: {exc}") from None
            records.append(rec)
    if header is None:
        raise ParseError(1, "empty trace")
    return header, records


def load_config(path) -> SimConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError("file", str(exc)) from None
    except json.JSONDecodeError as exc:
        raise ConfigError("file", f"not JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("file", "top level must be an object")
    return config_from_dict(data)
