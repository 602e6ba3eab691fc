"""Per-robot state machine for crash-tolerant dispersion on an oriented grid.

A robot starts knowing only its ID and whether the grid is a square or a
rectangle. It works out its compass orientation from port labels, walks to a
corner, measures the grid, and from then on acts on absolute gate rounds:

* even node count: each corner keeps the robots it can place in its own
  quadrant, surplus robots circle the boundary (SW -> SE -> NE -> NW) and
  claim leftover slots, and at the column gate every assigned robot walks to
  the cell given by its rank;
* odd node count: everyone walks to the middle of a side, then to the unique
  centre, then to the SW corner, and the whole grid is filled from there.

``step_compute`` is pure: the same memory and observation always give the
same result, and the input memory is never mutated.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import NamedTuple

from .errors import BadDimensions, InternalError, ProtocolViolation, RankOverflow
from .registers import pack_fields, unpack_fields
from .grid import (
    CORNER_MASK,
    MASK_CORNER,
    NE,
    NW,
    SE,
    SW,
    Dir,
    candidate_masks,
    dir_of_label,
    label_of_dir,
    opposite,
    probe_consistent,
    step_absent,
    straight_exit,
)


class Phase(IntEnum):
    ReachBoundary = 0
    ReachCorner = 1
    MeasureSides = 2
    WaitGate = 3
    EvenAllocate = 4
    EvenTravel = 5
    OddToMiddle = 6
    OddToCenter = 7
    OddCenterToCorner = 8
    ColumnAssign = 9
    ColumnDisperse = 10
    Settled = 11


class Parity(IntEnum):
    Even = 0
    Odd = 1


CRASH_MODES = ("SquareCrash", "RectCrash")
BYZ_MODES = ("SquareByz", "RectByz")
MODES = CRASH_MODES + BYZ_MODES


@dataclass(slots=True)
class CrashRobotMemory:
    id: int
    round_ctr: int = 0
    phase: int = Phase.ReachBoundary
    heading: int = Dir.W
    side_a: int = 0  # grid height once measured
    side_b: int = 0  # grid width once measured
    step_ctr: int = 0
    retry_flag: int = 0
    corner_tag: int = 0
    rank: int = 0
    target_col_off: int = 0
    target_row_off: int = 0
    settled: int = 0
    absent: int = 0  # missing compass directions at the current node
    hyp: int = 0  # remaining orientation hypotheses; 0 once localized
    probe: int = 0  # port being probed during localization

    @property
    def assigned(self) -> bool:
        return self.phase == Phase.EvenAllocate

    def clone(self) -> "CrashRobotMemory":
        return CrashRobotMemory(
            self.id, self.round_ctr, self.phase, self.heading, self.side_a, self.side_b,
            self.step_ctr, self.retry_flag, self.corner_tag, self.rank, self.target_col_off,
            self.target_row_off, self.settled, self.absent, self.hyp, self.probe,
        )


def register_widths(n: int, idmax: int) -> dict[str, int]:
    """Declared bit width of every crash-memory register."""
    word = max((n - 1).bit_length(), idmax.bit_length())
    return {
        "id": max(1, idmax.bit_length()),
        "round_ctr": word + 4,
        "phase": 4,
        "heading": 2,
        "side_a": word,
        "side_b": word,
        "step_ctr": word,
        "retry_flag": 1,
        "corner_tag": 2,
        "rank": word,
        "target_col_off": word,
        "target_row_off": word,
        "settled": 1,
        "absent": 4,
        "hyp": 4,
        "probe": 2,
    }


def crash_budget(n: int, idmax: int) -> int:
    word = max((n - 1).bit_length(), idmax.bit_length())
    return 12 * word + 16


class Observation(NamedTuple):
    """What a robot sees at the start of its compute.

    ``colocated`` holds the pre-round memories of every live robot at the
    node, the observer's own included.
    """

    node_degree: int
    entry: int | None
    colocated: tuple = ()


class Action(NamedTuple):
    kind: str  # "stay" | "move" | "settle"
    port: int = 0

    def __str__(self):
        return f"move:{self.port}" if self.kind == "move" else self.kind


STAY = Action("stay")
SETTLE = Action("settle")


_PORT_MOVES = tuple(Action("move", p) for p in range(5))


def Move(port: int) -> Action:
    if 0 < port < 5:
        return _PORT_MOVES[port]
    return Action("move", port)


@dataclass(frozen=True)
class ProtocolParams:
    """What every robot knows before the run starts.

    ``gate_shift`` moves individual gates by a fixed number of rounds; it
    exists to build broken protocol variants for mutation tests.
    """

    rectangular: bool = False
    gate_shift: tuple[tuple[str, int], ...] = ()


SQUARE = ProtocolParams()
RECTANGLE = ProtocolParams(rectangular=True)


def params_for_mode(mode: str, gate_shift=()) -> ProtocolParams:
    return ProtocolParams(rectangular=mode.startswith("Rect"), gate_shift=tuple(gate_shift))


def init_memory(robot_id: int, mode: str = "SquareCrash") -> CrashRobotMemory:
    # the start node's degree is only known at the first compute, where
    # ReachBoundary hands over to ReachCorner if the robot is not internal
    return CrashRobotMemory(id=robot_id)


# --------------------------------------------------------------------------
# gates and allocation arithmetic


@dataclass(frozen=True)
class GateTable:
    g_meet: int
    g_deadline: int
    g_snapshot: int | None = None
    g_columns_even: int | None = None
    g_middle: int | None = None
    g_center: int | None = None
    g_to_corner: int | None = None
    g_columns_odd: int | None = None


def parity_of(side_a: int, side_b: int) -> Parity:
    return Parity.Odd if (side_a * side_b) % 2 else Parity.Even


@lru_cache(maxsize=None)
def compute_gates(side_a, side_b, parity=None, rectangular=False, gate_shift=()):
    if side_a < 2 or side_b < 2:
        raise BadDimensions(f"sides must be >= 2, got {side_a}, {side_b}")
    if parity is None:
        parity = parity_of(side_a, side_b)
    parity = Parity(parity)
    if not rectangular:
        if side_a != side_b:
            raise BadDimensions(f"square mode needs equal sides, got {side_a}, {side_b}")
        s = side_a
        if parity is Parity.Even:
            g = dict(g_meet=3 * s, g_snapshot=3 * s, g_columns_even=6 * s, g_deadline=7 * s)
        else:
            g = dict(
                g_meet=3 * s,
                g_middle=3 * s,
                g_center=(7 * s + 1) // 2,
                g_to_corner=4 * s,
                g_columns_odd=5 * s,
                g_deadline=7 * s,
            )
    else:
        ell = max(side_a, side_b)
        half = (ell + 1) // 2
        if parity is Parity.Even:
            g = dict(g_meet=4 * ell, g_snapshot=4 * ell, g_columns_even=7 * ell, g_deadline=8 * ell)
        else:
            to_corner = 4 * ell + 2 * half
            g = dict(
                g_meet=4 * ell,
                g_middle=4 * ell,
                g_center=4 * ell + half,
                g_to_corner=to_corner,
                g_columns_odd=to_corner + ell,
                g_deadline=to_corner + 3 * ell,
            )
    for name, delta in gate_shift:
        if g.get(name) is not None:
            g[name] += delta
    return GateTable(**g)


def quadrant_dims(corner: int, height: int, width: int) -> tuple[int, int]:
    """(rows, cols) of the block of cells owned by ``corner``."""
    rows = (height + 1) // 2 if corner in (NE, NW) else height // 2
    cols = (width + 1) // 2 if corner in (SW, NW) else width // 2
    return rows, cols


def snapshot_rank(colocated_ids, self_id: int, capacity: int):
    """Rank of ``self_id`` among the ids present, or None if it must travel."""
    ids = sorted(colocated_ids)
    try:
        index = ids.index(self_id)
    except ValueError:
        raise InternalError(f"robot {self_id} missing from its own snapshot") from None
    return index if index < capacity else None


def target_of_rank(rank: int, corner: int, quad_height: int, quad_width: int) -> tuple[int, int]:
    if not 0 <= rank < quad_height * quad_width:
        raise RankOverflow(f"rank {rank} outside a {quad_height}x{quad_width} block")
    return rank // quad_height, rank % quad_height


def horizontal_inward(corner: int) -> int:
    return Dir.E if corner in (SW, NW) else Dir.W


def vertical_inward(corner: int) -> int:
    return Dir.N if corner in (SW, SE) else Dir.S


# allocator verdict: stay at the corner one more round and decide again
HOLD = -1

# traveler circuit: leaving corner c heads towards corner c + 1
CIRCUIT_HEADING = {SW: Dir.E, SE: Dir.N, NE: Dir.W, NW: Dir.S}


# slot maps keyed by snapshot identity: every robot at a node receives the
# same snapshot tuple, so the map is computed once per node and round
_SLOT_CACHE: dict = {}


def _cached_slots(entries, capacity: int) -> dict[int, int]:
    key = (id(entries), capacity)
    hit = _SLOT_CACHE.get(key)
    if hit is not None and hit[0] is entries:
        return hit[1]
    if len(_SLOT_CACHE) > 64:
        _SLOT_CACHE.clear()
    slots = allocate_slots(entries, capacity)
    _SLOT_CACHE[key] = (entries, slots)
    return slots


def allocate_slots(entries, capacity: int) -> dict[int, int]:
    """Hand free ranks at a corner to the unassigned robots present.

    ``entries`` are the memories of every robot at the node, the caller
    included. Ranks already claimed by an assigned robot are skipped; the
    remaining ranks go to unassigned robots in ascending-ID order. Everyone at
    the node computes the same map from the same snapshot.
    """
    claimed = set()
    waiting = []
    for m in entries:
        phase = m.phase
        if phase == Phase.EvenAllocate:
            if 0 <= m.rank < capacity:
                claimed.add(m.rank)
        elif phase == Phase.WaitGate or phase == Phase.EvenTravel:
            waiting.append(m.id)
    if not waiting:
        return {}
    waiting.sort()
    free = (r for r in range(capacity) if r not in claimed)
    return dict(zip(waiting, free))


# --------------------------------------------------------------------------
# the step function


def _with_self(colocated, m):
    # the engine includes the observer's own pre-round memory; direct callers may not
    for c in colocated:
        if c.id == m.id:
            return colocated
    return tuple(colocated) + (m,)


def _axis_length(mem, d: int) -> int:
    return mem.side_a if d in (Dir.N, Dir.S) else mem.side_b


_GO: dict = {}


def _go(mem, d: int) -> Action:
    mem.heading = d
    key = (mem.absent, d)
    act = _GO.get(key)
    if act is None:
        act = _GO[key] = Move(label_of_dir(mem.absent, d))
    return act


def step_compute(mem: CrashRobotMemory, obs: Observation, params: ProtocolParams = SQUARE):
    if mem.settled or mem.phase == Phase.Settled:
        raise ProtocolViolation(f"robot {mem.id} computed after settling")
    m = mem.clone()
    action = _advance(m, obs, params, None)
    m.round_ctr = mem.round_ctr + 1
    return m, action


def idle_until(mem: CrashRobotMemory, params: ProtocolParams) -> int:
    """Round before which ``mem`` only waits, whatever it observes.

    While ``mem.round_ctr`` is below the returned value and the robot did not
    move last round, ``step_compute`` returns STAY and changes nothing but
    the round counter. Returns 0 when no such promise holds.
    """
    phase = mem.phase
    if phase < Phase.WaitGate or phase == Phase.EvenTravel or phase >= Phase.ColumnDisperse:
        return 0
    gates = gates_of(mem, params)
    if phase == Phase.WaitGate:
        return gates.g_snapshot if gates.g_snapshot is not None else gates.g_middle
    if phase == Phase.EvenAllocate:
        return gates.g_columns_even
    if phase == Phase.ColumnAssign:
        return gates.g_columns_odd
    if mem.step_ctr:
        return 0
    if phase == Phase.OddToMiddle:
        return gates.g_center
    if phase == Phase.OddToCenter:
        return gates.g_to_corner
    return 0


def _reckon_table():
    # (absent, heading, degree) -> (new absent, label of the edge back), or
    # None when no grid produces that degree after that hop
    from .grid import VALID_MASKS

    table = {}
    for absent in VALID_MASKS:
        for d in range(4):
            for degree in (2, 3, 4):
                after = step_absent(absent, d, degree)
                if after is None or after not in VALID_MASKS:
                    table[absent, d, degree] = None
                else:
                    table[absent, d, degree] = (after, label_of_dir(after, opposite(d)))
    return table


_RECKON = _reckon_table()


def _dead_reckon(m, obs: Observation) -> None:
    if obs.entry is None or m.hyp:
        return
    hit = _RECKON.get((m.absent, m.heading, obs.node_degree))
    if hit is None:
        raise ProtocolViolation(f"robot {m.id}: degree {obs.node_degree} impossible after heading {m.heading}")
    if hit[1] != obs.entry:
        raise ProtocolViolation(f"robot {m.id}: entered through port {obs.entry}, expected otherwise")
    m.absent = hit[0]


def _advance(m, obs: Observation, params: ProtocolParams, allocator):
    """Update ``m`` in place and return the action for this round."""
    if m.round_ctr == 0 and m.phase == Phase.ReachBoundary:
        if obs.node_degree == 4:
            m.absent = 0
            m.heading = Dir.W
            return Move(1)  # the minimum port of an internal node
        m.phase = Phase.ReachCorner
        m.hyp = 0b1111
        m.step_ctr = obs.node_degree
        m.probe = 1
        m.retry_flag = 0
        return Move(1)

    _dead_reckon(m, obs)
    handler = _HANDLERS.get(m.phase)
    if handler is None:
        raise ProtocolViolation(f"robot {m.id}: unknown phase {m.phase}")
    return handler(m, obs, params, allocator)


def _reach_boundary(m, obs, params, allocator):
    if obs.node_degree == 4:
        return Move(straight_exit(4, obs.entry if obs.entry is not None else 3))
    m.phase = Phase.ReachCorner
    return _reach_corner(m, obs, params, allocator)


def _reach_corner(m, obs, params, allocator):
    if m.hyp:
        cands = candidate_masks(m.step_ctr)
        if not m.retry_flag:
            # standing on the probed neighbour: drop hypotheses it contradicts
            keep = 0
            for i, mask in enumerate(cands):
                if m.hyp >> i & 1 and probe_consistent(mask, m.probe, obs.node_degree, obs.entry):
                    keep |= 1 << i
            m.hyp = keep
            m.retry_flag = 1
            return Move(obs.entry)
        if obs.entry != m.probe or obs.node_degree != m.step_ctr:
            raise ProtocolViolation(f"robot {m.id}: did not return to its probe origin")
        if m.hyp == 0:
            raise ProtocolViolation(f"robot {m.id}: no orientation fits the probes")
        if m.hyp & (m.hyp - 1):
            m.probe += 1
            m.retry_flag = 0
            return Move(m.probe)
        m.absent = cands[m.hyp.bit_length() - 1]
        m.hyp = m.probe = m.retry_flag = m.step_ctr = 0

    degree = obs.node_degree
    if degree == 2:
        return _start_measure(m)
    if degree != 3:
        raise ProtocolViolation(f"robot {m.id}: left the boundary while seeking a corner")
    # walk along the boundary towards the lower-labelled of the two directions
    side = m.absent.bit_length() - 1
    a, b = (side + 1) % 4, (side + 3) % 4
    d = a if label_of_dir(m.absent, a) < label_of_dir(m.absent, b) else b
    return _go(m, d)


def _start_measure(m):
    m.phase = Phase.MeasureSides
    m.corner_tag = MASK_CORNER[m.absent]
    m.step_ctr = 0
    m.retry_flag = 0
    m.side_a = m.side_b = 0
    return _go(m, dir_of_label(m.absent, 1))


def _measure(m, obs, params, allocator):
    m.step_ctr += 1
    if obs.node_degree == 3:
        return _go(m, m.heading)
    if obs.node_degree != 2:
        raise ProtocolViolation(f"robot {m.id}: internal node while measuring a side")
    nodes = m.step_ctr + 1
    vertical = m.heading in (Dir.N, Dir.S)
    if not params.rectangular:
        m.side_a = m.side_b = nodes
    elif not m.retry_flag:
        if vertical:
            m.side_a = nodes
        else:
            m.side_b = nodes
        m.retry_flag = 1
        m.step_ctr = 0
        back = opposite(m.heading)
        turn = next(d for d in range(4) if d != back and not m.absent >> d & 1)
        return _go(m, turn)
    elif vertical:
        m.side_a = nodes
    else:
        m.side_b = nodes
    m.phase = Phase.WaitGate
    m.corner_tag = MASK_CORNER[m.absent]
    m.step_ctr = m.retry_flag = 0
    return _wait_gate(m, obs, params, allocator)


def gates_of(m, params: ProtocolParams) -> GateTable:
    return compute_gates(m.side_a, m.side_b, None, params.rectangular, params.gate_shift)


def _wait_gate(m, obs, params, allocator):
    gates = gates_of(m, params)
    if gates.g_snapshot is not None:
        if m.round_ctr < gates.g_snapshot:
            return STAY
        return _corner_decision(m, obs, params, allocator, gates)
    if m.round_ctr < gates.g_middle:
        return STAY
    m.phase = Phase.OddToMiddle
    m.heading = dir_of_label(m.absent, 1)
    m.step_ctr = (_axis_length(m, m.heading) - 1) // 2
    return _odd(m, obs, params)


def _corner_decision(m, obs, params, allocator, gates):
    """Unassigned robot at a corner on or after the snapshot gate."""
    corner = MASK_CORNER[m.absent]
    if m.round_ctr < gates.g_columns_even:
        rows, cols = quadrant_dims(corner, m.side_a, m.side_b)
        if allocator is None:
            slots = _cached_slots(_with_self(obs.colocated, m), rows * cols)
            rank = slots.get(m.id)
        else:
            rank = allocator(m, obs, rows * cols, corner)
            if rank == HOLD:
                return STAY
        if rank is not None:
            m.phase = Phase.EvenAllocate
            m.corner_tag = corner
            m.rank = rank
            return STAY
    m.phase = Phase.EvenTravel
    return _go(m, CIRCUIT_HEADING[corner])


def _travel(m, obs, params, allocator):
    if obs.node_degree == 3:
        return _go(m, m.heading)
    if obs.node_degree != 2:
        raise ProtocolViolation(f"robot {m.id}: internal node on the boundary circuit")
    return _corner_decision(m, obs, params, allocator, gates_of(m, params))


def _await_columns(m, obs, params):
    gates = gates_of(m, params)
    if m.round_ctr < gates.g_columns_even:
        return STAY
    rows, cols = quadrant_dims(m.corner_tag, m.side_a, m.side_b)
    m.target_col_off, m.target_row_off = target_of_rank(m.rank, m.corner_tag, rows, cols)
    m.phase = Phase.ColumnDisperse
    return _disperse(m)


def _disperse(m):
    if m.target_col_off:
        m.target_col_off -= 1
        return _go(m, horizontal_inward(m.corner_tag))
    if m.target_row_off:
        m.target_row_off -= 1
        return _go(m, vertical_inward(m.corner_tag))
    m.phase = Phase.Settled
    m.settled = 1
    return SETTLE


def _odd(m, obs, params):
    gates = gates_of(m, params)
    r = m.round_ctr
    if m.phase == Phase.OddToMiddle and r >= gates.g_center:
        m.phase = Phase.OddToCenter
        side = m.absent.bit_length() - 1 if m.absent else m.heading
        m.heading = opposite(side)
        m.step_ctr = (_axis_length(m, m.heading) - 1) // 2
    if m.phase == Phase.OddToCenter and r >= gates.g_to_corner:
        m.phase = Phase.OddCenterToCorner
        m.heading = Dir.W
    if m.phase in (Phase.OddToMiddle, Phase.OddToCenter):
        if m.step_ctr:
            m.step_ctr -= 1
            return _go(m, m.heading)
        return STAY
    if m.phase == Phase.OddCenterToCorner:
        if not m.absent & (1 << Dir.W):
            return _go(m, Dir.W)
        if obs.node_degree == 3:
            return _go(m, Dir.S)
        m.phase = Phase.ColumnAssign
        m.corner_tag = MASK_CORNER[m.absent]
    # ColumnAssign
    if r < gates.g_columns_odd:
        return STAY
    ids = [c.id for c in _with_self(obs.colocated, m)]
    n = m.side_a * m.side_b
    rank = snapshot_rank(ids, m.id, n)
    if rank is None:
        raise ProtocolViolation(f"robot {m.id}: more robots than nodes at the gathering corner")
    m.rank = rank
    m.target_col_off, m.target_row_off = target_of_rank(rank, m.corner_tag, m.side_a, m.side_b)
    m.phase = Phase.ColumnDisperse
    return _disperse(m)


_HANDLERS = {
    Phase.ReachBoundary: _reach_boundary,
    Phase.ReachCorner: _reach_corner,
    Phase.MeasureSides: _measure,
    Phase.WaitGate: _wait_gate,
    Phase.EvenTravel: _travel,
    Phase.EvenAllocate: lambda m, obs, params, allocator: _await_columns(m, obs, params),
    Phase.ColumnDisperse: lambda m, obs, params, allocator: _disperse(m),
    Phase.OddToMiddle: lambda m, obs, params, allocator: _odd(m, obs, params),
    Phase.OddToCenter: lambda m, obs, params, allocator: _odd(m, obs, params),
    Phase.OddCenterToCorner: lambda m, obs, params, allocator: _odd(m, obs, params),
    Phase.ColumnAssign: lambda m, obs, params, allocator: _odd(m, obs, params),
}

CRASH_FIELDS = tuple(register_widths(4, 3))


def serialize(mem: CrashRobotMemory, n: int, idmax: int) -> tuple[int, int]:
    """Canonical bit image of a crash memory as (bits, length)."""
    widths = register_widths(n, idmax)
    return pack_fields(((f, int(getattr(mem, f))) for f in CRASH_FIELDS), widths)


def deserialize(bits: int, n: int, idmax: int) -> CrashRobotMemory:
    return CrashRobotMemory(**unpack_fields(bits, CRASH_FIELDS, register_widths(n, idmax)))
