"""Dispersion with weak Byzantine robots: arbitrary behaviour, honest IDs.

Movement is exactly the crash protocol. What changes is how a corner hands
out slots in the even case. Every robot keeps a first-hand log of which
robots it has seen assigned at which corner, and a set of robots whose
observed behaviour no honest robot could produce. When a corner has no free
slot left for an unassigned robot, that robot may settle together with a
robot it can prove faulty (co-settlement): it takes over the host's rank and
writes the host's id into its declaration register so that everyone present
can audit the claim.

Accusations only ever come from a robot's own observations. Logs written by
other robots are checked for consistency with what the reader knows about
itself, but never copied, since a faulty robot could otherwise frame an
honest one.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

from . import protocol_crash as pc
from .errors import ProtocolViolation, RegisterOverflow
from .grid import MASK_CORNER, step_absent
from .registers import pack_fields, unpack_fields

_EVEN_PHASES = (pc.Phase.WaitGate, pc.Phase.EvenAllocate, pc.Phase.EvenTravel)
_WAITING = (pc.Phase.WaitGate, pc.Phase.EvenTravel)
_N_GROUPS = 5  # assigned at SW, SE, NE, NW; proven faulty


@dataclass(slots=True)
class ByzRobotMemory:
    base: pc.CrashRobotMemory
    assigned_at: dict = field(default_factory=dict)  # id -> corner where seen assigned
    faulty: frozenset = frozenset()
    declaration: int | None = None  # host id when co-settling
    version: int = 0  # bumped whenever the log or faulty set changes

    # read-through views so crash-protocol helpers accept either memory type
    @property
    def id(self) -> int:
        return self.base.id

    @property
    def phase(self) -> int:
        return self.base.phase

    @property
    def rank(self) -> int:
        return self.base.rank

    @property
    def round_ctr(self) -> int:
        return self.base.round_ctr

    @property
    def settled(self) -> int:
        return self.base.settled

    @property
    def corner_tag(self) -> int:
        return self.base.corner_tag

    def seen_log(self) -> dict:
        """Corner -> ids seen assigned there (faulty ids excluded)."""
        out = {c: set() for c in range(4)}
        for rid, c in self.assigned_at.items():
            out[c].add(rid)
        return out


@dataclass
class SettlementPlan:
    solo_slots: dict  # id -> free rank, ascending id order
    paired: dict  # extra id -> host id
    paired_rank: dict  # extra id -> rank taken over from the host

    def rank_of(self, rid: int):
        if rid in self.solo_slots:
            return self.solo_slots[rid]
        return self.paired_rank.get(rid)


def init_byz_memory(robot_id: int, mode: str = "SquareByz") -> ByzRobotMemory:
    return ByzRobotMemory(base=pc.init_memory(robot_id, mode))


def clone(mem):
    """Independent copy of a memory of either kind."""
    if isinstance(mem, ByzRobotMemory):
        return ByzRobotMemory(
            mem.base.clone(), dict(mem.assigned_at), frozenset(mem.faulty), mem.declaration, mem.version
        )
    return copy.copy(mem)


# --------------------------------------------------------------------------
# memory layout


def _id_width(idmax: int) -> int:
    return max(1, idmax.bit_length())


def _word(n: int, idmax: int) -> int:
    return max((n - 1).bit_length(), idmax.bit_length())


def byz_budget(n: int, idmax: int) -> int:
    return (n + 8) * _id_width(idmax) + pc.crash_budget(n, idmax)


def _log_widths(n: int, idmax: int):
    count_w = min(n, idmax + 1).bit_length()
    return count_w, _id_width(idmax), 3 * (idmax + 1)


def serialize(mem: ByzRobotMemory, n: int, idmax: int) -> tuple[int, int]:
    """Canonical bit image as (bits, length).

    The log is stored either as five length-prefixed id lists or as a 3-bit
    group code per possible id, whichever is shorter; one selector bit says
    which.
    """
    bits, length = pc.serialize(mem.base, n, idmax)
    count_w, idw, bitmap_len = _log_widths(n, idmax)
    groups = [sorted(r for r, c in mem.assigned_at.items() if c == k) for k in range(4)]
    groups.append(sorted(mem.faulty))
    members = [r for g in groups for r in g]
    if len(set(members)) != len(members):
        raise RegisterOverflow(f"robot {mem.id}: an id sits in two log groups")
    for r in members:
        if not isinstance(r, int) or r < 0 or r > idmax:
            raise RegisterOverflow(f"robot {mem.id}: logged id {r!r} out of range")
    list_len = _N_GROUPS * count_w + len(members) * idw

    def put(value, width):
        nonlocal bits, length
        if value < 0 or value >> width:
            raise RegisterOverflow(f"robot {mem.id}: {value} does not fit in {width} bits")
        bits = (bits << width) | value
        length += width

    if list_len <= bitmap_len:
        put(0, 1)
        for g in groups:
            put(len(g), count_w)
        for r in members:
            put(r, idw)
    else:
        put(1, 1)
        code = {r: k + 1 for k, g in enumerate(groups) for r in g}
        for r in range(idmax + 1):
            put(code.get(r, 0), 3)
    if mem.declaration is None:
        put(0, 1 + idw)
    else:
        if not isinstance(mem.declaration, int):
            raise RegisterOverflow(f"robot {mem.id}: declaration {mem.declaration!r}")
        put(1, 1)
        put(mem.declaration, idw)
    put(mem.version, _word(n, idmax))
    return bits, length


def deserialize(bits: int, length: int, n: int, idmax: int) -> ByzRobotMemory:
    count_w, idw, _ = _log_widths(n, idmax)
    widths = pc.register_widths(n, idmax)
    base_len = sum(widths.values())
    pos = length

    def take(width):
        nonlocal pos
        pos -= width
        return (bits >> pos) & ((1 << width) - 1)

    base = pc.CrashRobotMemory(**unpack_fields(bits >> (length - base_len), pc.CRASH_FIELDS, widths))
    take(base_len)
    groups = [[] for _ in range(_N_GROUPS)]
    if take(1) == 0:
        counts = [take(count_w) for _ in range(_N_GROUPS)]
        for k, cnt in enumerate(counts):
            groups[k] = [take(idw) for _ in range(cnt)]
    else:
        for r in range(idmax + 1):
            code = take(3)
            if code:
                groups[code - 1].append(r)
    assigned = {r: k for k in range(4) for r in groups[k]}
    has_decl = take(1)
    decl = take(idw)
    version = take(_word(n, idmax))
    return ByzRobotMemory(base, assigned, frozenset(groups[4]), decl if has_decl else None, version)


def memory_width(mem: ByzRobotMemory, n: int, idmax: int, crash_width: int | None = None) -> int:
    """Serialized width without building the bit image (fields assumed in range)."""
    count_w, idw, bitmap_len = _log_widths(n, idmax)
    if crash_width is None:
        crash_width = sum(pc.register_widths(n, idmax).values())
    k = len(mem.assigned_at) + len(mem.faulty)
    return crash_width + 1 + min(_N_GROUPS * count_w + k * idw, bitmap_len) + 1 + idw + _word(n, idmax)


# --------------------------------------------------------------------------
# evidence


def _locate(base: pc.CrashRobotMemory, obs: pc.Observation):
    """Missing-direction mask of the node the robot now stands on, if known."""
    if base.hyp:
        return None
    if obs.entry is None:
        return base.absent
    return step_absent(base.absent, base.heading, obs.node_degree)


def _audits(base) -> bool:
    return base.phase in _EVEN_PHASES and base.side_a and pc.parity_of(base.side_a, base.side_b) == pc.Parity.Even


def _evidence(own: ByzRobotMemory, peer, here_corner, gates, capacity) -> bool:
    """True when ``peer``'s snapshot is impossible for an honest robot."""
    if not isinstance(peer, ByzRobotMemory):
        return True
    me = own.base
    b = peer.base
    rnd = me.round_ctr
    if b.settled or b.phase == pc.Phase.Settled:
        return False
    # (d) malformed memory
    if b.round_ctr != rnd:
        return True
    if peer.declaration is not None and peer.declaration not in peer.faulty:
        return True
    if me.id in peer.faulty:
        return True
    seen_me = peer.assigned_at.get(me.id)
    if seen_me is not None and (me.phase != pc.Phase.EvenAllocate or seen_me != me.corner_tag):
        return True
    if b.phase in _EVEN_PHASES and (b.side_a, b.side_b) != (me.side_a, me.side_b):
        return True
    before_gate = rnd < gates.g_columns_even
    if b.phase == pc.Phase.EvenAllocate:
        if here_corner is None or b.corner_tag != here_corner:
            return True
        if not 0 <= b.rank < capacity:
            return True
        # (a) assigned at two distinct corners
        where = own.assigned_at.get(peer.id)
        if where is not None and where != here_corner:
            return True
        # (c) claims the observer's own slot
        if me.phase == pc.Phase.EvenAllocate and me.corner_tag == here_corner and b.rank == me.rank:
            return True
        # assigned robots leave the corner during the column gate round
        if rnd > gates.g_columns_even:
            return True
    elif before_gate and peer.id in own.assigned_at:
        # (b) dropped an assignment before the column gate
        return True
    return False


def infer_faulty(mem: ByzRobotMemory, colocated=(), here_corner=None) -> frozenset:
    """Ids provably faulty given ``mem`` and, optionally, this round's snapshot.

    ``here_corner`` is the corner the observer stands on, or None elsewhere.
    """
    base = mem.base
    if not colocated or not _audits(base):
        return frozenset(mem.faulty)
    gates = pc.gates_of(base, pc.RECTANGLE if base.side_a != base.side_b else pc.SQUARE)
    return _infer(mem, colocated, here_corner, gates)


def _infer(mem, colocated, here_corner, gates) -> frozenset:
    base = mem.base
    if here_corner is not None:
        rows, cols = pc.quadrant_dims(here_corner, base.side_a, base.side_b)
        capacity = rows * cols
    else:
        capacity = 0
    new = set()
    present = set()
    for peer in colocated:
        pid = peer.id
        present.add(pid)
        if pid == base.id or pid in mem.faulty:
            continue
        if _evidence(mem, peer, here_corner, gates, capacity):
            new.add(pid)
    if here_corner is not None and base.round_ctr < gates.g_columns_even:
        # (b) an honest robot assigned here never leaves before the column gate
        for rid, c in mem.assigned_at.items():
            if c == here_corner and rid not in present:
                new.add(rid)
    if not new:
        return frozenset(mem.faulty)
    return frozenset(mem.faulty | new)


def merge_seen_logs(own: ByzRobotMemory, colocated, here_corner=None, gates=None) -> ByzRobotMemory:
    """Fold this round's snapshot into ``own``'s first-hand log.

    Robots seen assigned at this corner are logged; anyone whose snapshot is
    impossible for an honest robot joins the faulty set and leaves the log.
    Peer logs are audited against the observer's own history but not copied.
    """
    if not colocated:
        return own
    base = own.base
    if gates is None:
        if not _audits(base):
            return own
        gates = pc.gates_of(base, pc.RECTANGLE if base.side_a != base.side_b else pc.SQUARE)
    faulty = _infer(own, colocated, here_corner, gates)
    assigned = own.assigned_at
    added = None
    if here_corner is not None:
        for peer in colocated:
            pid = peer.id
            if pid == base.id or pid in faulty or peer.phase != pc.Phase.EvenAllocate:
                continue
            if assigned.get(pid) != here_corner:
                if added is None:
                    added = dict(assigned)
                added[pid] = here_corner
    if added is None and faulty is own.faulty:
        return own
    out = ByzRobotMemory(own.base, added if added is not None else assigned, own.faulty, own.declaration, own.version)
    if faulty is not own.faulty and faulty != own.faulty:
        out.faulty = faulty
        if any(r in out.assigned_at for r in faulty):
            out.assigned_at = {r: c for r, c in out.assigned_at.items() if r not in faulty}
    # wraps within the smallest word any run on this grid can declare
    out.version = (own.version + 1) & ((1 << (base.side_a * base.side_b - 1).bit_length()) - 1)
    return out


# --------------------------------------------------------------------------
# settlement


def build_settlement_plan(entries, capacity: int) -> SettlementPlan:
    """Slot map every robot at a corner derives from the same snapshot.

    ``entries`` are the pre-round memories present. Free ranks go to
    unassigned robots in ascending-ID order. Each remaining robot, again in
    ascending order, takes over the rank of the lowest-ID host in its own
    published faulty set that is the only claimant of its rank and is not
    already hosting; robots left over keep travelling.
    """
    claims: dict[int, list] = {}
    waiting = []
    faulty_of = {}
    for m in entries:
        phase = m.phase
        if phase == pc.Phase.EvenAllocate:
            if 0 <= m.rank < capacity:
                claims.setdefault(m.rank, []).append(m.id)
        elif phase in _WAITING:
            waiting.append(m.id)
            faulty_of[m.id] = getattr(m, "faulty", frozenset())
    waiting.sort()
    free = [r for r in range(capacity) if r not in claims]
    solo = dict(zip(waiting, free))
    extras = waiting[len(free):]
    if not extras:
        return SettlementPlan(solo, {}, {})
    hosts = {ids[0]: r for r, ids in claims.items() if len(ids) == 1}
    for rid, r in solo.items():
        hosts.setdefault(rid, r)
    paired, paired_rank = {}, {}
    for e in extras:
        for h in sorted(faulty_of[e]):
            if h in hosts and h != e:
                paired[e] = h
                paired_rank[e] = hosts.pop(h)
                break
    return SettlementPlan(solo, paired, paired_rank)


def _with_self(colocated, own):
    for c in colocated:
        if c.id == own.id:
            return colocated
    return tuple(colocated) + (own,)


# --------------------------------------------------------------------------
# step


def step_compute_byz(mem: ByzRobotMemory, obs: pc.Observation, params: pc.ProtocolParams = pc.SQUARE):
    base = mem.base
    if base.settled or base.phase == pc.Phase.Settled:
        raise ProtocolViolation(f"robot {base.id} computed after settling")
    own = mem
    here_corner = None
    if _audits(base):
        gates = pc.gates_of(base, params)
        here = _locate(base, obs)
        if here is None:
            raise ProtocolViolation(f"robot {base.id}: degree {obs.node_degree} impossible here")
        here_corner = MASK_CORNER.get(here)
        own = merge_seen_logs(mem, obs.colocated, here_corner, gates)
    entries = _with_self(obs.colocated, mem)
    fresh = own.faulty - mem.faulty if own is not mem else frozenset()
    choice = {}

    def allocator(m, o, capacity, corner):
        plan = build_settlement_plan(entries, capacity)
        rank = plan.rank_of(m.id)
        if rank is not None:
            if m.id in plan.paired:
                choice["host"] = plan.paired[m.id]
            return rank
        if fresh and m.round_ctr + 1 < pc.gates_of(m, params).g_columns_even:
            # a faulty claimant was exposed just now; once the accusation is
            # published next round it can host this robot
            for e in entries:
                if e.id in fresh and e.phase == pc.Phase.EvenAllocate:
                    return pc.HOLD
        return None

    new_base = base.clone()
    action = pc._advance(new_base, obs, params, allocator)
    new_base.round_ctr = base.round_ctr + 1
    out = ByzRobotMemory(new_base, own.assigned_at, own.faulty, own.declaration, own.version)
    if "host" in choice:
        out.declaration = choice["host"]
    return out, action
