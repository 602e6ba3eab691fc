"""Strategies for adversary-controlled robots.

A strategy is a callable ``(view, robot_id) -> (memory | None, Action)``. It
sees the whole global state through an :class:`AdversaryView` and returns a
new memory for its own robot (None keeps the old one) plus an action. The
engine rejects writes that change the id or do not fit the memory size.
"""
from __future__ import annotations

import dataclasses

from . import protocol_byzantine as pbyz
from . import protocol_crash as pc
from .grid import DELTA, absent_mask, direction_between, label_of_dir

SCRIPTED = (
    "stay-put",
    "random-walk",
    "shadow-lowest-honest",
    "fake-assignment",
    "double-corner",
    "silent-at-declaration",
)


def _own(view, rid):
    return pbyz.clone(view.memories[rid])


def _sync(mem, view):
    mem.base.round_ctr = view.round + 1
    return mem


def _toward(view, target):
    """Port that moves one hop closer to ``target`` (rows first)."""
    r, c = view.position
    tr, tc = target
    if (r, c) == (tr, tc):
        return pc.STAY
    step = (r + (tr > r) - (tr < r), c) if r != tr else (r, c + (tc > c) - (tc < c))
    d = direction_between((r, c), step)
    return pc.Move(label_of_dir(absent_mask(view.grid, (r, c)), d))


def _corners(grid):
    h, w = grid.height - 1, grid.width - 1
    # tag order SW, SE, NE, NW
    return ((h, 0), (h, w), (0, w), (0, 0))


def _claim(mem, view, corner, rank):
    g = view.grid
    b = mem.base
    b.phase = pc.Phase.EvenAllocate
    b.side_a, b.side_b = g.height, g.width
    b.corner_tag = corner
    b.rank = rank
    b.hyp = 0
    return mem


def stay_put(view, rid):
    return _sync(_own(view, rid), view), pc.STAY


def random_walk(view, rid):
    deg = view.observation.node_degree
    return _sync(_own(view, rid), view), pc.Move(view.rng.randint(1, deg))


def shadow_lowest_honest(view, rid):
    """Follow the lowest honest robot and mirror its memory under our own id."""
    if not view.honest_ids:
        return stay_put(view, rid)
    target = min(view.honest_ids)
    mem = pbyz.clone(view.memories[target])
    mem.base.id = rid
    mem.base.round_ctr = view.round + 1
    mem.base.settled = 0
    if mem.base.phase == pc.Phase.Settled:
        mem.base.phase = pc.Phase.EvenAllocate
    return mem, _toward(view, view.positions[target])


def fake_assignment(view, rid):
    """Go to the nearest corner and claim its rank 0 from the start."""
    corners = _corners(view.grid)
    r, c = view.position
    tag = min(range(4), key=lambda k: (abs(corners[k][0] - r) + abs(corners[k][1] - c), k))
    mem = _claim(_sync(_own(view, rid), view), view, tag, 0)
    return mem, _toward(view, corners[tag])


def double_corner(view, rid):
    """Claim a slot at one corner, then walk to the next and claim there too."""
    corners = _corners(view.grid)
    mem = _sync(_own(view, rid), view)
    g = view.grid
    tag = (view.round // max(1, g.longest)) % 4
    rows, cols = pc.quadrant_dims(tag, g.height, g.width)
    mem = _claim(mem, view, tag, (rid + view.round) % max(1, rows * cols))
    return mem, _toward(view, corners[tag])


def silent_at_declaration(view, rid):
    """Sit next to an assigned honest robot and copy its rank with no declaration."""
    mem = _sync(_own(view, rid), view)
    here = [view.memories[o] for o, p in view.positions.items() if p == view.position and o in view.honest_ids]
    for m in sorted(here, key=lambda m: m.id):
        if m.phase == pc.Phase.EvenAllocate:
            mem = _claim(mem, view, m.corner_tag, m.rank)
            mem.declaration = None
            return mem, pc.STAY
    corners = _corners(view.grid)
    return mem, _toward(view, corners[rid % 4])


def forge_id(view, rid):
    """Try to rewrite the id register; the engine must refuse the write."""
    mem = _own(view, rid)
    mem.base.id = rid + 1
    return mem, pc.STAY


def seeded_random(seed: int):
    """A strategy mixing moves with random writes to the protocol registers."""

    def strategy(view, rid):
        rng = view.rng
        mem = _own(view, rid)
        g = view.grid
        roll = rng.random()
        b = mem.base
        if roll < 0.5:
            mem.base.round_ctr = view.round + 1
        if rng.random() < 0.3:
            tag = rng.randrange(4)
            rows, cols = pc.quadrant_dims(tag, g.height, g.width)
            _claim(mem, view, tag, rng.randrange(rows * cols))
        elif rng.random() < 0.2:
            b.phase = rng.choice((pc.Phase.WaitGate, pc.Phase.EvenTravel))
            b.side_a, b.side_b = g.height, g.width
        if rng.random() < 0.1 and view.honest_ids:
            mem.faulty = frozenset({rng.choice(sorted(view.honest_ids))})
        if rng.random() < 0.1:
            mem.declaration = rng.randrange(view.idmax + 1)
        deg = view.observation.node_degree
        if rng.random() < 0.4:
            act = pc.STAY
        elif rng.random() < 0.5:
            act = _toward(view, _corners(g)[rng.randrange(4)])
        else:
            act = pc.Move(rng.randint(1, deg))
        return mem, act

    strategy.__name__ = f"random-{seed}"
    return strategy


_TABLE = {
    "stay-put": stay_put,
    "random-walk": random_walk,
    "shadow-lowest-honest": shadow_lowest_honest,
    "fake-assignment": fake_assignment,
    "double-corner": double_corner,
    "silent-at-declaration": silent_at_declaration,
    "forge-id": forge_id,
}


def byz_strategy_lookup(name: str):
    """Resolve a strategy name; ``random-<k>`` gives seeded random strategy k."""
    if name in _TABLE:
        return _TABLE[name]
    if name.startswith("random-"):
        try:
            return seeded_random(int(name[len("random-"):]))
        except ValueError:
            pass
    raise KeyError(f"unknown adversary strategy {name!r}")


def strategy_names() -> list[str]:
    return list(_TABLE)
