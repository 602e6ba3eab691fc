"""Oriented grid topology and port algebra.

Coordinates put row 0 on the north edge and column 0 on the west edge. They
exist for the simulator and the verifier; robot code only ever sees degrees
and port labels.

At every node the compass directions that are present, taken in the fixed
order W, S, E, N, receive labels 1, 2, 3, ... . An internal node is therefore
labelled 1=W, 2=S, 3=E, 4=N, and a boundary node closes the gap left by the
missing direction (the west column reads 1=S, 2=E, 3=N).

Sets of missing directions are carried around as 4-bit masks so that robots
can keep them in a register.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

from .errors import BadDimensions, BoundsError, NoSuchPort, NotAdjacent, NotInternal


class Dir(IntEnum):
    W = 0
    S = 1
    E = 2
    N = 3


DELTA = {Dir.W: (0, -1), Dir.S: (1, 0), Dir.E: (0, 1), Dir.N: (-1, 0)}


def opposite(d: int) -> int:
    return (d + 2) % 4


def perpendicular(d: int) -> tuple[int, int]:
    return ((d + 1) % 4, (d + 3) % 4)


def bit(d: int) -> int:
    return 1 << d


# corner tags, numbered in the order travelers visit them
SW, SE, NE, NW = 0, 1, 2, 3
CORNER_NAMES = ("SW", "SE", "NE", "NW")
CORNER_MASK = {
    SW: bit(Dir.S) | bit(Dir.W),
    SE: bit(Dir.S) | bit(Dir.E),
    NE: bit(Dir.N) | bit(Dir.E),
    NW: bit(Dir.N) | bit(Dir.W),
}
MASK_CORNER = {m: c for c, m in CORNER_MASK.items()}

# absent-direction masks that can occur on a grid with both sides >= 2
VALID_MASKS = (0,) + tuple(bit(d) for d in Dir) + tuple(CORNER_MASK.values())

_LABELS: dict[int, tuple[int, ...]] = {}
_DIRS: dict[int, dict[int, int]] = {}
for _m in VALID_MASKS:
    _present = tuple(d for d in Dir if not _m & bit(d))
    _LABELS[_m] = _present
    _DIRS[_m] = {int(d): i + 1 for i, d in enumerate(_present)}


def dir_of_label(absent: int, label: int) -> int:
    """Compass direction of port ``label`` at a node missing ``absent``."""
    present = _LABELS[absent]
    if not 1 <= label <= len(present):
        raise NoSuchPort(f"port {label} at a node of degree {len(present)}")
    return int(present[label - 1])


def label_of_dir(absent: int, d: int) -> int:
    try:
        return _DIRS[absent][d]
    except KeyError:
        raise NoSuchPort(f"direction {Dir(d).name} is missing here") from None


def step_absent(absent: int, d: int, new_degree: int) -> int | None:
    """Dead-reckon the missing-direction mask after one hop in direction ``d``.

    Moving along ``d`` keeps the perpendicular boundary status; the only new
    boundary that can appear is ``d`` itself, and the observed degree says
    whether it did. Returns None when no grid matches the observation.
    """
    kept = absent & (bit((d + 1) % 4) | bit((d + 3) % 4))
    missing = 4 - new_degree
    count = bin(kept).count("1")
    if count == missing:
        return kept
    if count + 1 == missing:
        return kept | bit(d)
    return None


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise BadDimensions(f"grid must be at least 2x2, got {self.height}x{self.width}")

    @property
    def n(self) -> int:
        return self.height * self.width

    @property
    def longest(self) -> int:
        return max(self.height, self.width)

    @property
    def is_square(self) -> bool:
        return self.height == self.width

    def nodes(self):
        for r in range(self.height):
            for c in range(self.width):
                yield NodeId(r, c)


class NodeId(NamedTuple):
    row: int
    col: int


class NodeClass(NamedTuple):
    kind: str  # "corner" | "boundary" | "internal"
    where: str | None = None


def _check(spec: GridSpec, node) -> None:
    r, c = node
    if not (0 <= r < spec.height and 0 <= c < spec.width):
        raise BoundsError(f"{tuple(node)} outside {spec.height}x{spec.width}")


def absent_mask(spec: GridSpec, node) -> int:
    r, c = node
    h, w = spec.height, spec.width
    if not (0 <= r < h and 0 <= c < w):
        raise BoundsError(f"{tuple(node)} outside {h}x{w}")
    return (c == 0) | ((r == h - 1) << 1) | ((c == w - 1) << 2) | ((r == 0) << 3)


_DEGREE = {m: 4 - bin(m).count("1") for m in VALID_MASKS}
# absent mask -> port label -> (dr, dc)
_HOPS = {m: {i + 1: DELTA[d] for i, d in enumerate(_LABELS[m])} for m in VALID_MASKS}
_DIR_OF_DELTA = {delta: int(d) for d, delta in DELTA.items()}


def degree_of(spec: GridSpec, node) -> int:
    return _DEGREE[absent_mask(spec, node)]


def neighbor(spec: GridSpec, node, port: int) -> NodeId:
    m = absent_mask(spec, node)
    hop = _HOPS[m].get(port)
    if hop is None:
        raise NoSuchPort(f"port {port} at a node of degree {_DEGREE[m]}")
    return NodeId(node[0] + hop[0], node[1] + hop[1])


def direction_between(a, b) -> int:
    d = _DIR_OF_DELTA.get((b[0] - a[0], b[1] - a[1]))
    if d is None:
        raise NotAdjacent(f"{tuple(a)} and {tuple(b)} are not adjacent")
    return d


def entry_port(spec: GridSpec, frm, to) -> int:
    """Label, at ``to``, of the edge joining ``frm`` and ``to``."""
    absent_mask(spec, frm)
    d = direction_between(frm, to)
    return _DIRS[absent_mask(spec, to)][(d + 2) % 4]


def straight_exit(degree: int, entry: int) -> int:
    if degree != 4:
        raise NotInternal(f"straight exit needs degree 4, got {degree}")
    if not 1 <= entry <= 4:
        raise NoSuchPort(f"entry port {entry}")
    return ((entry + 1) % 4) + 1


def classify_node(spec: GridSpec, node) -> NodeClass:
    m = absent_mask(spec, node)
    if m in MASK_CORNER:
        return NodeClass("corner", CORNER_NAMES[MASK_CORNER[m]])
    if m:
        return NodeClass("boundary", Dir(m.bit_length() - 1).name)
    return NodeClass("internal")


def corner_node(spec: GridSpec, tag: int) -> NodeId:
    south = tag in (SW, SE)
    west = tag in (SW, NW)
    return NodeId(spec.height - 1 if south else 0, 0 if west else spec.width - 1)


def candidate_masks(degree: int) -> tuple[int, ...]:
    """Missing-direction masks a robot must consider at a node of ``degree``.

    The position in the tuple is the hypothesis index used by localization.
    """
    if degree == 4:
        return (0,)
    if degree == 3:
        return tuple(bit(d) for d in Dir)
    if degree == 2:
        return tuple(CORNER_MASK[c] for c in (SW, SE, NE, NW))
    raise NoSuchPort(f"no grid node has degree {degree}")


def probe_consistent(absent: int, port: int, seen_degree: int, seen_entry: int) -> bool:
    """Could a node missing ``absent`` produce this probe through ``port``?"""
    try:
        d = dir_of_label(absent, port)
    except NoSuchPort:
        return False
    after = step_absent(absent, d, seen_degree)
    if after is None or after not in _DIRS:
        return False
    return _DIRS[after].get(opposite(d)) == seen_entry
