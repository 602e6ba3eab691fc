"""Fixed-width bit packing of robot memories."""
from __future__ import annotations

from .errors import RegisterOverflow


def pack_fields(values, widths) -> tuple[int, int]:
    """Pack ``(name, value)`` pairs into one integer; return (bits, length)."""
    acc = 0
    length = 0
    for name, value in values:
        w = widths[name]
        if not isinstance(value, int) or value < 0 or value >> w:
            raise RegisterOverflow(f"{name}={value!r} does not fit in {w} bits")
        acc = (acc << w) | value
        length += w
    return acc, length


def unpack_fields(bits: int, names, widths) -> dict[str, int]:
    out = {}
    shift = sum(widths[n] for n in names)
    for name in names:
        w = widths[name]
        shift -= w
        out[name] = (bits >> shift) & ((1 << w) - 1)
    return out
