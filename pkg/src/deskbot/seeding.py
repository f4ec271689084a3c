"""Stable seed derivation so every stochastic stream is a pure function of
the master seed plus a string path, independent of call order or platform."""

from __future__ import annotations

FNV_OFFSET = 14695981039346656037
FNV_PRIME = 1099511628211
_MASK64 = (1 << 64) - 1


def derive_seed(*parts) -> int:
    """Hash the parts (ints, floats, strings) into a 63-bit seed.

    Floats go through repr so 0.25 and 0.250 collide only when equal as
    floats; the separator byte keeps ("ab","c") and ("a","bc") distinct.
    """
    h = FNV_OFFSET
    for part in parts:
        if isinstance(part, bool) or not isinstance(part, (int, float, str)):
            raise TypeError(f"unsupported seed part {part!r}")
        data = repr(part).encode("utf-8") if not isinstance(part, str) else part.encode("utf-8")
        for b in data:
            h = ((h ^ b) * FNV_PRIME) & _MASK64
        h = ((h ^ 0x7C) * FNV_PRIME) & _MASK64
    return h >> 1
