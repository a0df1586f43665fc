"""Bit-array helpers shared across the package.

Bit strings are numpy uint8 arrays holding one bit per element (values 0/1).
Packed wire representations use big-endian bit order within each byte,
matching numpy's packbits/unpackbits default.
"""

from __future__ import annotations

import numpy as np


def pack_bits(bits: np.ndarray) -> bytes:
    """Pack a 0/1 array into bytes, big-endian bit order, zero padded."""
    return np.packbits(np.asarray(bits, dtype=np.uint8)).tobytes()


def unpack_bits(data: bytes, n_bits: int) -> np.ndarray:
    """Unpack `n_bits` bits from bytes (big-endian bit order)."""
    if n_bits > 8 * len(data):
        raise ValueError(f"need {n_bits} bits, got {8 * len(data)}")
    return np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=n_bits)


def bits_to_int(bits: np.ndarray) -> int:
    """Interpret a bit array as a big-endian unsigned integer."""
    value = 0
    for b in np.asarray(bits, dtype=np.uint8):
        value = (value << 1) | int(b)
    return value


def int_to_bits(value: int, width: int) -> np.ndarray:
    """Big-endian bit array of `value`, exactly `width` bits."""
    if value < 0 or value >> width:
        raise ValueError(f"{value} does not fit in {width} bits")
    return np.array([(value >> (width - 1 - i)) & 1 for i in range(width)], dtype=np.uint8)


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise ValueError("length mismatch")
    return (np.frombuffer(a, dtype=np.uint8) ^ np.frombuffer(b, dtype=np.uint8)).tobytes()
