"""Random bit supply: a 256-bit entropy seed expanded by a counter-mode DRBG.

A true-entropy seed (OS entropy, or a fixed value for reproducible runs) keys
an AES-256 counter-mode generator. Independent sub-streams for different
protocol purposes are separated by a 32-bit domain label occupying the top
bits of the 128-bit block counter, so their counter ranges can never overlap.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

SEED_BITS = 256
_BLOCK_BYTES = 16
# Blocks available to one domain: counter bits below the 32-bit label.
_DOMAIN_SPACE = 1 << 96


class CounterExhausted(RuntimeError):
    """The 96-bit per-domain block counter would wrap."""


@dataclass(frozen=True)
class EntropySeed:
    """256-bit DRBG seed with a label recording where it came from."""

    bits: bytes
    source: str  # "os" | "fixed"

    def __post_init__(self):
        if len(self.bits) != SEED_BITS // 8:
            raise ValueError(f"seed must be {SEED_BITS} bits")

    @classmethod
    def from_os(cls) -> "EntropySeed":
        import os

        return cls(os.urandom(SEED_BITS // 8), "os")

    @classmethod
    def from_hex(cls, hex256: str) -> "EntropySeed":
        raw = bytes.fromhex(hex256)
        if len(raw) != SEED_BITS // 8:
            raise ValueError("seed must be 64 hex characters (256 bits)")
        return cls(raw, "fixed")

    @classmethod
    def from_int(cls, value: int) -> "EntropySeed":
        """Convenience for tests: expand a small integer to a fixed seed."""
        return cls(value.to_bytes(SEED_BITS // 8, "big"), "fixed")


class RandomStream:
    """Deterministic bit stream from an AES-256-CTR expansion of a seed.

    Single-owner: a stream may be handed between threads but must not be
    drawn from concurrently. Output is a pure function of (seed, domain,
    cumulative bits drawn); drawing 64 bits twice equals drawing 128 once.
    """

    def __init__(self, seed: EntropySeed, domain: int = 0):
        if not 0 <= domain < (1 << 32):
            raise ValueError("domain label must fit in 32 bits")
        self.seed = seed
        self.domain = domain
        self._cipher = Cipher(algorithms.AES(seed.bits), modes.ECB())
        self._block = 0  # next 128-bit block index within this domain
        self._buf = b""
        self._buf_bits = 0  # unread bits remaining in _buf (from its tail)
        self.bits_emitted = 0
        self._children: set[int] = set()

    # -- raw block generation -------------------------------------------------

    def _raw_blocks(self, n_blocks: int) -> bytes:
        if self._block + n_blocks > _DOMAIN_SPACE:
            raise CounterExhausted(
                f"domain {self.domain} exhausted after {self._block} blocks"
            )
        counters = np.zeros((n_blocks, _BLOCK_BYTES), dtype=np.uint8)
        idx = np.arange(self._block, self._block + n_blocks, dtype=np.uint64)
        counters[:, 0:4] = np.frombuffer(
            np.uint32(self.domain).byteswap().tobytes(), dtype=np.uint8
        )
        # low 64 bits of the counter, big-endian; blocks beyond 2**64 spill
        # into bytes 4..8, which desk-scale runs never reach
        high = (idx >> np.uint64(32)).astype(np.uint32)
        low = (idx & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        counters[:, 8:12] = high.byteswap().view(np.uint8).reshape(-1, 4)
        counters[:, 12:16] = low.byteswap().view(np.uint8).reshape(-1, 4)
        self._block += n_blocks
        enc = self._cipher.encryptor()
        return enc.update(counters.tobytes()) + enc.finalize()

    # -- public draws ----------------------------------------------------------

    def draw_bytes(self, n: int) -> bytes:
        """Draw n bytes. Byte draws are aligned to the bit stream."""
        return pack_exact(self.draw_bits(8 * n))

    def draw_bits(self, n: int) -> np.ndarray:
        """Draw n bits as a uint8 0/1 array, advancing the stream."""
        if n < 0:
            raise ValueError("n must be >= 0")
        if n == 0:
            return np.zeros(0, dtype=np.uint8)
        out = np.empty(n, dtype=np.uint8)
        filled = 0
        if self._buf_bits:
            take = min(n, self._buf_bits)
            all_bits = np.unpackbits(np.frombuffer(self._buf, dtype=np.uint8))
            start = all_bits.size - self._buf_bits
            out[:take] = all_bits[start : start + take]
            self._buf_bits -= take
            filled = take
        remaining = n - filled
        if remaining:
            n_blocks = (remaining + 127) // 128
            raw = self._raw_blocks(n_blocks)
            bits = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))
            out[filled:] = bits[:remaining]
            leftover = bits.size - remaining
            if leftover:
                self._buf = raw
                self._buf_bits = leftover
            else:
                self._buf = b""
                self._buf_bits = 0
        self.bits_emitted += n
        return out

    def draw_uniform(self, n: int) -> np.ndarray:
        """n floats uniform on [0, 1) with 32-bit resolution."""
        raw = self.draw_bits(32 * n)
        words = np.packbits(raw).view(">u4").astype(np.uint64)
        return words.astype(np.float64) / float(1 << 32)

    def draw_int(self, bits: int) -> int:
        from .bitops import bits_to_int

        return bits_to_int(self.draw_bits(bits))

    def substream(self, label: int) -> "RandomStream":
        """Independent stream over a disjoint counter range.

        Labels must be nonzero, unique per parent, and distinct from the
        parent's own domain.
        """
        if label == 0 or label == self.domain:
            raise ValueError("substream label must be nonzero and != parent domain")
        if label in self._children:
            raise ValueError(f"substream label {label} already issued")
        self._children.add(label)
        return RandomStream(self.seed, domain=label)


def pack_exact(bits: np.ndarray) -> bytes:
    if bits.size % 8:
        raise ValueError("bit count not byte aligned")
    return np.packbits(bits).tobytes()


def new_stream(seed: EntropySeed) -> RandomStream:
    """Root stream at block 0 of domain 0."""
    return RandomStream(seed)
