"""Post-correction key verification and exact error-rate estimation.

Each corrected 1944-bit block is checked with a 48-bit polynomial hash over
GF(2^48), keyed by a fresh random seed per block. Failed blocks are dropped;
the error estimate charges every dropped block a worst-case error rate of
one half, which is what makes comparison-based estimation conservative.

Field: GF(2)[x] / (x^48 + x^5 + x^3 + x^2 + 1). The message is padded from
1944 to 2048 bits with zeros and split into 43 limbs of 48 bits each
(little-endian byte order inside a limb, the final 32-bit remainder
zero-extended). The tag is sum(c_i * s^i, i=1..43): no constant term, so the
all-zero message hashes to zero for every seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bitops import pack_bits
from .randomness import RandomStream

BLOCK_BITS = 1944
PADDED_BITS = 2048
LIMB_BITS = 48
N_LIMBS = 43  # ceil(2048 / 48)
TAG_MASK = (1 << 48) - 1
REDUCTION_TAIL = 0x2D  # x^48 == x^5 + x^3 + x^2 + 1
FIELD_POLY = (1 << 48) | REDUCTION_TAIL


class ProtocolAbort(RuntimeError):
    """Raised when the verification exchange is malformed."""


# ---------------------------------------------------------------------------
# field arithmetic
# ---------------------------------------------------------------------------

def gf48_mul(a: int, b: int) -> int:
    """Scalar product in GF(2^48); reference path for the vector core."""
    r = 0
    while b:
        if b & 1:
            r ^= a
        b >>= 1
        a <<= 1
    while r >> 48:
        high = r >> 48
        r = (r & TAG_MASK) ^ high ^ (high << 2) ^ (high << 3) ^ (high << 5)
    return r


def _fold48(v: np.ndarray) -> np.ndarray:
    high = v >> np.uint64(48)
    return (v & np.uint64(TAG_MASK)) ^ high ^ (high << np.uint64(2)) \
        ^ (high << np.uint64(3)) ^ (high << np.uint64(5))


def gf48_mul_vec(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise GF(2^48) product of uint64 arrays (values < 2^48)."""
    a = np.asarray(a, dtype=np.uint64)
    b = np.asarray(b, dtype=np.uint64)
    lo = np.zeros(np.broadcast(a, b).shape, dtype=np.uint64)
    hi = np.zeros_like(lo)
    for k in range(48):
        mask = np.where((b >> np.uint64(k)) & np.uint64(1), ~np.uint64(0), np.uint64(0))
        lo ^= (a << np.uint64(k)) & mask
        if k:
            hi ^= (a >> np.uint64(64 - k)) & mask
    # degree <= 94: bits 48..63 of lo plus all of hi form the overflow part
    over = (lo >> np.uint64(48)) | (hi << np.uint64(16))
    r = (lo & np.uint64(TAG_MASK)) ^ over ^ (over << np.uint64(2)) \
        ^ (over << np.uint64(3)) ^ (over << np.uint64(5))
    r = _fold48(r)
    return _fold48(r)


# ---------------------------------------------------------------------------
# hashing
# ---------------------------------------------------------------------------

def _limbs_from_bits(bits: np.ndarray) -> list[int]:
    if bits.size != PADDED_BITS:
        raise ValueError(f"message must be {PADDED_BITS} bits, got {bits.size}")
    data = pack_bits(bits)
    limbs = []
    for i in range(N_LIMBS):
        chunk = data[6 * i : 6 * i + 6]
        limbs.append(int.from_bytes(chunk, "little"))
    return limbs


def _pad_block(block_bits: np.ndarray) -> np.ndarray:
    block_bits = np.asarray(block_bits, dtype=np.uint8)
    if block_bits.size == PADDED_BITS:
        return block_bits
    if block_bits.size != BLOCK_BITS:
        raise ValueError(f"block must be {BLOCK_BITS} bits, got {block_bits.size}")
    return np.concatenate([block_bits, np.zeros(PADDED_BITS - BLOCK_BITS, dtype=np.uint8)])


def poly_hash48(message_bits: np.ndarray, seed: int) -> int:
    """48-bit polynomial hash of a 2048-bit message at evaluation point `seed`."""
    limbs = _limbs_from_bits(np.asarray(message_bits, dtype=np.uint8))
    acc = 0
    for c in reversed(limbs):
        acc = gf48_mul(acc, seed) ^ c
    return gf48_mul(acc, seed)


def _limb_matrix(blocks: np.ndarray) -> np.ndarray:
    """(n_blocks, 43) uint64 limb matrix for a (n_blocks, 1944) bit array."""
    n = blocks.shape[0]
    padded = np.zeros((n, PADDED_BITS), dtype=np.uint8)
    padded[:, :BLOCK_BITS] = blocks
    packed = np.packbits(padded, axis=1)  # (n, 256)
    limbs = np.zeros((n, N_LIMBS), dtype=np.uint64)
    for i in range(N_LIMBS):
        chunk = packed[:, 6 * i : 6 * i + 6]
        value = np.zeros(n, dtype=np.uint64)
        for j in range(chunk.shape[1]):
            value |= chunk[:, j].astype(np.uint64) << np.uint64(8 * j)
        limbs[:, i] = value
    return limbs


def hash_blocks(blocks: np.ndarray, seeds: np.ndarray) -> np.ndarray:
    """Vectorized per-block hashing: one seed per 1944-bit block row."""
    blocks = np.asarray(blocks, dtype=np.uint8)
    if blocks.ndim != 2 or blocks.shape[1] != BLOCK_BITS:
        raise ValueError("blocks must be (n, 1944)")
    seeds = np.asarray(seeds, dtype=np.uint64)
    limbs = _limb_matrix(blocks)
    acc = np.zeros(blocks.shape[0], dtype=np.uint64)
    for i in range(N_LIMBS - 1, -1, -1):
        acc = gf48_mul_vec(acc, seeds) ^ limbs[:, i]
    return gf48_mul_vec(acc, seeds)


# ---------------------------------------------------------------------------
# protocol records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationTag:
    block_index: int
    seed: int
    tag: int

    WIRE_BYTES = 14  # 16-bit index, 48-bit seed, 48-bit tag

    def to_bytes(self) -> bytes:
        return (self.block_index.to_bytes(2, "big")
                + self.seed.to_bytes(6, "big")
                + self.tag.to_bytes(6, "big"))

    @classmethod
    def from_bytes(cls, data: bytes) -> "VerificationTag":
        if len(data) != cls.WIRE_BYTES:
            raise ProtocolAbort("verification tag record has wrong size")
        return cls(
            block_index=int.from_bytes(data[0:2], "big"),
            seed=int.from_bytes(data[2:8], "big"),
            tag=int.from_bytes(data[8:14], "big"),
        )


def make_tags(blocks: np.ndarray, rng: RandomStream, first_index: int = 0) -> list[VerificationTag]:
    """Hash every block under a fresh 48-bit seed drawn from `rng`."""
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.uint8))
    seeds = np.array([rng.draw_int(48) for _ in range(blocks.shape[0])], dtype=np.uint64)
    tags = hash_blocks(blocks, seeds)
    return [VerificationTag(first_index + i, int(seeds[i]), int(tags[i]))
            for i in range(blocks.shape[0])]


def verify_batch(blocks: np.ndarray, tags: list[VerificationTag]) -> np.ndarray:
    """Recompute tags on local blocks; True where the received tag matches."""
    blocks = np.atleast_2d(np.asarray(blocks, dtype=np.uint8))
    if blocks.shape[0] != len(tags):
        raise ProtocolAbort(
            f"tag count mismatch: {len(tags)} tags for {blocks.shape[0]} blocks")
    seeds = np.array([t.seed for t in tags], dtype=np.uint64)
    local = hash_blocks(blocks, seeds)
    received = np.array([t.tag for t in tags], dtype=np.uint64)
    return local == received


def eps_ver_bound(n_blocks: int = 512, n_chunks: int = N_LIMBS) -> float:
    """Union bound on an undetected mismatch across a verification batch."""
    return n_blocks * n_chunks / float(1 << 48)


# ---------------------------------------------------------------------------
# error-rate estimation by key comparison
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchEstimate:
    n_blocks: int
    n_dropped: int
    mismatch_count: int
    qber_raw: float
    qber_effective: float


def estimate_qber(alice_original: np.ndarray, alice_corrected: np.ndarray,
                  drop_flags: np.ndarray) -> BatchEstimate:
    """Exact error counting over passed blocks, worst-casing dropped ones.

    `alice_original` holds the bits Alice prepared, `alice_corrected` the
    blocks after syndrome decoding toward the received key; both are
    (n_blocks, 1944). Dropped blocks enter the effective rate at 1/2.
    """
    orig = np.atleast_2d(np.asarray(alice_original, dtype=np.uint8))
    corr = np.atleast_2d(np.asarray(alice_corrected, dtype=np.uint8))
    flags = np.asarray(drop_flags, dtype=bool)
    if orig.shape != corr.shape or orig.shape[0] != flags.size:
        raise ValueError("misaligned estimation inputs")
    n_blocks = orig.shape[0]
    passed = flags
    mismatches = int((orig[passed] ^ corr[passed]).sum())
    n_dropped = int(n_blocks - passed.sum())
    n_passed_bits = int(passed.sum()) * BLOCK_BITS
    qber_raw = mismatches / n_passed_bits if n_passed_bits else 0.0
    qber_effective = (mismatches + 0.5 * n_dropped * BLOCK_BITS) / (n_blocks * BLOCK_BITS)
    return BatchEstimate(n_blocks, n_dropped, mismatches, qber_raw, qber_effective)
