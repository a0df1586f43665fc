"""Service-channel framing: 1-byte channel id, 3-byte length, payload.

All channels except `admin` count toward authentication: their bytes (frame
headers included) form the per-direction tagged units. Admin frames carry
diagnostics only and are excluded from the accounting.
"""

from __future__ import annotations

from dataclasses import dataclass

CH_SIFTING = 1
CH_SYNDROME = 2
CH_VERIFY = 3
CH_PA_SEED = 4
CH_AUTH_TAG = 5
CH_CONTROL = 6
CH_ADMIN = 7

CHANNEL_NAMES = {
    CH_SIFTING: "sifting",
    CH_SYNDROME: "syndrome",
    CH_VERIFY: "verify",
    CH_PA_SEED: "pa_seed",
    CH_AUTH_TAG: "auth_tag",
    CH_CONTROL: "control",
    CH_ADMIN: "admin",
}

MAX_PAYLOAD = (1 << 24) - 1
HEADER_BYTES = 4


class FrameError(ValueError):
    pass


@dataclass(frozen=True)
class Frame:
    channel_id: int
    payload: bytes

    @property
    def wire_bytes(self) -> int:
        return HEADER_BYTES + len(self.payload)

    @property
    def authenticated(self) -> bool:
        return self.channel_id != CH_ADMIN


def encode_frame(channel_id: int, payload: bytes) -> bytes:
    if channel_id not in CHANNEL_NAMES:
        raise FrameError(f"unknown channel {channel_id}")
    if len(payload) > MAX_PAYLOAD:
        raise FrameError("payload exceeds 3-byte length field")
    return bytes([channel_id]) + len(payload).to_bytes(3, "big") + payload


def decode_header(header: bytes) -> tuple[int, int]:
    if len(header) != HEADER_BYTES:
        raise FrameError("short frame header")
    channel_id = header[0]
    if channel_id not in CHANNEL_NAMES:
        raise FrameError(f"unknown channel {channel_id}")
    return channel_id, int.from_bytes(header[1:4], "big")
