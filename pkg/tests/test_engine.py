import threading

import numpy as np
import pytest

from cowkd.auth import TAG_BITS, parse_psk
from cowkd.engine import (
    EXIT_CONFIG,
    AuthAlarm,
    DeliveryFrozen,
    InsufficientKey,
    LoopbackTransport,
    PadsExhausted,
    SecretKeyPool,
    SessionAborted,
    SessionConfig,
    TcpTransport,
    decode_header,
    encode_frame,
    run_session,
)
from cowkd.engine.frames import CH_ADMIN, CH_SIFTING, FrameError
from cowkd.engine.session import AliceParty, BobParty
from cowkd.presets import channel_params

PSK = bytes(range(256)) * 32  # 8 KiB deterministic test PSK
SEED = "ab" * 32


def small_config(**kw):
    defaults = dict(
        params=channel_params(1.0),
        n_batches=2,
        blocks_per_batch=8,
        chunk_qubits=1 << 21,
        seed_hex=SEED,
        psk=PSK,
        compression=0.115,
        enforce_compression_bound=False,
    )
    defaults.update(kw)
    return SessionConfig(**defaults)


# ---------------------------------------------------------------------------
# frames and transports
# ---------------------------------------------------------------------------

def test_frame_roundtrip():
    raw = encode_frame(CH_SIFTING, b"hello")
    channel, length = decode_header(raw[:4])
    assert channel == CH_SIFTING and length == 5
    assert raw[4:] == b"hello"


def test_frame_rejects_bad_channel_and_size():
    with pytest.raises(FrameError):
        encode_frame(99, b"")
    with pytest.raises(FrameError):
        encode_frame(CH_SIFTING, b"x" * (1 << 24))
    with pytest.raises(FrameError):
        decode_header(bytes([99, 0, 0, 0]))


def test_loopback_transport_ordering():
    a, b = LoopbackTransport.pair(timeout=5)
    a.send(b"abc")
    a.send(b"def")
    assert b.recv_exact(6) == b"abcdef"
    b.send(b"xy")
    assert a.recv_exact(2) == b"xy"


def test_tcp_transport_roundtrip():
    import socket

    srv_ready = threading.Event()
    got = {}

    def server():
        t = TcpTransport.listen_accept("127.0.0.1", 0 or 39417, timeout=10)
        got["data"] = t.recv_exact(4)
        t.send(b"pong")
        t.close()

    th = threading.Thread(target=server, daemon=True)
    th.start()
    client = TcpTransport.connect("127.0.0.1", 39417, timeout=10)
    client.send(b"ping")
    assert client.recv_exact(4) == b"pong"
    client.close()
    th.join(5)
    assert got["data"] == b"ping"


# ---------------------------------------------------------------------------
# key pool
# ---------------------------------------------------------------------------

def make_pool(**kw):
    return SecretKeyPool(parse_psk(PSK), **kw)


def test_pool_psk_pads_then_reserved_stream():
    pool = make_pool(pad_reserve_target=4)
    n_psk = (len(PSK) - 16) // 16
    p0 = pool.take_pad(0)
    assert 0 <= p0 < (1 << 127)
    with pytest.raises(PadsExhausted):
        pool.take_pad(0)  # single use
    with pytest.raises(PadsExhausted):
        pool.take_pad(n_psk)  # nothing produced yet
    rng = np.random.default_rng(3)
    pool.append(rng.integers(0, 2, size=2000).astype(np.uint8))
    v1 = pool.take_pad(n_psk)
    v2 = pool.take_pad(n_psk + 1)
    assert v1 != v2
    assert pool.ledger.consumed_auth == 2 * TAG_BITS


def test_pool_pad_order_independence():
    rng = np.random.default_rng(4)
    bits = rng.integers(0, 2, size=3000).astype(np.uint8)
    a = make_pool()
    b = make_pool()
    a.append(bits)
    b.append(bits)
    n_psk = (len(PSK) - 16) // 16
    idx = [n_psk, n_psk + 2, n_psk + 1]
    vals_a = [a.take_pad(i) for i in idx]
    vals_b = [b.take_pad(i) for i in sorted(idx)]
    assert sorted(vals_a) == sorted(vals_b)
    assert a.digest() == b.digest()


def test_pool_delivery_disjoint_and_zeroized():
    pool = make_pool(pad_reserve_target=0)
    rng = np.random.default_rng(5)
    pool.append(rng.integers(0, 2, size=4096).astype(np.uint8))
    k1 = pool.deliver(128, "app")
    k2 = pool.deliver(128, "app")
    assert k1 != k2
    assert pool.ledger.delivered == 256
    # a second pool fed the same key and asked later must not see k1 again
    with pytest.raises(InsufficientKey):
        pool.deliver(1 << 20, "greedy")
    assert pool.ledger.remaining == 4096 - 256


def test_pool_delivery_cadence_identity():
    # 30 fresh 128-bit keys per second needs exactly 3840 bps of delivery
    pool = make_pool(pad_reserve_target=0)
    rng = np.random.default_rng(6)
    pool.append(rng.integers(0, 2, size=3840).astype(np.uint8))
    for _ in range(30):
        pool.deliver(128, "encryptor")
    assert pool.deliverable_bits == 0
    assert 30 * 128 == 3840


def test_pool_freeze_blocks_delivery():
    pool = make_pool(pad_reserve_target=0)
    pool.append(np.ones(512, dtype=np.uint8))
    pool.freeze()
    with pytest.raises(DeliveryFrozen):
        pool.deliver(128, "app")


# ---------------------------------------------------------------------------
# sessions
# ---------------------------------------------------------------------------

def test_loopback_session_pools_identical():
    ra, rb = run_session(small_config())
    assert ra["pool_digest"] == rb["pool_digest"]
    assert ra["secret_bits"] > 0
    assert ra["alarms"] == [] and rb["alarms"] == []
    assert ra["transcript"]["out"] == rb["transcript"]["in"]
    assert ra["transcript"]["in"] == rb["transcript"]["out"]


def test_loopback_session_deterministic_across_runs():
    ra1, rb1 = run_session(small_config())
    ra2, rb2 = run_session(small_config())
    assert ra1["transcript"] == ra2["transcript"]
    assert rb1["pool_digest"] == rb2["pool_digest"]
    assert ra1["per_batch"] == ra2["per_batch"]


def test_session_observables_match_calibration():
    ra, rb = run_session(small_config(n_batches=3))
    qbers = [row["qber_raw"] for row in ra["per_batch"]]
    assert np.mean(qbers) == pytest.approx(0.017, abs=0.004)
    # per-batch visibility carries ~0.005 statistical noise at this size
    vis = [row["visibility_raw"] for row in ra["per_batch"]]
    assert np.mean(vis) == pytest.approx(0.9814, abs=0.012)
    assert rb["sifted_fraction"] == pytest.approx(0.732, abs=0.02)


def test_session_auth_reconciliation():
    ra, rb = run_session(small_config())
    # both directions tag the same number of units; every pad is 127 bits
    assert ra["auth_units"] == rb["auth_units"]
    n_psk = (len(PSK) - 16) // 16
    pool_pads = max(0, ra["pool"]["pads_taken"] - n_psk)
    assert ra["pool"]["consumed_auth_bits"] == pool_pads * TAG_BITS


def test_session_with_heavy_drops_still_agrees():
    # rate 5/6 at a 1.7 % channel fails most blocks; the batch must refill
    # from later passing windows and both pools must still match
    cfg = small_config(code_rate="5/6", n_batches=1, blocks_per_batch=4)
    ra, rb = run_session(cfg)
    assert ra["pool_digest"] == rb["pool_digest"]
    assert ra["per_batch"][0]["dropped_blocks"] > 0
    assert ra["qber_effective"] > ra["qber_raw"]


def test_subsample_mode_runs_and_costs_more_traffic():
    # fine chunks so the +1/0.875 sifting demand shows through granularity
    ra_c, rb_c = run_session(small_config(n_batches=1, chunk_qubits=1 << 19))
    cfg_s = small_config(n_batches=1, pe_mode="subsampling", chunk_qubits=1 << 19)
    ra_s, rb_s = run_session(cfg_s)
    assert ra_s["pool_digest"] == rb_s["pool_digest"]
    assert ra_s["secret_bits"] > 0
    extra = ra_s["classical_bits_total"] / ra_c["classical_bits_total"] - 1
    assert 0.05 < extra < 0.35, extra


def test_alice_buffer_overflow_aborts():
    cfg_small_buffer = small_config(chunk_qubits=1 << 21, alice_buffer_qubits=1 << 21)
    # Bob announces chunks larger than Alice's buffer: alice sees the
    # violation at the first sifting frame
    cfg_big_chunks = small_config(chunk_qubits=1 << 22, alice_buffer_qubits=1 << 22)
    ta, tb = LoopbackTransport.pair(timeout=20)
    alice = AliceParty(cfg_small_buffer, ta)
    bob = BobParty(cfg_big_chunks, tb)
    errors = {}

    def run(name, party):
        try:
            party.run()
        except BaseException as exc:
            errors[name] = exc

    ths = [threading.Thread(target=run, args=("alice", alice), daemon=True),
           threading.Thread(target=run, args=("bob", bob), daemon=True)]
    for t in ths:
        t.start()
    for t in ths:
        t.join(30)
    assert any(isinstance(e, SessionAborted) for e in errors.values())


class _TamperTransport:
    """Flips one byte in the nth sent frame payload."""

    def __init__(self, inner, after_bytes: int):
        self._inner = inner
        self._remaining = after_bytes
        self.tampered = False

    def send(self, data: bytes):
        if not self.tampered and len(data) > 40 and self._remaining <= 0:
            buf = bytearray(data)
            buf[20] ^= 0x01
            data = bytes(buf)
            self.tampered = True
        self._remaining -= len(data)
        self._inner.send(data)

    def recv_exact(self, n):
        return self._inner.recv_exact(n)

    def close(self):
        self._inner.close()


def test_tampered_traffic_raises_auth_alarm_and_freezes():
    cfg = small_config(n_batches=1)
    ta, tb = LoopbackTransport.pair(timeout=20)
    evil = _TamperTransport(tb, after_bytes=2000)
    alice = AliceParty(cfg, ta)
    bob = BobParty(cfg, evil)
    errors = {}

    def run(name, party):
        try:
            party.run()
        except BaseException as exc:
            errors[name] = exc

    ths = [threading.Thread(target=run, args=("alice", alice), daemon=True),
           threading.Thread(target=run, args=("bob", bob), daemon=True)]
    for t in ths:
        t.start()
    for t in ths:
        t.join(60)
    assert any(isinstance(e, AuthAlarm) for e in errors.values()), errors
    assert alice.pool.frozen or bob.pool.frozen


def test_config_digest_mismatch_aborts():
    ta, tb = LoopbackTransport.pair(timeout=10)
    alice = AliceParty(small_config(), ta)
    bob = BobParty(small_config(code_rate="2/3"), tb)
    errors = {}

    def run(name, party):
        try:
            party.run()
        except BaseException as exc:
            errors[name] = exc

    ths = [threading.Thread(target=run, args=("a", alice), daemon=True),
           threading.Thread(target=run, args=("b", bob), daemon=True)]
    for t in ths:
        t.start()
    for t in ths:
        t.join(20)
    aborts = [e for e in errors.values() if isinstance(e, SessionAborted)]
    assert aborts and any(e.exit_code == EXIT_CONFIG for e in aborts)


def test_config_validation():
    with pytest.raises(SessionAborted):
        SessionConfig(psk=b"")  # missing pre-shared key
    with pytest.raises(SessionAborted):
        small_config(chunk_qubits=1 << 25, alice_buffer_qubits=1 << 24)


def test_pool_otp_utility_round_trip():
    a = make_pool(pad_reserve_target=0)
    b = make_pool(pad_reserve_target=0)
    rng = np.random.default_rng(9)
    bits = rng.integers(0, 2, size=4096).astype(np.uint8)
    a.append(bits)
    b.append(bits)
    msg = b"one-time pad demo payload"
    ct = a.otp_encrypt(msg)
    assert ct != msg
    # peer decrypts with the same pool consumption
    key = b.deliver(8 * len(msg), "otp")
    pt = bytes(c ^ k for c, k in zip(ct, key))
    assert pt == msg
    assert a.ledger.delivered == 8 * len(msg)


def test_traffic_shares_sum_to_one():
    ra, rb = run_session(small_config(n_batches=1))
    for rep in (ra, rb):
        shares = rep["traffic_breakdown"]["shares"]
        assert sum(shares.values()) == pytest.approx(1.0, abs=1e-9)


def test_classical_bits_per_secret_bit_near_published():
    # full-size batch at the 1 km preset; normalized at the published
    # 11.5 % compression the published figure is 217 classical bits per
    # secret bit (+-20 %)
    cfg = SessionConfig(params=channel_params(1.0), n_batches=1,
                        blocks_per_batch=512, chunk_qubits=1 << 24,
                        seed_hex=SEED, psk=PSK)
    ra, _ = run_session(cfg, timeout=900)
    normalized = ra["classical_bits_total"] / (0.115 * 995_328 * ra["batches"])
    assert 217 * 0.8 < normalized < 217 * 1.2, normalized


def test_session_with_short_sifting_blocks():
    # 6-bit mode floods the stream with overflow blocks at this detection
    # rate; the pipeline must still agree end to end
    ra, rb = run_session(small_config(n_batches=1, sift_bits=6))
    assert ra["pool_digest"] == rb["pool_digest"]
    assert ra["secret_bits"] > 0
    share6 = ra["traffic_breakdown"]["shares"]["sifting"]
    ra14, _ = run_session(small_config(n_batches=1))
    assert ra["classical_bits_total"] > ra14["classical_bits_total"]
