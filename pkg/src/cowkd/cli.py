"""Command-line front end: simulate sessions, sweep curves, evaluate rates.

Machine-first output: session reports as JSON, per-batch metrics and sweep
curves as CSV. Exit codes: 0 success, 2 configuration error, 3 protocol
abort, 4 authentication alarm.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import ldpc
from .engine import (
    EXIT_ABORT,
    EXIT_CONFIG,
    EXIT_OK,
    AliceParty,
    BobParty,
    SessionAborted,
    SessionConfig,
    TcpTransport,
    parse_endpoint,
    run_session,
)
from .finitekey import (
    FiniteKeyBudget,
    PEMode,
    corrected_observables,
    secret_fraction_terms,
    secret_rate,
)
from .presets import channel_params, measured_point
from .sifting import SiftingMode, shannon_limit, sifting_cost

PE_MODES = {"compare": PEMode.KEY_COMPARISON, "subsample": PEMode.SUBSAMPLING}


def _psk_from_seed(seed_hex: str, n_bytes: int = 16384) -> bytes:
    """Deterministic simulation PSK so loopback parties agree without a file."""
    out = bytearray()
    counter = 0
    while len(out) < n_bytes:
        out.extend(hashlib.sha256(bytes.fromhex(seed_hex) + counter.to_bytes(4, "big")).digest())
        counter += 1
    return bytes(out[:n_bytes])


def _apply_config_file(args):
    """Merge a JSON settings file into the parsed args (flags win)."""
    if not getattr(args, "config", None):
        return args
    data = json.loads(Path(args.config).read_text())
    for key, value in data.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise ValueError(f"unknown config key {key!r}")
        if f"--{key}" not in sys.argv and f"--{attr}" not in sys.argv:
            setattr(args, attr, value)
    return args


def _build_config(args) -> SessionConfig:
    args = _apply_config_file(args)
    if args.channel_config:
        from .cowsim import ChannelParams

        params = ChannelParams.load(args.channel_config)
    else:
        params = channel_params(args.fibre_km)
    if args.compression == "auto":
        compression = None
    else:
        compression = float(args.compression) / 100.0
    seed_hex = args.seed or os.urandom(32).hex()
    if args.psk:
        psk = Path(args.psk).read_bytes()
    else:
        psk = _psk_from_seed(seed_hex)
    return SessionConfig(
        params=params,
        code_rate=args.rate,
        sift_bits=args.sift_bits,
        pe_mode=PE_MODES[args.pe_mode],
        compression=compression,
        n_batches=args.batches,
        blocks_per_batch=args.blocks_per_batch,
        chunk_qubits=args.chunk_qubits,
        seed_hex=seed_hex,
        psk=psk,
        enforce_compression_bound=not args.no_security_check,
    )


def _write_report(out_dir: Path, report: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    role = report["role"]
    with open(out_dir / f"report_{role}.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(out_dir / f"batches_{role}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["batch", "qber_raw", "qber_effective", "visibility_raw",
                    "visibility_corrected", "f_sec_measured", "compression",
                    "n_out_bits", "attempted_blocks", "dropped_blocks"])
        for row in report["per_batch"]:
            w.writerow([row["batch"], row["qber_raw"], row["qber_effective"],
                        row["visibility_raw"], row["visibility_corrected"],
                        row["f_sec_measured"], row["compression"],
                        row["n_out_bits"], row["attempted_blocks"],
                        row["dropped_blocks"]])


def _print_summary(report: dict):
    print(f"--- session summary ({report['role']}) ---")
    print(f"batches               {report['batches']}")
    print(f"sifted rate     [bps] {report['sifted_rate_bps']:.3e}")
    print(f"secret rate     [bps] {report['secret_rate_bps']:.3e}")
    print(f"authenticated   [bps] {report['authenticated_rate_bps']:.3e}")
    print(f"QBER raw/effective    {100 * report['qber_raw']:.2f} % / "
          f"{100 * report['qber_effective']:.2f} %")
    print(f"raw visibility        {100 * report['visibility_raw']:.2f} %")
    print(f"compression           {100 * report['compression']:.2f} %")
    print(f"classical bits/secret {report['classical_bits_per_secret_bit']:.1f}")
    shares = report["traffic_breakdown"]["shares"]
    if shares:
        print("traffic shares        "
              + "  ".join(f"{k}={100 * v:.2f}%" for k, v in shares.items()))
    if report["alarms"]:
        print("ALARMS:", "; ".join(report["alarms"]))


def cmd_run(args) -> int:
    try:
        config = _build_config(args)
    except (SessionAborted, KeyError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out)
    try:
        if args.transport == "loopback":
            report_a, report_b = run_session(config)
            _write_report(out_dir, report_a)
            _write_report(out_dir, report_b)
            _print_summary(report_b)
            if report_a["pool_digest"] != report_b["pool_digest"]:
                print("POOL MISMATCH", file=sys.stderr)
                return EXIT_ABORT
        else:
            host, port = parse_endpoint(args.transport.removeprefix("tcp:"))
            if args.role == "bob":
                transport = TcpTransport.listen_accept(host, port, timeout=args.timeout)
                party = BobParty(config, transport)
            elif args.role == "alice":
                transport = TcpTransport.connect(host, port, timeout=args.timeout)
                party = AliceParty(config, transport)
            else:
                print("tcp transport requires --role alice|bob", file=sys.stderr)
                return EXIT_CONFIG
            report = party.run()
            _write_report(out_dir, report)
            _print_summary(report)
    except SessionAborted as exc:
        print(f"session aborted: {exc}", file=sys.stderr)
        return exc.exit_code
    return EXIT_OK


def _parse_values(text: str) -> list[float]:
    if not text.strip():
        return []
    if ":" in text:  # geometric grid lo:hi:n
        lo, hi, n = text.split(":")
        return list(np.geomspace(float(lo), float(hi), int(n)))
    return [float(v) for v in text.split(",")]


def cmd_sweep(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        values = _parse_values(args.values)
    except ValueError as exc:
        print(f"bad sweep range: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.param == "sift-p":
        path = out_dir / "sift_cost.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["p_detect", "cost_6bit", "cost_14bit", "best_cost",
                        "shannon_limit", "best_over_shannon"])
            for p in values:
                c6 = sifting_cost(p, SiftingMode(6))
                c14 = sifting_cost(p, SiftingMode(14))
                sh = shannon_limit(p)
                best = min(c6, c14)
                w.writerow([p, c6, c14, best, sh, best / sh if sh else ""])
        print(f"wrote {path}")
        return EXIT_OK

    if args.param == "fibre-km":
        path = out_dir / "fibre_sweep.csv"
        rows = []
        for km in values:
            sub = argparse.Namespace(**vars(args))
            sub.fibre_km = km
            sub.out = str(out_dir / f"run_{km:g}km")
            sub.transport = "loopback"
            code = cmd_run(sub)
            if code != EXIT_OK:
                return code
            report = json.loads((Path(sub.out) / "report_bob.json").read_text())
            rows.append([km, report["sifted_rate_bps"], report["secret_rate_bps"],
                         report["authenticated_rate_bps"], report["qber_raw"],
                         report["qber_effective"], report["visibility_raw"],
                         report["compression"],
                         report["classical_bits_per_secret_bit"]])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fibre_km", "sifted_rate_bps", "secret_rate_bps",
                        "authenticated_rate_bps", "qber_raw", "qber_effective",
                        "visibility_raw", "compression",
                        "classical_bits_per_secret_bit"])
            w.writerows(rows)
        print(f"wrote {path}")
        return EXIT_OK

    print(f"unknown sweep parameter {args.param}", file=sys.stderr)
    return EXIT_CONFIG


def cmd_finite_key(args) -> int:
    budget = FiniteKeyBudget.reference()
    try:
        if args.fibre_km is not None:
            point = measured_point(args.fibre_km)
            obs = point.observables(pe_mode=PE_MODES[args.pe_mode])
            r_det = point.sifted_rate / ((1 - obs.p_decoy) / (1 + obs.p_decoy))
        else:
            required = ("mu", "qber_raw", "qber_effective", "visibility_raw")
            missing = [f for f in required if getattr(args, f.replace("-", "_")) is None]
            if missing:
                print(f"missing observables: {missing}", file=sys.stderr)
                return EXIT_CONFIG
            obs = corrected_observables(
                qber_raw=args.qber_raw, qber_effective=args.qber_effective,
                visibility_raw=args.visibility_raw, dark_qber=args.dark_qber,
                noise_qber=args.noise_qber, mu=args.mu,
                code_rate=float(ldpc.as_rate(args.rate)),
                pe_mode=PE_MODES[args.pe_mode],
            )
            r_det = args.detection_rate
    except (ValueError, KeyError) as exc:
        print(f"bad observables: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    terms = secret_fraction_terms(obs, budget, asymptotic=args.asymptotic)
    r_sec = secret_rate(r_det, obs.p_decoy, obs.pe_mode, terms["f_sec"],
                        args.auth_fraction)
    out = {
        "f_sec": terms["f_sec"],
        "r_sec_bps": r_sec,
        "terms": {k: (None if v == float("inf") else v) for k, v in terms.items()},
        "budget": {
            "eps_pe_v": budget.eps_pe_v, "eps_smooth": budget.eps_smooth,
            "eps_pa": budget.eps_pa, "eps_ver": budget.eps_ver,
            "eps_mac": budget.eps_mac, "eps_qkd": budget.eps_qkd,
        },
        "observables": {
            "qber_raw": obs.qber_raw, "qber_effective": obs.qber_effective,
            "qber_corrected": obs.qber_corrected,
            "visibility_raw": obs.visibility_raw,
            "visibility_corrected": obs.visibility_corrected,
            "mu": obs.mu, "code_rate": obs.code_rate, "pe_mode": obs.pe_mode,
        },
        "asymptotic": args.asymptotic,
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_gen_psk(args) -> int:
    data = os.urandom(args.bytes)
    Path(args.path).write_bytes(data)
    print(f"wrote {args.bytes} bytes to {args.path}")
    return EXIT_OK


def _add_run_args(p):
    p.add_argument("--fibre-km", type=float, default=1.0)
    p.add_argument("--rate", default="3/4", choices=["1/2", "2/3", "3/4", "5/6"])
    p.add_argument("--sift-bits", type=int, default=14, choices=[6, 14])
    p.add_argument("--pe-mode", default="compare", choices=list(PE_MODES))
    p.add_argument("--compression", default="auto",
                   help="percent (e.g. 11.5) or 'auto'")
    p.add_argument("--batches", type=int, default=3)
    p.add_argument("--blocks-per-batch", type=int, default=512)
    p.add_argument("--chunk-qubits", type=int, default=1 << 24)
    p.add_argument("--seed", default=None, help="hex256 for deterministic runs")
    p.add_argument("--psk", default=None, help="pre-shared key file")
    p.add_argument("--transport", default="loopback",
                   help="'loopback' or 'tcp:host:port'")
    p.add_argument("--role", default=None, choices=["alice", "bob"])
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--out", default="out")
    p.add_argument("--no-security-check", action="store_true",
                   help="skip the per-batch compression bound (test runs)")
    p.add_argument("--config", default=None,
                   help="JSON file with run settings (explicit flags win)")
    p.add_argument("--channel-config", default=None,
                   help="JSON channel parameter file overriding the preset")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cowkd",
        description="coherent one-way QKD distillation engine and simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a distillation session")
    _add_run_args(p_run)
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep a parameter and emit a CSV curve")
    p_sweep.add_argument("--param", required=True, choices=["fibre-km", "sift-p"])
    p_sweep.add_argument("--values", required=True,
                         help="comma list or lo:hi:n geometric grid")
    _add_run_args(p_sweep)
    p_sweep.set_defaults(func=cmd_sweep)

    p_fk = sub.add_parser("finite-key", help="evaluate the finite-key secret fraction")
    p_fk.add_argument("--fibre-km", type=float, default=None,
                      help="use a measured preset's observables")
    p_fk.add_argument("--mu", type=float, default=None)
    p_fk.add_argument("--qber-raw", dest="qber_raw", type=float, default=None)
    p_fk.add_argument("--qber-effective", dest="qber_effective", type=float, default=None)
    p_fk.add_argument("--visibility-raw", dest="visibility_raw", type=float, default=None)
    p_fk.add_argument("--dark-qber", dest="dark_qber", type=float, default=0.0)
    p_fk.add_argument("--noise-qber", dest="noise_qber", type=float, default=0.0)
    p_fk.add_argument("--rate", default="3/4")
    p_fk.add_argument("--pe-mode", default="compare", choices=list(PE_MODES))
    p_fk.add_argument("--detection-rate", type=float, default=1.0,
                      help="detections per second feeding the rate output")
    p_fk.add_argument("--auth-fraction", type=float, default=0.0)
    p_fk.add_argument("--asymptotic", action="store_true")
    p_fk.set_defaults(func=cmd_finite_key)

    p_psk = sub.add_parser("gen-psk", help="write a random pre-shared key file")
    p_psk.add_argument("path")
    p_psk.add_argument("--bytes", type=int, default=16384)
    p_psk.set_defaults(func=cmd_gen_psk)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
