"""Command-line entry points: daemons, subscriber client, key/subscriber
provisioning, the benchmark, and the simulator."""

from __future__ import annotations

import argparse
import configparser
import os
import sys

from . import PROTOCOL_IDS, __version__
from .crypto import CryptoSuite, derive_rng


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI file with an [akalab] section "
                                         "providing flag defaults")
    parser.add_argument("--seed", type=int, default=None,
                        help="deterministic test mode")


def _apply_config(args: argparse.Namespace) -> argparse.Namespace:
    if not getattr(args, "config", None):
        return args
    cp = configparser.ConfigParser()
    with open(args.config, "r", encoding="utf-8") as fh:
        cp.read_file(fh)
    section = cp["akalab"] if cp.has_section("akalab") else cp["DEFAULT"]
    for key, value in section.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) in (None, ""):
            current = getattr(args, attr)
            setattr(args, attr, type(current)(value) if current is not None
                    else value)
    return args


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="akalab",
        description="authentication and key agreement laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate home-network key pair and tunnel PSK")
    p.add_argument("--out-dir", required=True)
    _add_common(p)

    p = sub.add_parser("provision", help="write a subscriber file")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=3)
    p.add_argument("--prefix", default="ue")
    _add_common(p)

    p = sub.add_parser("hn", help="run the home-network daemon")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--subscribers", required=False, default="")
    p.add_argument("--sk", required=False, default="", help="private key file")
    p.add_argument("--psk", required=False, default="", help="tunnel PSK file")
    p.add_argument("--timeout", type=float, default=5.0)
    _add_common(p)

    p = sub.add_parser("sn", help="run the serving-network daemon")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--hn", required=False, default="", help="home network host:port")
    p.add_argument("--psk", required=False, default="")
    p.add_argument("--id-sn", default="sn.lab")
    p.add_argument("--timeout", type=float, default=5.0)
    _add_common(p)

    p = sub.add_parser("ue", help="run one authentication as a subscriber")
    p.add_argument("--sn", required=False, default="", help="serving network host:port")
    p.add_argument("--protocol", choices=sorted(PROTOCOL_IDS), default="p1")
    p.add_argument("--supi", required=False, default="")
    p.add_argument("--subscribers", required=False, default="",
                   help="subscriber file holding this SUPI's key")
    p.add_argument("--pk", required=False, default="", help="home-network public key file")
    p.add_argument("--id-hn", default="hn.lab")
    p.add_argument("--id-sn", default="sn.lab")
    p.add_argument("--timeout", type=float, default=5.0)
    _add_common(p)

    p = sub.add_parser("bench", help="operation/message audits and timing")
    p.add_argument("--protocol", choices=sorted(PROTOCOL_IDS) + ["all"],
                   default="all")
    p.add_argument("--case", choices=["1", "2", "3", "all"], default="all")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--timing-trials", type=int, default=300)
    p.add_argument("--no-timing", action="store_true")
    p.add_argument("--out", default="", help="also write the report here")
    _add_common(p)

    p = sub.add_parser("sim", help="run one simulated session")
    p.add_argument("--protocol", choices=sorted(PROTOCOL_IDS), default="p1")
    p.add_argument("--scenario", default="", help="adversary scenario file")
    p.add_argument("--supi", default="alice")
    p.add_argument("--frames-out", default="", help="write delivered frames here")
    p.add_argument("--log-out", default="", help="write the event log here")
    _add_common(p)

    args = _apply_config(parser.parse_args(argv))
    handler = {
        "keygen": _cmd_keygen,
        "provision": _cmd_provision,
        "hn": _cmd_hn,
        "sn": _cmd_sn,
        "ue": _cmd_ue,
        "bench": _cmd_bench,
        "sim": _cmd_sim,
    }[args.command]
    return handler(args)


def _cmd_keygen(args) -> int:
    from .service import write_hex_file
    os.makedirs(args.out_dir, exist_ok=True)
    suite = CryptoSuite(rng=derive_rng(args.seed, "keygen"))
    sk, pk = suite.keygen()
    write_hex_file(os.path.join(args.out_dir, "hn_sk.hex"),
                   sk.to_bytes(32, "big"))
    write_hex_file(os.path.join(args.out_dir, "hn_pk.hex"), pk)
    write_hex_file(os.path.join(args.out_dir, "tunnel_psk.hex"),
                   derive_rng(args.seed, "psk").randbytes(32))
    print(f"wrote hn_sk.hex, hn_pk.hex, tunnel_psk.hex to {args.out_dir}")
    return 0


def _cmd_provision(args) -> int:
    from .service import write_subscribers
    rng = derive_rng(args.seed, "subscribers")
    records = {f"{args.prefix}{i:03d}": rng.randbytes(32)
               for i in range(1, args.count + 1)}
    write_subscribers(args.out, records)
    print(f"wrote {len(records)} subscribers to {args.out}")
    return 0


def _require(args, names) -> bool:
    missing = [n for n in names if not getattr(args, n.replace("-", "_"))]
    if missing:
        print(f"missing required options: {', '.join('--' + n for n in missing)}",
              file=sys.stderr)
        return False
    return True


def _cmd_hn(args) -> int:
    from .service import (EXIT_USAGE, HnDaemon, ProvisioningError, build_db,
                          load_subscribers, read_hex_file, setup_logging)
    setup_logging()
    if not _require(args, ["subscribers", "sk", "psk"]):
        return EXIT_USAGE
    from .service import EndpointConfig
    host, port = EndpointConfig.parse_addr(args.listen)
    try:
        db = build_db(load_subscribers(args.subscribers))
    except ProvisioningError as exc:
        print(f"provisioning refused: {exc}", file=sys.stderr)
        return EXIT_USAGE
    sk = int.from_bytes(read_hex_file(args.sk), "big")
    psk = read_hex_file(args.psk)
    daemon = HnDaemon(host, port, sk, db, psk, seed=args.seed,
                      timeout=args.timeout)
    print(f"akalab-hn listening on {daemon.address[0]}:{daemon.address[1]}",
          flush=True)
    try:
        daemon.serve_forever()
    except KeyboardInterrupt:
        daemon.shutdown()
    return 0


def _cmd_sn(args) -> int:
    from .service import (EXIT_USAGE, EndpointConfig, SnDaemon, read_hex_file,
                          setup_logging)
    setup_logging()
    if not _require(args, ["hn", "psk"]):
        return EXIT_USAGE
    host, port = EndpointConfig.parse_addr(args.listen)
    hn_addr = EndpointConfig.parse_addr(args.hn)
    psk = read_hex_file(args.psk)
    daemon = SnDaemon(host, port, hn_addr, psk, id_sn=args.id_sn,
                      seed=args.seed, timeout=args.timeout)
    print(f"akalab-sn listening on {daemon.address[0]}:{daemon.address[1]}",
          flush=True)
    try:
        daemon.serve_forever()
    except KeyboardInterrupt:
        daemon.shutdown()
    return 0


def _cmd_ue(args) -> int:
    from .service import (EXIT_USAGE, EndpointConfig, ProvisioningError,
                          load_subscribers, read_hex_file, run_ue_client,
                          setup_logging)
    from .session import Usim
    setup_logging()
    if not _require(args, ["sn", "supi", "subscribers", "pk"]):
        return EXIT_USAGE
    try:
        records = load_subscribers(args.subscribers)
    except ProvisioningError as exc:
        print(f"provisioning refused: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.supi not in records:
        print(f"unknown SUPI {args.supi!r}", file=sys.stderr)
        return EXIT_USAGE
    usim = Usim(args.supi, records[args.supi], read_hex_file(args.pk))
    report = run_ue_client(EndpointConfig.parse_addr(args.sn), args.protocol,
                           usim, id_hn=args.id_hn, id_sn=args.id_sn,
                           seed=args.seed, timeout=args.timeout)
    print(report.render())
    return report.exit_code


def _cmd_bench(args) -> int:
    from .bench import (CaseNotApplicable, audit_counts, audit_messages,
                        render_report, timing_compare)
    protocols = sorted(PROTOCOL_IDS) if args.protocol == "all" else [args.protocol]
    cases = [1, 2, 3] if args.case == "all" else [int(args.case)]
    seed = args.seed if args.seed is not None else 0

    count_reports = []
    for protocol in protocols:
        for case in cases:
            try:
                count_reports.append(
                    audit_counts(protocol, case, trials=args.trials, seed=seed))
            except CaseNotApplicable:
                continue

    message_audits = {}
    for protocol in protocols:
        for scenario in ("happy", "resync"):
            try:
                message_audits[(protocol, scenario)] = audit_messages(
                    protocol, scenario, trials=3, seed=seed)
            except CaseNotApplicable:
                continue

    timing = None
    if not args.no_timing and len(protocols) > 1:
        timing = timing_compare(tuple(protocols), trials=args.timing_trials,
                                seed=seed)

    text = render_report(count_reports, message_audits, timing, seed)
    print(text, end="")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)

    ok = (all(r.ok for r in count_reports)
          and all(g == w for rows in message_audits.values() for g, w in rows)
          and (timing is None or timing.ok))
    return 0 if ok else 1


def _cmd_sim(args) -> int:
    from .netlab import Lab, load_scenario, run_session
    seed = args.seed if args.seed is not None else 0
    lab = Lab.provision([args.supi, "shadow"], seed=seed)
    adversary = load_scenario(args.scenario) if args.scenario else None
    t = run_session(PROTOCOL_IDS[args.protocol], lab, args.supi,
                    adversary=adversary, seed=seed)
    print(t.render_log(), end="")
    if args.frames_out:
        with open(args.frames_out, "wb") as fh:
            fh.write(t.frames_bytes())
    if args.log_out:
        with open(args.log_out, "w", encoding="utf-8") as fh:
            fh.write(t.render_log())
    return 0


if __name__ == "__main__":
    sys.exit(main())
