"""Command line entry points.

Exit codes: 0 on success or a valid log; 1 when verification fails or an
attack succeeds where its mitigation should have stopped it; 2 for usage
and configuration errors.

Environment variables provide defaults: PODGUARD_DATA_DIR (data
directory), PODGUARD_CONFIG (configuration path), PODGUARD_SEED (seed
override for init/demo/attack/report).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .codec import canonical_json
from .config import hardened_preset, legacy_preset, load_config
from .errors import ConfigError, PodGuardError
from .ledger import Anchor, verify_chain

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    env_data_dir = os.environ.get("PODGUARD_DATA_DIR")
    env_config = os.environ.get("PODGUARD_CONFIG")
    env_seed = int(os.environ.get("PODGUARD_SEED", "0") or 0)
    parser = argparse.ArgumentParser(
        prog="podguard",
        description="Privacy-hardened personal data pod with an adversarial harness",
    )
    sub = parser.add_subparsers(dest="command")

    def data_dir_arg(p):
        p.add_argument("--data-dir", default=env_data_dir,
                       required=env_data_dir is None)

    p_init = sub.add_parser("init", help="initialize a pod data directory")
    data_dir_arg(p_init)
    p_init.add_argument("--subject", required=True, help="short owner name")
    p_init.add_argument("--host", default=None)
    p_init.add_argument("--seed", type=int, default=env_seed)

    p_serve = sub.add_parser("serve", help="serve a pod over a local socket")
    data_dir_arg(p_serve)
    p_serve.add_argument("--config", default=env_config)
    p_serve.add_argument("--port", type=int, default=8440)

    p_demo = sub.add_parser("demo", help="run the doctor-access demonstration")
    p_demo.add_argument("--out", default="demo-out")
    p_demo.add_argument("--transport", choices=["sim", "http"], default="sim")

    p_attack = sub.add_parser("attack", help="run one attack differentially")
    p_attack.add_argument("--kind", required=True)
    p_attack.add_argument("--mitigation", choices=["on", "off"], default="on")
    p_attack.add_argument("--seed", type=int, default=env_seed or 1)
    p_attack.add_argument("--attempts", type=int, default=50)

    p_verify = sub.add_parser("verify", help="verify an exported log")
    p_verify.add_argument("logfile")
    p_verify.add_argument("--keys", default=None, help="JSON file id->verify key hex")
    p_verify.add_argument("--pod-id", default=None)
    p_verify.add_argument("--policy-log", default=None,
                          help="policy export for cross-checking an access log")
    p_verify.add_argument("--anchors", default=None, help="anchor JSON file")

    p_report = sub.add_parser("report", help="emit the requirement coverage matrix")
    p_report.add_argument("--seed", type=int, default=env_seed or 1)
    p_report.add_argument("--json", action="store_true")

    p_export = sub.add_parser("export", help="portability bundle for the pod owner")
    data_dir_arg(p_export)
    p_export.add_argument("--out", default=None)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    if args.command is None:
        parser.print_usage()
        return EXIT_USAGE
    try:
        handler = {
            "init": _cmd_init,
            "serve": _cmd_serve,
            "demo": _cmd_demo,
            "attack": _cmd_attack,
            "verify": _cmd_verify,
            "report": _cmd_report,
            "export": _cmd_export,
        }[args.command]
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except PodGuardError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


# -- local pod plumbing -------------------------------------------------------


def _load_local_world(data_dir: Path, config):
    from .harness.world import World

    meta = json.loads((data_dir / "pod.json").read_text())
    world = World(config, meta["seed"])
    world.add_agent(meta["subject"], ["data-subject"], host=meta["host"])
    unit = world.create_pod(meta["subject"], data_dir=data_dir / "store")
    for kind in ("password", "device-key"):
        world.registry.mfa.enroll(
            unit.subject, kind, bytes.fromhex(meta["factors"][kind])
        )
    return world, unit, meta


def _cmd_init(args) -> int:
    data_dir = Path(args.data_dir)
    if (data_dir / "pod.json").exists():
        print(f"refusing to overwrite existing pod at {data_dir}", file=sys.stderr)
        return EXIT_USAGE
    data_dir.mkdir(parents=True, exist_ok=True)
    import secrets

    meta = {
        "subject": args.subject,
        "host": args.host or f"{args.subject}.pods.example",
        "seed": args.seed,
        # Local owner's second-factor material; the data dir is theirs.
        "factors": {
            "password": secrets.token_bytes(16).hex(),
            "device-key": secrets.token_bytes(16).hex(),
        },
        "key_custodian": "pod-provider-security-officer",
    }
    (data_dir / "pod.json").write_text(json.dumps(meta, indent=2) + "\n")
    (data_dir / "config.json").write_text('{"preset": "hardened"}\n')
    (data_dir / "store").mkdir(exist_ok=True)
    print(f"initialized pod for {meta['subject']} at {data_dir}")
    return EXIT_OK


def _cmd_serve(args) -> int:
    from .authn import IdentityManager
    from .crypto import DeterministicRng
    from .service import serve_pod

    data_dir = Path(args.data_dir)
    if not (data_dir / "pod.json").exists():
        print(f"{data_dir} is not initialized (run init first)", file=sys.stderr)
        return EXIT_USAGE
    config = load_config(args.config or (data_dir / "config.json"))
    world, unit, meta = _load_local_world(data_dir, config)
    idm = IdentityManager("local-idm", "idm.local", DeterministicRng.system())
    try:
        handle = serve_pod(
            unit, world.registry, config, idms={"local-idm": idm},
            port=args.port, wall_clock=True,
        )
    except OSError as exc:
        print(f"cannot bind port {args.port}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    print(f"serving pod {unit.host} on 127.0.0.1:{handle.port} (interrupt to stop)")
    try:
        handle.thread.join()
    except KeyboardInterrupt:
        handle.stop()
    return EXIT_OK


def _cmd_demo(args) -> int:
    from .harness.coverage import DEMO_SCRIPT
    from .harness.world import HttpTransport, run_scenario

    factory = HttpTransport if args.transport == "http" else None
    result = run_scenario(DEMO_SCRIPT, transport_factory=factory)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ledgers = result.ledgers["alice"]
    (out / "policy.log").write_bytes(ledgers["policy"])
    (out / "access.log").write_bytes(ledgers["access"])
    (out / "anchors.json").write_text(json.dumps(ledgers["anchors"], indent=2) + "\n")
    world = result.world
    pod = world.pods["alice"]
    keys = world.registry.trusted_keys()
    (out / "keys.json").write_text(json.dumps(keys, indent=2, sort_keys=True) + "\n")
    (out / "pod-id.txt").write_text(pod.ledger.pod_id + "\n")
    (out / "decisions.json").write_text(
        json.dumps(result.decisions, indent=2) + "\n"
    )
    print(f"demo artifacts written to {out}/ (transport: {args.transport})")
    policy_entries = len(pod.ledger.policy_log.entries)
    access_entries = len(pod.ledger.access_log.entries)
    print(f"policy log entries: {policy_entries}, access log entries: {access_entries}")
    return EXIT_OK


def _cmd_attack(args) -> int:
    from .harness.attacks import ATTACK_KINDS, run_attack

    if args.kind not in ATTACK_KINDS:
        print(f"unknown attack kind {args.kind!r}; choose from {ATTACK_KINDS}",
              file=sys.stderr)
        return EXIT_USAGE
    config = hardened_preset() if args.mitigation == "on" else legacy_preset()
    report = run_attack(args.kind, config, args.seed, forgery_attempts=args.attempts)
    print(json.dumps(report.to_dict(), indent=2))
    if args.mitigation == "on" and report.success:
        return EXIT_INVALID
    return EXIT_OK


def _cmd_verify(args) -> int:
    log_bytes = Path(args.logfile).read_bytes()
    trusted = {}
    if args.keys:
        trusted = json.loads(Path(args.keys).read_text())
    policy_entries = None
    if args.policy_log:
        from .ledger import parse_export

        policy_entries = parse_export(Path(args.policy_log).read_bytes())
    anchor = None
    if args.anchors:
        anchors = json.loads(Path(args.anchors).read_text())
        if anchors:
            anchor = Anchor.from_dict(anchors[-1])
    report = verify_chain(
        log_bytes, trusted, pod_id=args.pod_id,
        policy_entries=policy_entries, anchor=anchor,
    )
    if report.valid:
        print(f"valid: {report.entries_checked} entries, head {report.head_hash[:16]}…")
        return EXIT_OK
    print(f"INVALID at seq {report.first_bad_seq}")
    for problem in report.problems:
        print(f"  - {problem}")
    return EXIT_INVALID


def _cmd_report(args) -> int:
    from .harness.coverage import (
        coverage_report,
        matrix_to_json,
        render_matrix,
        run_full_suite,
    )

    suite = run_full_suite(seed=args.seed)
    rows = coverage_report(
        suite["attack_reports"],
        scenario=suite["demo"],
        ledger_verification=suite["ledger_verification"],
        ciso_view_clean=suite["ciso_view_clean"],
        breach_notices=suite["burst_notices"],
    )
    if args.json:
        sys.stdout.write(matrix_to_json(rows).decode("utf-8"))
    else:
        sys.stdout.write(render_matrix(rows))
    return EXIT_OK


def _cmd_export(args) -> int:
    from .authn import MfaFactor
    from .gdpr import export_portable

    data_dir = Path(args.data_dir)
    config = load_config(data_dir / "config.json")
    world, unit, meta = _load_local_world(data_dir, config)
    factors = [
        MfaFactor(kind, bytes.fromhex(meta["factors"][kind]))
        for kind in ("password", "device-key")
    ]
    bundle = export_portable(
        unit.subject, factors, world.registry, unit.store, unit.engine,
        unit.ledger, config, now_ms=0,
    )
    payload = canonical_json(bundle) + b"\n"
    if args.out:
        Path(args.out).write_bytes(payload)
        print(f"portability bundle written to {args.out}")
    else:
        sys.stdout.write(payload.decode("utf-8"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
