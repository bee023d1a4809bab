"""Operator command line: run nodes, dial peers, move messages around.

Exit codes: 0 success, 2 configuration problem, 3 network failure,
4 validation failure (bad message, bad scenario), 1 anything else.
"""

from __future__ import annotations

import argparse
import glob
import logging
import os
import signal
import sys
import time

from oppweb.config import ConfigError, NodeConfig, load_config
from oppweb.message import DecodeError, decode, describe, encode_canonical
from oppweb.store import CacheStore, InsertResult

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_NETWORK = 3
EXIT_VALIDATION = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_OTHER):
        super().__init__(message)
        self.code = code


def _node_config(args) -> NodeConfig:
    overrides = {}
    for key in ("data_dir", "portal_listen", "sync_listen", "node_name", "ui_dir"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    try:
        return load_config(getattr(args, "config", None), overrides)
    except ConfigError as exc:
        raise CliError(f"configuration: {exc}", EXIT_CONFIG) from exc


def _open_store(config: NodeConfig) -> CacheStore:
    root = os.path.join(config.data_dir, "cache")
    now = int(time.time())
    if os.path.isdir(os.path.join(root, "messages")):
        return CacheStore.recover(root, now)
    return CacheStore(root)


# -- commands -----------------------------------------------------------------


def cmd_node_run(args) -> int:
    from oppweb.node import Node

    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    config = _node_config(args)
    node = Node(config)

    def on_term(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, on_term)
    try:
        node.start()
    except OSError as exc:
        raise CliError(f"cannot bind: {exc}", EXIT_NETWORK) from exc
    portal = "%s:%d" % node.portal_address
    sync_addr = "%s:%d" % node.sync_address
    print(
        f"node {config.node_name}: portal http://{portal} "
        f"sync {sync_addr} data {config.data_dir}",
        flush=True,
    )
    node.dial_static_peers()
    try:
        while True:
            time.sleep(0.5)
    except KeyboardInterrupt:
        pass
    finally:
        node.stop()
    return EXIT_OK


def cmd_dial(args) -> int:
    from oppweb.config import parse_listen
    from oppweb.sync import dial

    config = _node_config(args)
    store = _open_store(config)
    try:
        host, port = parse_listen(args.peer)
    except ConfigError as exc:
        raise CliError(str(exc), EXIT_CONFIG) from exc
    try:
        report = dial(host, port, store, now=int(time.time()),
                      node_id=config.node_name)
    except OSError as exc:
        raise CliError(f"cannot reach {args.peer}: {exc}", EXIT_NETWORK) from exc
    print(report.summary())
    for mid in report.received_ids:
        print(f"  received {mid}")
    for mid in report.sent_ids:
        print(f"  sent {mid}")
    return EXIT_OK if not report.aborted else EXIT_NETWORK


def cmd_msg_inspect(args) -> int:
    target = args.target
    if os.path.isfile(target):
        with open(target, "rb") as fh:
            data = fh.read()
        try:
            msg = decode(data)
        except DecodeError as exc:
            raise CliError(f"not a valid message file: {exc}", EXIT_VALIDATION) from exc
    else:
        config = _node_config(args)
        store = _open_store(config)
        try:
            msg = store.get(target)
        except KeyError:
            raise CliError(f"no file and no cached message {target!r}", EXIT_VALIDATION) from None
    print(describe(msg))
    return EXIT_OK


def cmd_msg_inject(args) -> int:
    config = _node_config(args)
    store = _open_store(config)
    try:
        with open(args.file, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise CliError(str(exc), EXIT_VALIDATION) from exc
    try:
        msg = decode(data)
    except DecodeError as exc:
        raise CliError(f"not a valid message file: {exc}", EXIT_VALIDATION) from exc
    result = store.insert(msg, now=int(time.time()))
    print(f"{result.value}: {msg.id}")
    if result in (InsertResult.REJECTED_EXPIRED, InsertResult.REJECTED_INVALID):
        return EXIT_VALIDATION
    return EXIT_OK


def cmd_msg_remove(args) -> int:
    config = _node_config(args)
    store = _open_store(config)
    try:
        store.remove(args.id)
    except KeyError:
        raise CliError(f"no cached message {args.id!r}", EXIT_VALIDATION) from None
    print(f"removed: {args.id}")
    return EXIT_OK


def cmd_key_gen(args) -> int:
    from oppweb.keys import Identity

    config = _node_config(args)
    path = config.resolved_identity_path()
    if os.path.exists(path) and not args.force:
        raise CliError(f"{path} exists; use --force to replace", EXIT_CONFIG)
    identity = Identity.generate()
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    identity.save(path)
    print(f"identity {identity.fingerprint} written to {path}")
    return EXIT_OK


def cmd_key_publish(args) -> int:
    from oppweb.keys import Identity
    from oppweb.pki import wrap_key_record

    config = _node_config(args)
    path = config.resolved_identity_path()
    if not os.path.isfile(path):
        raise CliError(f"no identity at {path}; run `oppweb key gen`", EXIT_CONFIG)
    identity = Identity.load(path)
    msg = wrap_key_record(identity, now=int(time.time()))
    if args.out:
        with open(args.out, "wb") as fh:
            fh.write(encode_canonical(msg))
        print(f"key record message written to {args.out}")
    store = _open_store(config)
    result = store.insert(msg, now=int(time.time()))
    print(f"{result.value}: {msg.id}")
    return EXIT_OK


def cmd_app_pack(args) -> int:
    from oppweb.apps import BundleError, load_bundle, make_app_message
    from oppweb.keys import Identity

    config = _node_config(args)
    try:
        bundle = load_bundle(args.dir)
    except BundleError as exc:
        raise CliError(f"bad bundle: {exc}", EXIT_VALIDATION) from exc
    path = config.resolved_identity_path()
    if os.path.isfile(path):
        identity = Identity.load(path)
    else:
        identity = Identity.generate()
    meta = {"description": bundle.description}
    payload = []
    for entry in args.payload or []:
        name, _, file_path = entry.partition("=")
        if not file_path:
            file_path = name
            name = os.path.basename(file_path)
        try:
            with open(file_path, "rb") as fh:
                payload.append((name, fh.read()))
        except OSError as exc:
            raise CliError(str(exc), EXIT_VALIDATION) from exc
    for pair in args.meta or []:
        key, sep, value = pair.partition("=")
        if not sep:
            raise CliError(f"--meta needs key=value, got {pair!r}", EXIT_VALIDATION)
        meta[key] = value
    msg = make_app_message(
        bundle, identity, now=int(time.time()), meta=meta, payload=payload,
        ttl_seconds=config.ttl_default,
    )
    out = args.out or f"{bundle.service}.owm"
    with open(out, "wb") as fh:
        fh.write(encode_canonical(msg))
    print(f"packed {bundle.service}: {msg.id} -> {out} "
          f"({len(encode_canonical(msg))} bytes)")
    return EXIT_OK


def cmd_sim_run(args) -> int:
    from oppweb.simulator import ScenarioError, load_scenario, run_scenario, write_report

    try:
        config = load_scenario(args.scenario)
    except (ScenarioError, OSError) as exc:
        raise CliError(f"scenario: {exc}", EXIT_VALIDATION) from exc
    report = run_scenario(config)
    stem = os.path.splitext(os.path.basename(args.scenario))[0]
    out_dir = args.out or "."
    written = write_report(report, out_dir, stem)
    print(report.summary_csv(), end="")
    print(f"wrote {len(written)} files under {out_dir}", file=sys.stderr)
    return EXIT_OK


def cmd_sim_sweep(args) -> int:
    from oppweb.simulator import ScenarioError, sweep

    paths = sorted(glob.glob(os.path.join(args.dir, "*.scn")))
    if not paths:
        raise CliError(f"no *.scn scenarios in {args.dir}", EXIT_VALIDATION)
    try:
        table = sweep(paths, args.out or ".")
    except (ScenarioError, OSError) as exc:
        raise CliError(f"sweep: {exc}", EXIT_VALIDATION) from exc
    print(table, end="")
    return EXIT_OK


# -- argument wiring -----------------------------------------------------------


def _add_node_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key-value config file")
    parser.add_argument("--data-dir", dest="data_dir", help="node data directory")
    parser.add_argument("--portal-listen", dest="portal_listen")
    parser.add_argument("--sync-listen", dest="sync_listen")
    parser.add_argument("--node-name", dest="node_name")
    parser.add_argument("--ui-dir", dest="ui_dir", help="frontend bundle directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oppweb",
        description="store-carry-forward web node and simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    node = sub.add_parser("node", help="daemon operations")
    node_sub = node.add_subparsers(dest="node_command", required=True)
    run = node_sub.add_parser("run", help="start cache, sync listener, portal")
    _add_node_args(run)
    run.set_defaults(fn=cmd_node_run)

    dial = sub.add_parser("dial", help="one anti-entropy session against a peer")
    dial.add_argument("peer", help="host:port of the peer's sync listener")
    _add_node_args(dial)
    dial.set_defaults(fn=cmd_dial)

    msg = sub.add_parser("msg", help="message debugging")
    msg_sub = msg.add_subparsers(dest="msg_command", required=True)
    inspect = msg_sub.add_parser("inspect", help="print a message file or cached id")
    inspect.add_argument("target")
    _add_node_args(inspect)
    inspect.set_defaults(fn=cmd_msg_inspect)
    inject = msg_sub.add_parser("inject", help="insert canonical message bytes")
    inject.add_argument("file")
    _add_node_args(inject)
    inject.set_defaults(fn=cmd_msg_inject)
    remove = msg_sub.add_parser("remove", help="explicitly drop a cached message")
    remove.add_argument("id")
    _add_node_args(remove)
    remove.set_defaults(fn=cmd_msg_remove)

    key = sub.add_parser("key", help="identity management")
    key_sub = key.add_subparsers(dest="key_command", required=True)
    gen = key_sub.add_parser("gen", help="create a signing identity")
    gen.add_argument("--force", action="store_true")
    _add_node_args(gen)
    gen.set_defaults(fn=cmd_key_gen)
    publish = key_sub.add_parser("publish", help="wrap the public key as a message")
    publish.add_argument("--out", help="also write the message to this file")
    _add_node_args(publish)
    publish.set_defaults(fn=cmd_key_publish)

    app = sub.add_parser("app", help="application bundles")
    app_sub = app.add_subparsers(dest="app_command", required=True)
    pack = app_sub.add_parser("pack", help="bundle directory -> message file")
    pack.add_argument("dir")
    pack.add_argument("--out")
    pack.add_argument("--meta", action="append", help="key=value (repeatable)")
    pack.add_argument("--payload", action="append",
                      help="name=file or file (repeatable)")
    _add_node_args(pack)
    pack.set_defaults(fn=cmd_app_pack)

    sim = sub.add_parser("sim", help="dissemination simulations")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    sim_run = sim_sub.add_parser("run", help="run one scenario file")
    sim_run.add_argument("scenario")
    sim_run.add_argument("--out", help="output directory for CSV files")
    sim_run.set_defaults(fn=cmd_sim_run)
    sim_sweep = sim_sub.add_parser("sweep", help="run every *.scn in a directory")
    sim_sweep.add_argument("dir")
    sim_sweep.add_argument("--out", help="output directory")
    sim_sweep.set_defaults(fn=cmd_sim_sweep)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CliError as exc:
        print(f"oppweb: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"oppweb: configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
