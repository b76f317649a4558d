"""Command-line front end: ``nqc <subcommand> --config <path|demo> --seed N``.

Exit codes: 0 success, 2 configuration error, 3 protocol failure
(authentication, confirmation, integrity), 4 key exhaustion.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys

from . import qds, qkm, trace
from ._util import ConfigurationError, Drbg, derive_seed
from .channel import frames, pmu, proxy
from .network import config as netconfig
from .network import run as netrun
from .postproc.auth import AuthenticationError
from .postproc.pipeline import metrics_dict, run_session

log = logging.getLogger("nqc")

EXIT_OK, EXIT_CONFIG, EXIT_PROTOCOL, EXIT_EXHAUSTED = 0, 2, 3, 4
PROTOCOL_ERRORS = (AuthenticationError, qkm.ConfirmationError, qkm.TableFormatError, qkm.OneTimeViolation,
                   qkm.StoreFormatError, qds.SignatureFormatError, frames.ChannelError)


class Context:
    def __init__(self, args):
        self.args = args
        self.cfg = netconfig.load(args.config).with_seed(args.seed)
        self.out = args.out or self.cfg.output_dir

    def emit(self, data, text: str | None = None) -> None:
        if self.args.json:
            sys.stdout.write(json.dumps(data, indent=2) + "\n")
        else:
            sys.stdout.write(text if text is not None else json.dumps(data, indent=2) + "\n")

    # stores live in the output directory written by `simulate`
    def _load(self, path: str) -> qkm.KeyStore:
        if not os.path.exists(path):
            raise ConfigurationError(f"output_dir: {path} missing; run `simulate` first")
        return qkm.KeyStore.load(path, self.cfg.store_passphrase)

    def hub(self) -> qkm.KeyStore:
        return self._load(netrun.hub_store_path(self.out))

    def client(self, cid: int) -> qkm.KeyStore:
        self.cfg.client(cid)
        return self._load(netrun.client_store_path(self.out, cid))

    def save_hub(self, store: qkm.KeyStore) -> None:
        store.save(netrun.hub_store_path(self.out), self.cfg.store_passphrase)

    def save_client(self, cid: int, store: qkm.KeyStore) -> None:
        store.save(netrun.client_store_path(self.out, cid), self.cfg.store_passphrase)

    def table_path(self, name: str = "pairkeys.nqcp") -> str:
        return self.args.table or os.path.join(self.out, name)


def _fingerprint(key: bytes) -> str:
    return hashlib.sha256(key).hexdigest()[:16]


def _record_dict(r: qkm.PairKeyRecord) -> dict:
    return {"from": r.from_id, "to": r.to_id, "epoch": r.epoch, "to_epoch": r.to_epoch,
            "P": r.P.hex(), "A": r.A.hex()}


def _write_table(ctx: Context, records, name: str) -> str:
    path = ctx.table_path(name)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(qkm.export_lookup_table(records))
    return path


def _read_table(ctx: Context, name: str = "pairkeys.nqcp") -> list[qkm.PairKeyRecord]:
    path = ctx.table_path(name)
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as exc:
        raise ConfigurationError(f"--table: cannot read {path}: {exc.strerror}") from None
    return qkm.import_lookup_table(data)


# --- subcommands -------------------------------------------------------------

def cmd_simulate(ctx: Context) -> int:
    a = ctx.args
    if a.trace_dir:
        os.makedirs(a.trace_dir, exist_ok=True)
    reports, state = netrun.run_network(ctx.cfg, a.epochs, trace_dir=a.trace_dir)
    netrun.save_state(ctx.cfg, state, ctx.out)
    csv_text = netrun.reports_csv(reports, a.timing)
    json_text = netrun.reports_json(reports, a.timing)
    with open(os.path.join(ctx.out, "reports.csv"), "w") as f:
        f.write(csv_text)
    with open(os.path.join(ctx.out, "reports.json"), "w") as f:
        f.write(json_text)
    sys.stdout.write(json_text if a.json else csv_text)
    return EXIT_OK


def cmd_pairkey(ctx: Context) -> int:
    a = ctx.args
    if a.action == "publish":
        if a.src is None or a.dst is None:
            raise ConfigurationError("pairkey publish: --from and --to are required")
        ctx.cfg.client(a.src), ctx.cfg.client(a.dst)
        hub = ctx.hub()
        records = [qkm.publish_pair_key(hub, a.src, a.dst) for _ in range(a.count)]
        ctx.save_hub(hub)
        path = _write_table(ctx, records, "pairkeys.nqcp")
        ctx.emit({"table": os.path.basename(path), "records": [_record_dict(r) for r in records]},
                 "".join(f"{r.from_id}->{r.to_id} epoch {r.epoch}/{r.to_epoch}\n" for r in records))
        return EXIT_OK
    return _derive(ctx, "pairkeys.nqcp")


def _derive(ctx: Context, table_name: str) -> int:
    a = ctx.args
    if a.client is None:
        raise ConfigurationError(f"{a.command} derive: --client is required")
    store = ctx.client(a.client)
    out = []
    for r in _read_table(ctx, table_name):
        if r.from_id == a.client:
            key, role = qkm.derive_from_store(store, r), "derive"
        elif r.to_id == a.client and r.to_id < qkm.GROUP_ID_BASE:
            key, role = qkm.receive_key(store, r), "receive"
        else:
            continue
        row = {"from": r.from_id, "to": r.to_id, "epoch": r.epoch, "role": role, "key_sha256": _fingerprint(key)}
        if a.show_keys:
            row["key"] = key.hex()
        out.append(row)
    ctx.save_client(a.client, store)
    ctx.emit({"client": a.client, "keys": out},
             "".join(f"{k['from']}->{k['to']} {k['role']} {k['key_sha256']}\n" for k in out))
    return EXIT_OK


def cmd_groupkey(ctx: Context) -> int:
    a = ctx.args
    if a.action == "publish":
        members = [int(x) for x in (a.members or "").split(",") if x]
        for m in members:
            ctx.cfg.client(m)
        hub = ctx.hub()
        entropy = Drbg(derive_seed(ctx.cfg.master_seed, "group-key", hub.next_group_id))
        records, gid = qkm.publish_group_key(hub, members, entropy)
        ctx.save_hub(hub)
        path = _write_table(ctx, records, "groupkeys.nqcp")
        ctx.emit({"group_id": gid, "table": os.path.basename(path), "records": [_record_dict(r) for r in records]},
                 f"group {gid:#x}: members {','.join(map(str, members))}\n")
        return EXIT_OK
    return _derive(ctx, "groupkeys.nqcp")


def _message(path: str) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as exc:
        raise ConfigurationError(f"--message: cannot read {path}: {exc.strerror}") from None


def cmd_sign(ctx: Context) -> int:
    a = ctx.args
    store = ctx.client(a.client)
    try:
        params = qds.WotsParams(a.w_bits)
    except ValueError as exc:
        raise ConfigurationError(f"--w-bits: {exc}") from None
    S = qds.signer_key(store, a.client, params)
    sig = qds.sign(_message(a.message), S)
    ctx.save_client(a.client, store)
    blob = qds.encode_signature(sig)
    path = a.signature or os.path.join(ctx.out, "message.nqcs")
    with open(path, "wb") as f:
        f.write(blob)
    ctx.emit({"key_id": sig.key_id, "signature": os.path.basename(path), "sha256": hashlib.sha256(blob).hexdigest()},
             f"signed with key {sig.key_id:#x}\n")
    return EXIT_OK


def cmd_verify(ctx: Context) -> int:
    a = ctx.args
    path = a.signature or os.path.join(ctx.out, "message.nqcs")
    with open(path, "rb") as f:
        sig = qds.decode_signature(f.read())
    signer = sig.key_id >> 32
    if a.signer is not None and a.signer != signer:
        raise AuthenticationError(f"signature key id names client {signer}, not {a.signer}")
    hub, store = ctx.hub(), ctx.client(a.client)
    V = qds.hub_verification_key(hub, sig.key_id, sig.params)
    msg = qds.distribute_verification(hub, signer, a.client, V)
    verifier = qds.Verifier(a.client, store)
    verifier.receive(msg, sig.key_id)
    verdict = verifier.check(_message(a.message), sig)
    ctx.save_hub(hub)
    ctx.save_client(a.client, store)
    ctx.emit({"accepted": verdict.accepted, "reason": verdict.reason, "key_id": sig.key_id},
             "accepted\n" if verdict else f"rejected: {verdict.reason}\n")
    if not verdict:
        print(f"signature rejected: {verdict.reason}", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


def _feeds(ctx: Context, src: int, dst: int, direction: int) -> tuple[frames.KeyFeed | None, frames.KeyFeed | None]:
    """Seal-side and open-side key feeds from the pair records src -> dst in the table."""
    records = [r for r in _read_table(ctx) if r.from_id == src and r.to_id == dst]
    if not records:
        raise qkm.KeyExhaustedError(f"table holds no {src}->{dst} pair keys; run `pairkey publish`")
    mode = getattr(ctx.args, "mode", None)
    seal_feed = open_feed = None
    if mode in (None, "seal"):
        s_store = ctx.client(src)
        seal_feed = frames.KeyFeed(direction, [qkm.derive_from_store(s_store, r) for r in records])
        ctx.save_client(src, s_store)
    if mode in (None, "open"):
        d_store = ctx.client(dst)
        open_feed = frames.KeyFeed(direction, [qkm.receive_key(d_store, r) for r in records])
        ctx.save_client(dst, d_store)
    return seal_feed, open_feed


def _hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    try:
        return host or "127.0.0.1", int(port)
    except ValueError:
        raise ConfigurationError(f"proxy: bad host:port {text!r}") from None


def cmd_proxy(ctx: Context) -> int:
    a = ctx.args
    direction = (a.src << 16) ^ a.dst
    rekey = a.rekey_frames or ctx.cfg.proxy.rekey_frames
    if a.action == "serve":
        seal_feed, open_feed = _feeds(ctx, a.src, a.dst, direction)
        import asyncio
        stats = asyncio.run(proxy.proxy_run(_hostport(a.listen or ctx.cfg.proxy.listen),
                                            _hostport(a.egress or ctx.cfg.proxy.egress),
                                            seal_feed or open_feed, a.mode, rekey_frames=rekey,
                                            metrics_path=a.metrics))
        ctx.emit({"mode": a.mode, "forwarded": stats.forwarded, "tag_failures": stats.tag_failures,
                  "replay_alarms": stats.replay_alarms, "dropped_no_key": stats.dropped_no_key})
        return EXIT_OK
    seal_feed, open_feed = _feeds(ctx, a.src, a.dst, direction)
    source = [pmu.encode_pmu(f) for f in pmu.pmu_source(a.rate, a.scenario, a.duration, station_id=a.src)]
    plain = b"".join(source)
    res = proxy.run_loopback(source, seal_feed, open_feed, rate=a.rate if a.realtime else None,
                             rekey_frames=rekey)
    if a.metrics:
        res.seal.write_csv(a.metrics)
    report = res.report()
    print(f"added latency over {report.count} frames: p50 {report.p50_us:.1f} us, "
          f"p95 {report.p95_us:.1f} us, p99 {report.p99_us:.1f} us", file=sys.stderr)
    out = {"frames": len(source), "bytes": len(plain), "source_sha256": hashlib.sha256(plain).hexdigest(),
           "delivered_sha256": hashlib.sha256(res.delivered).hexdigest(), "identical": res.delivered == plain,
           "epochs": res.open.epochs, "tag_failures": res.open.tag_failures,
           "dropped_no_key": res.seal.dropped_no_key}
    if a.timing:
        out["latency_us"] = {"p50": report.p50_us, "p95": report.p95_us, "p99": report.p99_us}
    ctx.emit(out)
    if not out["identical"]:
        return EXIT_EXHAUSTED if res.seal.dropped_no_key else EXIT_PROTOCOL
    return EXIT_OK


def cmd_replay(ctx: Context) -> int:
    a = ctx.args
    try:
        tx, det = trace.read_trace(a.trace)
    except OSError as exc:
        raise ConfigurationError(f"--trace: cannot read {a.trace}: {exc.strerror}") from None
    except trace.TraceFormatError as exc:
        raise ConfigurationError(f"--trace: {exc}") from None
    ch = ctx.cfg.client(a.client).channel
    auth_keys = netrun.AuthPool.preshared(ctx.cfg.master_seed, a.client).take_pair()
    res = run_session(tx, det, ch, derive_seed(ctx.cfg.master_seed, "replay", a.client), auth_keys,
                      session_id=os.path.basename(a.trace))
    row = metrics_dict(res.metrics)
    ctx.emit(row, res.metrics.csv_header() + res.metrics.csv_row())
    return EXIT_OK


def cmd_export_table(ctx: Context) -> int:
    hub = ctx.hub()
    ids = ctx.cfg.client_ids
    records = [qkm.publish_pair_key(hub, x, y) for _ in range(ctx.args.per_pair) for x in ids for y in ids if x != y]
    ctx.save_hub(hub)
    path = _write_table(ctx, records, "lookup.nqcp")
    ctx.emit({"table": os.path.basename(path), "records": len(records),
              "sha256": hashlib.sha256(qkm.export_lookup_table(records)).hexdigest()},
             f"{len(records)} records -> {path}\n")
    return EXIT_OK


def cmd_import_table(ctx: Context) -> int:
    records = _read_table(ctx, "lookup.nqcp")
    ctx.emit({"records": [_record_dict(r) for r in records]},
             "".join(f"{r.from_id}->{r.to_id} epoch {r.epoch}/{r.to_epoch}\n" for r in records))
    return EXIT_OK


# --- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="demo", help="TOML config path, or 'demo' (default)")
    common.add_argument("--seed", type=int, default=None, help="override network.master_seed")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--out", default=None, help="output directory (default network.output_dir)")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="nqc", description="Hub-and-spoke QKD network simulator and key tools.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="run QKD epochs for every client")
    s.add_argument("--epochs", type=int, default=1)
    s.add_argument("--trace-dir", default=None, help="also dump NQCT traces here")
    s.add_argument("--timing", action="store_true", help="include wall time (breaks byte-identity)")
    s.set_defaults(func=cmd_simulate)

    for name, func, help_ in (("pairkey", cmd_pairkey, "publish or derive QAKE pair keys"),
                              ("groupkey", cmd_groupkey, "publish or derive group keys")):
        s = sub.add_parser(name, parents=[common], help=help_)
        s.add_argument("action", choices=("publish", "derive"))
        s.add_argument("--table", default=None)
        s.add_argument("--client", type=int, default=None, help="deriving client")
        s.add_argument("--show-keys", action="store_true")
        if name == "pairkey":
            s.add_argument("--from", dest="src", type=int, default=None)
            s.add_argument("--to", dest="dst", type=int, default=None)
            s.add_argument("--count", type=int, default=1)
        else:
            s.add_argument("--members", default=None, help="comma-separated client ids")
        s.set_defaults(func=func)

    s = sub.add_parser("sign", parents=[common], help="WOTS-sign a file with fresh QKD key")
    s.add_argument("--client", type=int, required=True)
    s.add_argument("--message", required=True)
    s.add_argument("--signature", default=None, help="output path")
    s.add_argument("--w-bits", type=int, default=4)
    s.set_defaults(func=cmd_sign)

    s = sub.add_parser("verify", parents=[common], help="hub-distributed verification of a signature")
    s.add_argument("--client", type=int, required=True, help="verifier")
    s.add_argument("--signer", type=int, default=None)
    s.add_argument("--message", required=True)
    s.add_argument("--signature", default=None)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("proxy", parents=[common], help="bump-in-the-wire proxy")
    s.add_argument("action", choices=("loopback", "serve"))
    s.add_argument("--from", dest="src", type=int, required=True)
    s.add_argument("--to", dest="dst", type=int, required=True)
    s.add_argument("--table", default=None)
    s.add_argument("--mode", choices=("seal", "open"), default=None, help="serve only")
    s.add_argument("--listen", default=None)
    s.add_argument("--egress", default=None)
    s.add_argument("--rate", type=int, default=30, help="PMU frames per second")
    s.add_argument("--duration", type=float, default=60.0, help="stream length [s]")
    s.add_argument("--scenario", choices=("steady", "fault"), default="steady")
    s.add_argument("--realtime", action="store_true", help="pace the source at --rate")
    s.add_argument("--rekey-frames", type=int, default=None)
    s.add_argument("--metrics", default=None, help="per-frame latency CSV")
    s.add_argument("--timing", action="store_true", help="include latency in stdout")
    s.set_defaults(func=cmd_proxy)

    s = sub.add_parser("replay", parents=[common], help="post-process an NQCT trace")
    s.add_argument("--trace", required=True)
    s.add_argument("--client", type=int, required=True)
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("export-table", parents=[common], help="publish pair keys for every ordered pair")
    s.add_argument("--per-pair", type=int, default=1)
    s.add_argument("--table", default=None)
    s.set_defaults(func=cmd_export_table)

    s = sub.add_parser("import-table", parents=[common], help="check and list a published table")
    s.add_argument("--table", default=None)
    s.set_defaults(func=cmd_import_table)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "proxy" and args.action == "serve" and args.mode is None:
        print("nqc proxy serve: --mode is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(Context(args))
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except qkm.KeyExhaustedError as exc:
        print(f"key exhausted: {exc}", file=sys.stderr)
        return EXIT_EXHAUSTED
    except qkm.ConfirmationError as exc:
        print(f"confirmation failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except PROTOCOL_ERRORS as exc:
        print(f"protocol failure: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
