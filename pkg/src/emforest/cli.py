"""``mf`` command line: serve | tpa | upload | update | get | audit | bench | fsck."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench, service
from .audit import Registry
from .crypto import KEY_SIZE, FileKey
from .errors import ForestError
from .store import open_store, verify_store

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class CommandFailed(Exception):
    def __init__(self, code: str, message: str) -> None:
        super().__init__(message)
        self.code = code


def read_key(path: str) -> FileKey:
    raw = Path(path).read_bytes()
    if len(raw) != KEY_SIZE:
        try:
            raw = bytes.fromhex(raw.decode("ascii").strip())
        except (UnicodeDecodeError, ValueError):
            pass
    if len(raw) != KEY_SIZE:
        raise CommandFailed("BadKey", f"{path}: expected {KEY_SIZE} raw bytes or {2 * KEY_SIZE} hex digits")
    return FileKey(raw)


def _print_summary(s: service.VersionSummary) -> None:
    print(f"version={s.version} root={s.root.hex()} leaf_count={s.leaf_count} "
          f"registered={'yes' if s.registered else 'no'}")
    if not s.registered:
        raise CommandFailed("RegistrationFailed",
                            f"version {s.version} stored (root {s.root.hex()}) but TPA registration "
                            f"failed: {s.registration_error}")


def _run_forever(server: service.FrameServer, role: str) -> None:
    print(f"{role} listening on {server.endpoint}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def cmd_serve(args: argparse.Namespace) -> None:
    endpoint = args.listen or os.environ.get("MF_LISTEN") or service.DEFAULT_LISTEN
    with open_store(args.store) as store:
        _run_forever(service.server_serve(store, endpoint), "server")


def cmd_tpa(args: argparse.Namespace) -> None:
    registry = Registry(Path(args.registry)) if args.registry else Registry()
    server = service.FrameServer(args.listen, service.Auditor(registry, args.seed).handle)
    _run_forever(server, "tpa")


def cmd_upload(args: argparse.Namespace) -> None:
    _print_summary(service.client_upload(Path(args.file), read_key(args.key_file), args.server, args.tpa))


def cmd_update(args: argparse.Namespace) -> None:
    data = Path(args.data).read_bytes()
    _print_summary(service.client_update(args.index, data, read_key(args.key_file),
                                         args.server, args.tpa, args.base))


def cmd_get(args: argparse.Namespace) -> None:
    content = service.client_retrieve(args.version, read_key(args.key_file), args.server)
    Path(args.out).write_bytes(content)
    print(f"version={args.version} bytes={len(content)} out={args.out}")


def cmd_audit(args: argparse.Namespace) -> None:
    results = service.client_audit(args.tpa, args.server, args.count, args.exhaustive, args.seed)
    failed = [r for r in results if not r.passed]
    for r in failed:
        print(f"FAIL version={r.challenge.version} index={r.challenge.block_index} reason={r.reason}")
    print(f"passed={len(results) - len(failed)} failed={len(failed)}")
    if failed:
        raise CommandFailed("AuditFailed", f"{len(failed)} of {len(results)} challenges failed")


def cmd_bench(args: argparse.Namespace) -> None:
    kinds = ["creation", "retrieval", "update", "storage", "audit"] if args.kind == "all" else [args.kind]
    out_dir = Path(args.out) if args.out else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        if kind == "creation":
            records = bench.bench_tree_creation(args.sizes, args.seed, args.reps)
        elif kind == "retrieval":
            records = bench.bench_retrieval(args.sizes, args.seed, args.reps)
        elif kind == "update":
            records = bench.bench_block_update(args.sizes, args.seed, args.reps)
        elif kind == "storage":
            records = bench.bench_storage_overhead(args.version_counts, args.storage_size, args.seed)
        else:
            records = bench.bench_audit(args.block_counts, args.storage_size, args.seed, args.reps)
        if out_dir:
            path = out_dir / f"{kind}.csv"
            path.write_text(bench.to_csv(records))
            print(f"wrote {path}")
        else:
            sys.stdout.write(bench.to_csv(records))


def cmd_fsck(args: argparse.Namespace) -> None:
    with open_store(args.store, readonly=True) as store:
        report = verify_store(store)
        print(f"versions={len(store.records)} missing={len(report.missing)} "
              f"corrupt={len(report.corrupt)} unreachable={len(report.unreachable)} "
              f"torn_tail={'yes' if report.torn_tail else 'no'}")
        for kind in ("missing", "corrupt", "unreachable"):
            for nid in sorted(getattr(report, kind)):
                print(f"{kind} {nid.hex()}")
        if report.affected_versions:
            print("affected_versions=" + ",".join(map(str, sorted(report.affected_versions))))
    if not report.ok:
        raise CommandFailed("StoreDamaged", "store failed verification")


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mf", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the storage server")
    p.add_argument("--store", required=True)
    p.add_argument("--listen", help=f"host:port (default: $MF_LISTEN or {service.DEFAULT_LISTEN})")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("tpa", help="run the third-party auditor")
    p.add_argument("--listen", default=service.DEFAULT_TPA_LISTEN)
    p.add_argument("--registry", help="append-only JSON-lines file persisting registrations")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_tpa)

    def endpoints(p: argparse.ArgumentParser, tpa: bool = True) -> None:
        p.add_argument("--server", default=service.DEFAULT_LISTEN)
        if tpa:
            p.add_argument("--tpa", default=service.DEFAULT_TPA_LISTEN)

    p = sub.add_parser("upload", help="chunk, encrypt, upload and register a file")
    p.add_argument("--file", required=True)
    p.add_argument("--key-file", required=True)
    endpoints(p)
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("update", help="replace one block, creating a new version")
    p.add_argument("--index", type=int, required=True)
    p.add_argument("--data", required=True, help="file holding the new block plaintext")
    p.add_argument("--base", type=int, help="base version (default: latest)")
    p.add_argument("--key-file", required=True)
    endpoints(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("get", help="download and decrypt a version")
    p.add_argument("--version", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--key-file", required=True)
    endpoints(p, tpa=False)
    p.set_defaults(func=cmd_get)

    p = sub.add_parser("audit", help="ask the TPA to run an audit round")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--count", type=int, default=0)
    mode.add_argument("--exhaustive", action="store_true")
    p.add_argument("--seed", type=int)
    endpoints(p)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("bench", help="emit benchmark CSVs")
    p.add_argument("kind", choices=["creation", "retrieval", "update", "storage", "audit", "all"])
    p.add_argument("--sizes", type=_floats, default=list(bench.DEFAULT_SIZES), help="MiB, comma-separated")
    p.add_argument("--version-counts", type=_ints, default=list(bench.DEFAULT_VERSION_COUNTS))
    p.add_argument("--block-counts", type=_ints, default=list(bench.DEFAULT_AUDIT_COUNTS))
    p.add_argument("--storage-size", type=float, default=64, help="file size in MiB for storage/audit")
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for <kind>.csv files (default: stdout)")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fsck", help="verify an on-disk store")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_fsck)
    return parser


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (CommandFailed, ForestError) as exc:
        return _fail(exc.code, str(exc), EXIT_FAIL)
    except ValueError as exc:
        return _fail("UsageError", str(exc), EXIT_USAGE)
    except OSError as exc:
        return _fail("IOError", str(exc), EXIT_FAIL)
    return EXIT_OK


def _fail(code: str, message: str, status: int) -> int:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)
    return status


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
