"""Operator command line.

Subcommands: serve, create-table, export, import, verify, replay,
seed-demo, bench-comments, worker.  Environment overrides: SERVE_ADDR,
DATA_DIR, WORKER_TOKEN.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 integrity or operation failure.
"""

from __future__ import annotations

import argparse
import os
import random
import sys
import time
from pathlib import Path

import requests

from .analysis import SunPosition
from .client import ApiError, TableClient
from .encoding import decode_spec, encode_spec
from .errors import ChainBroken, GridHubError
from .feedback import CellAnchor, GeoAnchor
from .history import read_log_records, replay, verify_chain
from .model import Cell, CellEdit, CellType, TableSpec
from .server import DEFAULT_HEARTBEAT_S, GridHubServer
from .store import TableRegistry, import_export_bytes
from .worker import (
    DEFAULT_ACCESS_CATEGORIES,
    DEFAULT_ROAD_SPEED_MPS,
    DEFAULT_WALK_SPEED_MPS,
    Worker,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INTEGRITY = 2

DEFAULT_ADDR = "127.0.0.1:8642"

DEMO_REGISTRY = (
    CellType(0, "empty", (0, 0, 0), "empty"),
    CellType(1, "low_rise", (220, 170, 60), "building", 2),
    CellType(2, "tower", (200, 40, 40), "building", 12),
    CellType(3, "street", (90, 90, 90), "road"),
    CellType(4, "green", (40, 160, 70), "park"),
    CellType(5, "canal", (40, 90, 200), "water"),
)


class _Parser(argparse.ArgumentParser):
    # Usage problems must exit 1, not argparse's default 2; 2 is
    # reserved for integrity failures.
    def error(self, message: str):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _fail(message: str, code: int) -> int:
    print(message, file=sys.stderr)
    return code


def _demo_spec(name: str, ncols: int = 16, nrows: int = 16) -> TableSpec:
    return TableSpec(
        name,
        ncols,
        nrows,
        cell_size_m=10.0,
        origin_lat=52.3676,
        origin_lon=4.9041,
        rotation_deg=0.0,
        floor_height_m=3.0,
        registry=DEMO_REGISTRY,
    )


def _parse_addr(addr: str) -> tuple[str, int]:
    host, sep, port = addr.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must be host:port, got {addr!r}")
    return host or "127.0.0.1", int(port)


def _data_dir(args) -> Path:
    return Path(args.data_dir)


def _tables_in(data_dir: Path, requested: list[str]) -> list[str]:
    if requested:
        return requested
    return sorted(p.stem for p in data_dir.glob("*.spec"))


def _read_table_files(data_dir: Path, table: str):
    spec_path = data_dir / f"{table}.spec"
    if not spec_path.exists():
        raise FileNotFoundError(f"no table {table!r} in {data_dir}")
    spec = decode_spec(spec_path.read_bytes().strip())
    log_path = data_dir / f"{table}.log"
    if not log_path.exists():
        raise FileNotFoundError(f"table {table!r} has no commit log in {data_dir}")
    records, terminated = read_log_records(log_path)
    return spec, records, terminated


# --- subcommands -----------------------------------------------------------

def cmd_serve(args) -> int:
    try:
        host, port = _parse_addr(args.addr)
    except ValueError as e:
        return _fail(str(e), EXIT_USAGE)
    data_dir = _data_dir(args)
    data_dir.mkdir(parents=True, exist_ok=True)
    registry = TableRegistry(data_dir)
    try:
        warnings = registry.open_existing()
    except ChainBroken as e:
        table = getattr(e, "table", "?")
        return _fail(f"table {table}: {e}", EXIT_INTEGRITY)
    except GridHubError as e:
        return _fail(f"cannot open {data_dir}: {e}", EXIT_INTEGRITY)
    for w in warnings:
        print(f"recovered: {w}", file=sys.stderr)
    server = GridHubServer(
        registry,
        host,
        port,
        worker_token=args.worker_token,
        heartbeat_s=args.heartbeat,
    )
    print(f"serving {len(registry.tables)} table(s) at {server.url}, data in {data_dir}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def cmd_create_table(args) -> int:
    raw = sys.stdin.buffer.read() if args.spec == "-" else Path(args.spec).read_bytes()
    spec = decode_spec(raw.strip())
    with TableClient(args.server) as client:
        summary = client.create_table(spec)
    print(f"created table {summary['name']}, head version {summary['head_version']}")
    return EXIT_OK


def cmd_export(args) -> int:
    data_dir = _data_dir(args)
    spec, records, terminated = _read_table_files(data_dir, args.table)
    res = verify_chain(records, spec, terminated)
    if not res.ok:
        return _fail(
            f"table {args.table}: broken at record {res.broken_at}: {res.reason}",
            EXIT_INTEGRITY,
        )
    payload = encode_spec(spec) + b"\n" + b"".join(r + b"\n" for r in records)
    if args.out == "-":
        sys.stdout.buffer.write(payload)
    else:
        Path(args.out).write_bytes(payload)
        print(f"exported {res.record_count} records to {args.out}")
    return EXIT_OK


def cmd_import(args) -> int:
    data = sys.stdin.buffer.read() if args.path == "-" else Path(args.path).read_bytes()
    data_dir = _data_dir(args)
    data_dir.mkdir(parents=True, exist_ok=True)
    name, count = import_export_bytes(data_dir, data)
    print(f"imported table {name}: {count} records")
    return EXIT_OK


def cmd_verify(args) -> int:
    data_dir = _data_dir(args)
    worst = EXIT_OK
    for table in _tables_in(data_dir, args.tables):
        spec, records, terminated = _read_table_files(data_dir, table)
        res = verify_chain(records, spec, terminated)
        if res.ok:
            print(f"{table}: OK ({res.record_count} records)")
        else:
            print(f"{table}: broken at record {res.broken_at}: {res.reason}")
            worst = EXIT_INTEGRITY
    return worst


def cmd_replay(args) -> int:
    data_dir = _data_dir(args)
    worst = EXIT_OK
    for table in _tables_in(data_dir, args.tables):
        spec, records, terminated = _read_table_files(data_dir, table)
        try:
            commits, warnings = replay(records, spec, terminated)
        except ChainBroken as e:
            print(f"{table}: {e}")
            worst = EXIT_INTEGRITY
            continue
        for w in warnings:
            print(f"{table}: {w}", file=sys.stderr)
        if commits:
            head = commits[-1]
            print(f"{table}: head version {head.version} grid_hash {head.grid_hash}")
        else:
            print(f"{table}: empty log")
    return worst


_DEMO_WORDS = (
    "shade", "bikes", "noise", "market", "plaza", "canal", "transit",
    "trees", "playground", "parking", "rooftop", "wind", "cafe", "bench",
)


def cmd_seed_demo(args) -> int:
    rng = random.Random(args.seed)
    spec = _demo_spec(args.name)
    authors = [f"designer{i}" for i in range(1, 5)]
    with TableClient(args.server) as client:
        client.create_table(spec)
        version = 1
        for _ in range(30):
            edits = []
            for _ in range(rng.randint(3, 12)):
                index = rng.randrange(spec.cell_count)
                ctype = rng.choice(spec.registry)
                rotation = rng.choice((0, 90, 180, 270))
                floors = None
                if ctype.category == "building" and rng.random() < 0.3:
                    floors = rng.randrange(0, 30)
                edits.append(CellEdit(index, Cell(ctype.id, rotation, floors)))
            commit, _created = client.post_edits(
                args.name, edits, rng.choice(authors), base_version=version, source="cli"
            )
            version = commit.version
        for i in range(1, 201):
            if rng.random() < 0.7:
                anchor = CellAnchor(
                    rng.randrange(spec.ncols), rng.randrange(spec.nrows)
                )
            else:
                anchor = GeoAnchor(
                    spec.origin_lat + rng.uniform(-0.0005, 0.002),
                    spec.origin_lon + rng.uniform(-0.0005, 0.003),
                )
            text = f"note {i}: more {rng.choice(_DEMO_WORDS)} near {rng.choice(_DEMO_WORDS)}"
            comment = client.add_comment(args.name, anchor, text, rng.choice(authors))
            for _ in range(rng.randint(0, 5)):
                client.like(args.name, comment.id, rng.choice(authors))
        head = client.head(args.name)
    print(f"table {args.name} seeded: head version {head.version} grid_hash {head.grid_hash}")
    return EXIT_OK


def cmd_bench_comments(args) -> int:
    with TableClient(args.server) as client:
        client.create_table(_demo_spec(args.table, 8, 8))
        spec = _demo_spec(args.table, 8, 8)
        t0 = time.perf_counter()
        for i in range(1, args.n + 1):
            anchor = CellAnchor(i % spec.ncols, (i // spec.ncols) % spec.nrows)
            comment = client.add_comment(args.table, anchor, f"bench comment {i}", "bench")
            if comment.id != i:
                return _fail(
                    f"comment {i} acknowledged with id {comment.id}; ids not dense",
                    EXIT_INTEGRITY,
                )
        elapsed = time.perf_counter() - t0
    rate = args.n / elapsed if elapsed > 0 else float("inf")
    print(
        f"{args.n} comments in {elapsed:.2f}s ({rate:.0f}/s), ids dense 1..{args.n}"
    )
    return EXIT_OK


def cmd_worker(args) -> int:
    try:
        sun = SunPosition(args.sun_azimuth, args.sun_elevation)
    except GridHubError as e:
        return _fail(str(e), EXIT_USAGE)
    if not args.token:
        return _fail("worker token required (--token or WORKER_TOKEN)", EXIT_USAGE)
    worker = Worker(
        args.server,
        args.table,
        args.token,
        sun,
        access_categories=tuple(args.access) or DEFAULT_ACCESS_CATEGORIES,
        road_speed_mps=args.road_speed,
        walk_speed_mps=args.walk_speed,
    )
    try:
        worker.run()
    except KeyboardInterrupt:
        worker.stop()
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gridhub", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add_data_dir(p):
        p.add_argument(
            "--data-dir", default=os.environ.get("DATA_DIR", "data"),
            help="table storage directory (env DATA_DIR)",
        )

    def add_server(p):
        p.add_argument(
            "--server",
            default=f"http://{os.environ.get('SERVE_ADDR', DEFAULT_ADDR)}",
            help="server base URL",
        )

    p = sub.add_parser("serve", help="run the table server")
    p.add_argument(
        "--addr", default=os.environ.get("SERVE_ADDR", DEFAULT_ADDR),
        help="host:port to listen on (env SERVE_ADDR)",
    )
    add_data_dir(p)
    p.add_argument(
        "--worker-token", default=os.environ.get("WORKER_TOKEN"),
        help="shared secret for layer writes (env WORKER_TOKEN)",
    )
    p.add_argument("--heartbeat", type=float, default=DEFAULT_HEARTBEAT_S)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("create-table", help="create a table on a running server")
    add_server(p)
    p.add_argument("--spec", required=True, help="path to a table spec file, - for stdin")
    p.set_defaults(func=cmd_create_table)

    p = sub.add_parser("export", help="write a table's spec and commit log to one file")
    add_data_dir(p)
    p.add_argument("table")
    p.add_argument("out", help="output path, - for stdout")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("import", help="install an exported table into the data directory")
    add_data_dir(p)
    p.add_argument("path", help="export file, - for stdin")
    p.set_defaults(func=cmd_import)

    p = sub.add_parser("verify", help="check commit log integrity")
    add_data_dir(p)
    p.add_argument("tables", nargs="*", help="default: every table in the data directory")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("replay", help="rebuild tables from their logs and print heads")
    add_data_dir(p)
    p.add_argument("tables", nargs="*")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("seed-demo", help="populate a demo table through the API")
    add_server(p)
    p.add_argument("--name", default="demo")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_seed_demo)

    p = sub.add_parser("bench-comments", help="time comment ingestion on a fresh table")
    add_server(p)
    p.add_argument("--table", default="bench")
    p.add_argument("-n", type=int, default=200)
    p.set_defaults(func=cmd_bench_comments)

    p = sub.add_parser("worker", help="run the analysis worker for one table")
    add_server(p)
    p.add_argument("--table", required=True)
    p.add_argument("--token", default=os.environ.get("WORKER_TOKEN"))
    p.add_argument("--sun-azimuth", type=float, default=135.0)
    p.add_argument("--sun-elevation", type=float, default=45.0)
    p.add_argument(
        "--access", action="append", default=[],
        metavar="CATEGORY", help=f"repeatable; default {DEFAULT_ACCESS_CATEGORIES}",
    )
    p.add_argument("--road-speed", type=float, default=DEFAULT_ROAD_SPEED_MPS)
    p.add_argument("--walk-speed", type=float, default=DEFAULT_WALK_SPEED_MPS)
    p.set_defaults(func=cmd_worker)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        return _fail(str(e), EXIT_USAGE)
    except ChainBroken as e:
        return _fail(str(e), EXIT_INTEGRITY)
    except (GridHubError, ApiError) as e:
        return _fail(str(e), EXIT_INTEGRITY)
    except requests.RequestException as e:
        return _fail(f"server unreachable: {e}", EXIT_INTEGRITY)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
