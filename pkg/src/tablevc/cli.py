"""``tablevc`` command line.

Exit codes: 0 success, 1 user error, 2 merge aborted on a true conflict,
3 internal error.  Writers hold an exclusive lock on ``<repo>/.lock`` and
flush every table before exiting; readers take a shared lock.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import os
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

from . import codec
from .catalog import parse_ref
from .errors import MergeConflictFailure, UserError
from .repo import Repository
from .schema import Schema

EXIT_OK = 0
EXIT_USER = 1
EXIT_CONFLICT = 2
EXIT_INTERNAL = 3


class UsageError(UserError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _assignments(pairs: Sequence[str] | None, schema: Schema) -> dict:
    out = {}
    types = {c.name: c.type for c in schema.columns}
    for p in pairs or ():
        col, sep, val = p.partition("=")
        if not sep:
            raise UsageError(f"expected column=value, got {p!r}")
        col = col.strip()
        if col not in types:
            raise UsageError(f"no column {col!r}")
        out[col] = codec.parse_value(val, types[col])
    return out


def _read_keys(path: str, schema: Schema) -> list[tuple]:
    if not schema.has_pk:
        raise UsageError("table has no primary key; select rows with --where instead")
    with _open_in(path) as fh:
        rows = codec.read_csv(fh, schema, schema.primary_key)
    return rows


@contextmanager
def _open_in(path: str):
    if path == "-":
        yield sys.stdin
        return
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        yield fh


@contextmanager
def _locked(root: Path, exclusive: bool):
    root.mkdir(parents=True, exist_ok=True)
    with open(root / ".lock", "a") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX if exclusive else fcntl.LOCK_SH)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


# commands ----------------------------------------------------------------


def cmd_init(repo_path: Path, args) -> int:
    Repository.init(repo_path, object_rows=args.object_rows, retention_commits=args.retention)
    print(json.dumps({"repo": str(repo_path)}))
    return EXIT_OK


def cmd_create_table(repo: Repository, args) -> int:
    schema = Schema.parse(args.columns, args.pk)
    repo.create_table(args.name, schema)
    return EXIT_OK


def cmd_drop_table(repo: Repository, args) -> int:
    repo.drop_table(args.name)
    return EXIT_OK


def cmd_insert(repo: Repository, args) -> int:
    schema = repo.schema(args.table)
    with _open_in(args.csv) as fh:
        rows = codec.read_csv(fh, schema)
    print(json.dumps({"inserted": repo.insert(args.table, rows)}))
    return EXIT_OK


def cmd_delete(repo: Repository, args) -> int:
    schema = repo.schema(args.table)
    if bool(args.keys) == bool(args.where):
        raise UsageError("give exactly one of --keys or --where")
    if args.keys:
        n = repo.delete(args.table, _read_keys(args.keys, schema))
    else:
        n = repo.delete_where(args.table, _assignments(args.where, schema))
    print(json.dumps({"deleted": n}))
    return EXIT_OK


def cmd_update(repo: Repository, args) -> int:
    schema = repo.schema(args.table)
    changes = _assignments(args.set, schema)
    if not changes:
        raise UsageError("nothing to --set")
    if bool(args.keys) == bool(args.where):
        raise UsageError("give exactly one of --keys or --where")
    if args.keys:
        n = repo.update(args.table, _read_keys(args.keys, schema), changes)
    else:
        n = repo.update_where(args.table, _assignments(args.where, schema), changes)
    print(json.dumps({"updated": n}))
    return EXIT_OK


def _emit_rows(names, rows, fmt: str) -> None:
    out = sys.stdout
    if fmt == "csv":
        codec.write_csv(out, names, rows)
    else:
        for line in codec.jsonl_lines(names, rows):
            out.write(line + "\n")


def cmd_scan(repo: Repository, args) -> int:
    ref = parse_ref(args.ref)
    _emit_rows(repo.schema(ref.table).names, repo.scan(ref), args.format)
    return EXIT_OK


def cmd_snapshot(repo: Repository, args) -> int:
    if args.action == "create":
        if not args.name:
            raise UsageError("snapshot create needs TABLE NAME")
        repo.create_snapshot(args.table, args.name)
    elif args.action == "drop":
        if not args.name:
            raise UsageError("snapshot drop needs TABLE NAME")
        repo.drop_snapshot(args.table, args.name)
    else:
        print(json.dumps(repo.snapshots(args.table), sort_keys=True))
    return EXIT_OK


def cmd_clone(repo: Repository, args) -> int:
    repo.clone_table(args.src, args.dst)
    return EXIT_OK


def cmd_restore(repo: Repository, args) -> int:
    ts = repo.restore_table(args.table, args.src)
    print(json.dumps({"restored_ts": ts}))
    return EXIT_OK


def cmd_diff(repo: Repository, args) -> int:
    a = parse_ref(args.a)
    names = repo.schema(a.table).names
    rows = repo.diff(args.a, args.b, base=args.base)
    if args.format == "csv":
        codec.write_diff_csv(sys.stdout, names, rows)
    else:
        for line in codec.diff_jsonl_lines(names, rows):
            sys.stdout.write(line + "\n")
    return EXIT_OK


def cmd_merge(repo: Repository, args) -> int:
    try:
        report = repo.merge(args.target, args.source, base=args.base, mode=args.on_conflict)
    except MergeConflictFailure as exc:
        print(json.dumps(exc.report.to_json(), sort_keys=True))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFLICT
    print(json.dumps(report.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_compact(repo: Repository, args) -> int:
    before = repo.catalog.table(args.table).manifest
    m = repo.compact(args.table)
    print(json.dumps({"objects": len(m.refs), "rewritten": m.id != before}))
    return EXIT_OK


def cmd_gc(repo: Repository, args) -> int:
    print(json.dumps(repo.gc(dry_run=args.dry_run).to_json(), sort_keys=True))
    return EXIT_OK


def cmd_bench(args) -> int:
    from .harness.experiments import run_experiment

    report = run_experiment(
        args.experiment,
        args.change_set,
        pk=args.pk,
        overlap_pct=args.overlap,
        seed=args.seed,
        base_rows=args.rows,
    )
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


# parser ------------------------------------------------------------------

# (handler, takes the writer lock)
COMMANDS = {
    "create-table": (cmd_create_table, True),
    "drop-table": (cmd_drop_table, True),
    "insert": (cmd_insert, True),
    "delete": (cmd_delete, True),
    "update": (cmd_update, True),
    "scan": (cmd_scan, False),
    "snapshot": (cmd_snapshot, True),
    "clone": (cmd_clone, True),
    "restore": (cmd_restore, True),
    "diff": (cmd_diff, False),
    "merge": (cmd_merge, True),
    "compact": (cmd_compact, True),
    "gc": (cmd_gc, True),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tablevc", description="Versioned tables: snapshot, clone, diff and merge.")
    p.add_argument("--repo", default=os.environ.get("TABLEVC_REPO"), help="repository directory (or $TABLEVC_REPO)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="create an empty repository")
    s.add_argument("--object-rows", type=int, default=8192)
    s.add_argument("--retention", type=int, default=None, help="commits of timestamp history to keep")

    s = sub.add_parser("create-table")
    s.add_argument("name")
    s.add_argument("--columns", required=True, help="name:TYPE,... with TYPE in INT64 FLOAT64 STRING BYTES BOOL")
    s.add_argument("--pk", default=None, help="comma-separated primary key columns")

    s = sub.add_parser("drop-table")
    s.add_argument("name")

    s = sub.add_parser("insert")
    s.add_argument("table")
    s.add_argument("--csv", required=True, help="CSV file with a header row, or - for stdin")

    for name in ("delete", "update"):
        s = sub.add_parser(name)
        s.add_argument("table")
        s.add_argument("--keys", help="CSV of primary-key columns with a header row")
        s.add_argument("--where", action="append", metavar="COL=VAL")
        if name == "update":
            s.add_argument("--set", action="append", metavar="COL=VAL", required=True)

    s = sub.add_parser("scan")
    s.add_argument("ref", help="NAME, NAME@SNAPSHOT or NAME@ts:N")
    s.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    s = sub.add_parser("snapshot")
    s.add_argument("action", choices=("create", "list", "drop"))
    s.add_argument("table")
    s.add_argument("name", nargs="?")

    s = sub.add_parser("clone")
    s.add_argument("src")
    s.add_argument("dst")

    s = sub.add_parser("restore")
    s.add_argument("table")
    s.add_argument("src")

    s = sub.add_parser("diff")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--base", default=None)
    s.add_argument("--format", choices=("csv", "jsonl"), default="jsonl")

    s = sub.add_parser("merge")
    s.add_argument("target")
    s.add_argument("--from", dest="source", required=True)
    s.add_argument("--base", default=None)
    s.add_argument("--on-conflict", choices=("fail", "skip", "accept"), default="fail")

    s = sub.add_parser("compact")
    s.add_argument("table")

    s = sub.add_parser("gc")
    s.add_argument("--dry-run", action="store_true")

    s = sub.add_parser("bench", help="run an experiment in a scratch repository")
    s.add_argument("--experiment", required=True, choices=("E1", "E2", "E3", "E4"))
    s.add_argument("--change-set", default="C2", choices=("C1", "C2", "C3", "C4"))
    s.add_argument("--pk", action=argparse.BooleanOptionalAction, default=True)
    s.add_argument("--overlap", type=float, default=0.1)
    s.add_argument("--rows", type=int, default=1_000_000)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--out", default=None)
    return p


def dispatch(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "bench":
            return cmd_bench(args)
        if not args.repo:
            raise UsageError("no repository: pass --repo or set TABLEVC_REPO")
        root = Path(args.repo)
        if args.command == "init":
            with _locked(root, True):
                return cmd_init(root, args)
        handler, writes = COMMANDS[args.command]
        if not (root / "catalog.json").exists():
            raise UsageError(f"no repository at {root}")
        with _locked(root, writes):
            repo = Repository.open(root)
            code = handler(repo, args)
            if writes:
                repo.close()
            return code
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except BrokenPipeError:
        return EXIT_OK
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to exit code 3
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
