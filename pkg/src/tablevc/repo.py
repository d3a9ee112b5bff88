"""Repository: the public entry point tying catalog, object store and engine together."""

from __future__ import annotations

import os
from pathlib import Path
from typing import Iterable, Sequence

from .catalog import (
    SNAPSHOT_NAME,
    AtTimestamp,
    Catalog,
    Current,
    Manifest,
    Named,
    Settings,
    SnapshotRef,
    TableInfo,
    check_name,
    parse_ref,
)
from .errors import DuplicateName, DuplicateSnapshotName, UnknownTable, UserError
from .object_store import ObjectStore
from .schema import Schema
from .table_engine import Engine, ReadView, Transaction


def as_ref(ref: SnapshotRef | str) -> SnapshotRef:
    return parse_ref(ref) if isinstance(ref, str) else ref


class Repository:
    """A directory holding objects, manifests and the catalog.

    Committed changes become durable when the table's tail is flushed; call
    :meth:`close` (or use the repository as a context manager) to flush all.
    """

    def __init__(self, root: Path, catalog: Catalog):
        self.root = root
        self.catalog = catalog
        self.store = ObjectStore(root / "objects", fsync=catalog.settings.fsync)
        self.engine = Engine(catalog, self.store)

    # lifecycle ---------------------------------------------------------

    @classmethod
    def init(
        cls,
        root: str | os.PathLike,
        *,
        object_rows: int = 8192,
        spill_rows: int | None = None,
        retention_commits: int | None = None,
        fsync: bool = False,
    ) -> "Repository":
        root = Path(root)
        if (root / "catalog.json").exists():
            raise DuplicateName(f"a repository already exists at {root}")
        root.mkdir(parents=True, exist_ok=True)
        settings = Settings(
            object_rows=object_rows,
            spill_rows=spill_rows if spill_rows is not None else object_rows,
            retention_commits=retention_commits,
            fsync=fsync,
        )
        return cls(root, Catalog(root, settings, create=True))

    @classmethod
    def open(cls, root: str | os.PathLike) -> "Repository":
        root = Path(root)
        if not (root / "catalog.json").exists():
            raise UnknownTable(f"no repository at {root}")
        return cls(root, Catalog(root))

    def close(self) -> None:
        self.engine.flush_all()
        self.catalog.save()

    def __enter__(self) -> "Repository":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # settings ----------------------------------------------------------

    @property
    def clock(self) -> int:
        return self.catalog.clock

    def set_retention(self, commits: int | None) -> None:
        self.catalog.settings.retention_commits = commits
        self.catalog.save()

    # tables ------------------------------------------------------------

    def create_table(self, name: str, schema: Schema) -> str:
        ts = self.catalog.next_ts()
        return self.catalog.create_table(name, schema, ts).id

    def drop_table(self, name: str) -> None:
        self.engine.forget(name)
        self.catalog.drop_table(name)

    def table(self, name: str) -> TableInfo:
        return self.catalog.table(name)

    def tables(self) -> list[str]:
        return sorted(self.catalog.tables)

    def schema(self, table: str) -> Schema:
        return self.catalog.table(table).schema

    # transactions ------------------------------------------------------

    def begin(self, table: str) -> Transaction:
        return self.engine.begin(table)

    def insert(self, table: str, rows: Iterable[Sequence]) -> int:
        with self.begin(table) as txn:
            return txn.insert(rows)

    def delete(self, table: str, keys: Iterable[Sequence]) -> int:
        with self.begin(table) as txn:
            return txn.delete(keys)

    def delete_where(self, table: str, predicate: dict) -> int:
        with self.begin(table) as txn:
            return txn.delete_where(predicate)

    def update(self, table: str, keys: Iterable[Sequence], changes: dict) -> int:
        with self.begin(table) as txn:
            return txn.update(keys, changes)

    def update_where(self, table: str, predicate: dict, changes: dict) -> int:
        with self.begin(table) as txn:
            return txn.update_where(predicate, changes)

    def flush(self, table: str) -> bool:
        return self.engine.flush(table)

    # reads -------------------------------------------------------------

    def view(self, ref: SnapshotRef | str) -> ReadView:
        return self.engine.view(as_ref(ref))

    def scan(self, ref: SnapshotRef | str) -> list[tuple]:
        return self.view(ref).scan()

    def count(self, ref: SnapshotRef | str) -> int:
        return self.view(ref).count()

    def resolve_manifest(self, ref: SnapshotRef | str) -> Manifest:
        """Frozen manifest for a reference; flushes the tail when it matters."""
        ref = as_ref(ref)
        if isinstance(ref, (Current, AtTimestamp)):
            self.catalog.table(ref.table)
            self.flush(ref.table)
            if isinstance(ref, AtTimestamp):
                self.view(ref)  # validates retention and clock bounds
        return self.catalog.resolve(ref)

    # snapshots ---------------------------------------------------------

    def create_snapshot(self, table: str, name: str) -> Named:
        check_name(SNAPSHOT_NAME, name, "snapshot")
        info = self.catalog.table(table)
        if name in info.snapshots:
            raise DuplicateSnapshotName(f"snapshot {name!r} already exists on {table!r}")
        self.flush(table)
        return self.catalog.add_snapshot(table, name, self.catalog.clock)

    def drop_snapshot(self, table: str, name: str) -> None:
        self.catalog.drop_snapshot(table, name)

    def snapshots(self, table: str) -> dict[str, int]:
        return {n: s.ts for n, s in sorted(self.catalog.table(table).snapshots.items())}

    # clone / restore ---------------------------------------------------

    def clone_table(self, src: SnapshotRef | str, dst: str) -> str:
        src = as_ref(src)
        if dst in self.catalog.tables:
            raise DuplicateName(f"table {dst!r} already exists")
        manifest = self.resolve_manifest(src)
        ts = self.catalog.next_ts()
        uniq = max(self.catalog.table(src.table).uniquifier, _max_uniquifier(manifest, self.schema(src.table)))
        return self.catalog.clone_table(src.table, manifest, dst, ts, uniq).id

    def restore_table(self, table: str, src: SnapshotRef | str) -> int:
        """Make ``src``'s version the current one; returns the restore ts."""
        src = as_ref(src)
        target = self.catalog.table(table)
        target.schema.require_compatible(self.schema(src.table), "restore schemas")
        manifest = self.resolve_manifest(src)
        st = self.engine.state(table)
        with st.lock:
            self.flush(table)
            info = self.catalog.table(table)
            info.uniquifier = max(info.uniquifier, _max_uniquifier(manifest, info.schema))
            _, ts = self.engine.install_rewrite(table, manifest, "restore")
        return ts

    def find_common_base(self, target: str, source: SnapshotRef | str) -> Manifest | None:
        return self.catalog.find_common_base(target, as_ref(source).table)

    # version operations ------------------------------------------------

    def diff(self, a: SnapshotRef | str, b: SnapshotRef | str, base: SnapshotRef | str | None = None):
        from .version_ops import snapshot_diff

        a, b = as_ref(a), as_ref(b)
        schema = self.schema(a.table)
        schema.require_compatible(self.schema(b.table), "diff schemas")
        ma = self.resolve_manifest(a)
        mb = self.resolve_manifest(b)
        if base is not None:
            mbase = self.resolve_manifest(base)
            schema.require_compatible(self.schema(as_ref(base).table), "base schema")
        else:
            mbase = self.catalog.find_common_base(a.table, b.table)
        return snapshot_diff(self.store, schema, ma, mb, mbase)

    def merge(self, target: str, source: SnapshotRef | str, base: SnapshotRef | str | None = None, mode="fail"):
        from .merge_engine import MergeMode, merge

        if not isinstance(as_ref(target), Current):
            raise UserError(f"merge target {target!r} must be a current table, not a snapshot")
        return merge(self, target, as_ref(source), as_ref(base) if base is not None else None, MergeMode.parse(mode))

    def compact(self, table: str) -> Manifest:
        from .maintenance import compact

        return compact(self, table)

    def gc(self, dry_run: bool = False):
        from .maintenance import gc

        return gc(self, dry_run=dry_run)

    # accounting --------------------------------------------------------

    def disk_usage(self) -> int:
        total = 0
        for dirpath, _, files in os.walk(self.root):
            for f in files:
                try:
                    total += os.path.getsize(os.path.join(dirpath, f))
                except OSError:
                    pass
        return total

    def metadata_bytes(self) -> int:
        """Size of the catalog file plus all manifest files."""
        total = self.catalog.size()
        for mid in self.catalog.manifests.ids():
            total += self.catalog.manifests.path_of(mid).stat().st_size
        return total


def _max_uniquifier(manifest: Manifest, schema: Schema) -> int:
    if schema.has_pk:
        return 0
    top = -1
    for ref in manifest.data_refs:
        top = max(top, ref.max_key[0])
    return top + 1
