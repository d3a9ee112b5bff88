"""Tables, manifests, snapshots, clone lineage and version history.

A manifest is the frozen list of objects that makes up one table version.
Manifests are immutable and shared: a named snapshot, a clone and a restore
all point at an existing manifest file instead of copying it.

Every change of a table's current manifest is appended to the table's history
as ``(ts, manifest_id, kind)``.  ``kind`` is ``"append"`` when the new manifest
only adds objects (flush, spilled commit) and ``"rewrite"`` when objects may
disappear (compaction, restore) or ``"create"`` for the first version.  A
timestamp read picks the last manifest before the first rewrite that happened
after the requested timestamp and filters rows by commit timestamp.
"""

from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Union

from .errors import (
    DuplicateName,
    DuplicateSnapshotName,
    IoFailure,
    OutOfRetention,
    RefSyntaxError,
    UnknownSnapshot,
    UnknownTable,
)
from .object_store import ObjectMeta, new_object_id
from .schema import Schema

CATALOG_FORMAT = 1


# snapshot references ---------------------------------------------------


@dataclass(frozen=True)
class Current:
    table: str

    def __str__(self) -> str:
        return self.table


@dataclass(frozen=True)
class Named:
    table: str
    name: str

    def __str__(self) -> str:
        return f"{self.table}@{self.name}"


@dataclass(frozen=True)
class AtTimestamp:
    table: str
    ts: int

    def __str__(self) -> str:
        return f"{self.table}@ts:{self.ts}"


SnapshotRef = Union[Current, Named, AtTimestamp]


TABLE_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
SNAPSHOT_NAME = re.compile(r"(?!ts:)[A-Za-z0-9_][A-Za-z0-9_.:-]*")
_REF = re.compile(rf"({TABLE_NAME.pattern})(?:@(?:ts:(\d+)|({SNAPSHOT_NAME.pattern})))?")


def parse_ref(text: str) -> SnapshotRef:
    """Parse ``NAME``, ``NAME@SNAP`` or ``NAME@ts:N``."""
    m = _REF.fullmatch(text.strip())
    if m is None:
        raise RefSyntaxError(f"bad snapshot reference {text!r}")
    table, ts, snap = m.groups()
    if ts is not None:
        return AtTimestamp(table, int(ts))
    if snap is not None:
        return Named(table, snap)
    return Current(table)


def check_name(pattern: re.Pattern, name: str, what: str) -> None:
    if not pattern.fullmatch(name):
        raise RefSyntaxError(f"invalid {what} name {name!r}")


def format_ref(ref: SnapshotRef) -> str:
    return str(ref)


# manifests -------------------------------------------------------------


@dataclass(frozen=True)
class ObjectRef:
    """One manifest entry.

    ``commit_ts`` is set for objects written before their transaction
    committed; every row then takes that timestamp.  ``cap`` hides rows and
    tombstones committed after it (used when a version is taken at a past
    timestamp).
    """

    id: str
    kind: str
    rows: int
    min_key: tuple
    max_key: tuple
    min_ts: int
    max_ts: int
    nbytes: int = 0
    targets: frozenset = frozenset()
    commit_ts: int | None = None
    cap: int | None = None

    @classmethod
    def from_meta(cls, meta: ObjectMeta, commit_ts: int | None = None) -> "ObjectRef":
        ref = cls(
            id=meta.id,
            kind=meta.kind,
            rows=meta.rows,
            min_key=meta.min_key,
            max_key=meta.max_key,
            min_ts=meta.min_ts if commit_ts is None else commit_ts,
            max_ts=meta.max_ts if commit_ts is None else commit_ts,
            nbytes=meta.nbytes,
            targets=meta.targets,
            commit_ts=commit_ts,
        )
        return ref

    @property
    def ident(self) -> tuple[str, int | None]:
        return (self.id, self.cap)

    @property
    def is_data(self) -> bool:
        return self.kind == "data"

    @property
    def bound(self) -> int | None:
        """Largest visible commit ts, or None when every row is visible."""
        return self.cap

    def capped(self, ts: int) -> "ObjectRef | None":
        if self.min_ts > ts:
            return None
        if self.max_ts <= ts:
            return self
        cap = ts if self.cap is None else min(self.cap, ts)
        return replace(self, cap=cap)

    def to_json(self) -> dict:
        d = {
            "id": self.id,
            "kind": self.kind,
            "rows": self.rows,
            "min_key": _enc_key(self.min_key),
            "max_key": _enc_key(self.max_key),
            "min_ts": self.min_ts,
            "max_ts": self.max_ts,
            "nbytes": self.nbytes,
        }
        if self.targets:
            d["targets"] = sorted(self.targets)
        if self.commit_ts is not None:
            d["commit_ts"] = self.commit_ts
        if self.cap is not None:
            d["cap"] = self.cap
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ObjectRef":
        return cls(
            id=d["id"],
            kind=d["kind"],
            rows=d["rows"],
            min_key=_dec_key(d["min_key"]),
            max_key=_dec_key(d["max_key"]),
            min_ts=d["min_ts"],
            max_ts=d["max_ts"],
            nbytes=d.get("nbytes", 0),
            targets=frozenset(d.get("targets", ())),
            commit_ts=d.get("commit_ts"),
            cap=d.get("cap"),
        )


def _enc_key(key: tuple) -> list:
    return [{"$b": v.hex()} if isinstance(v, bytes) else v for v in key]


def _dec_key(raw: list) -> tuple:
    return tuple(bytes.fromhex(v["$b"]) if isinstance(v, dict) else v for v in raw)


@dataclass(frozen=True)
class Manifest:
    refs: tuple[ObjectRef, ...]
    schema_hash: int
    created_ts: int
    id: str | None = None

    @property
    def data_refs(self) -> tuple[ObjectRef, ...]:
        return tuple(r for r in self.refs if r.is_data)

    @property
    def tombstone_refs(self) -> tuple[ObjectRef, ...]:
        return tuple(r for r in self.refs if not r.is_data)

    @property
    def data_objects(self) -> frozenset[str]:
        return frozenset(r.id for r in self.refs if r.is_data)

    @property
    def tombstone_objects(self) -> frozenset[str]:
        return frozenset(r.id for r in self.refs if not r.is_data)

    @property
    def object_ids(self) -> frozenset[str]:
        return frozenset(r.id for r in self.refs)

    @property
    def fingerprint(self) -> frozenset:
        return frozenset(r.ident for r in self.refs)

    @property
    def row_count_upper(self) -> int:
        return sum(r.rows for r in self.refs if r.is_data)

    def with_added(self, refs: Iterable[ObjectRef], ts: int) -> "Manifest":
        return Manifest(self.refs + tuple(refs), self.schema_hash, ts)

    def capped(self, ts: int) -> "Manifest":
        refs = []
        changed = False
        for r in self.refs:
            c = r.capped(ts)
            if c is not r:
                changed = True
            if c is not None:
                refs.append(c)
        if not changed:
            return self
        return Manifest(tuple(refs), self.schema_hash, min(self.created_ts, ts))

    def to_json(self) -> dict:
        return {
            "schema_hash": self.schema_hash,
            "created_ts": self.created_ts,
            "objects": [r.to_json() for r in self.refs],
        }

    @classmethod
    def from_json(cls, d: dict, mid: str | None = None) -> "Manifest":
        return cls(
            tuple(ObjectRef.from_json(o) for o in d["objects"]),
            d["schema_hash"],
            d["created_ts"],
            mid,
        )


def empty_manifest(schema_hash: int, ts: int = 0) -> Manifest:
    return Manifest((), schema_hash, ts)


def _atomic_write(path: Path, data: bytes, fsync: bool) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            if fsync:
                fh.flush()
                os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        raise IoFailure(f"writing {path}: {exc}") from exc


class ManifestStore:
    """``<repo>/manifests/<hex>.mf``, one JSON document per frozen manifest."""

    def __init__(self, root: Path, fsync: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._cache: dict[str, Manifest] = {}
        self.bytes_written = 0

    def path_of(self, mid: str) -> Path:
        return self.root / f"{mid}.mf"

    def save(self, manifest: Manifest) -> Manifest:
        if manifest.id is not None and manifest.id in self._cache:
            return manifest
        mid = new_object_id()
        data = json.dumps(manifest.to_json(), separators=(",", ":")).encode()
        _atomic_write(self.path_of(mid), data, self.fsync)
        self.bytes_written += len(data)
        saved = replace(manifest, id=mid)
        self._cache[mid] = saved
        return saved

    def load(self, mid: str) -> Manifest:
        hit = self._cache.get(mid)
        if hit is not None:
            return hit
        try:
            raw = self.path_of(mid).read_bytes()
        except FileNotFoundError:
            raise UnknownSnapshot(f"manifest {mid} no longer exists") from None
        m = Manifest.from_json(json.loads(raw), mid)
        self._cache[mid] = m
        return m

    def exists(self, mid: str) -> bool:
        return mid in self._cache or self.path_of(mid).exists()

    def ids(self) -> set[str]:
        return {p.stem for p in self.root.glob("*.mf")}

    def delete(self, mid: str) -> int:
        self._cache.pop(mid, None)
        p = self.path_of(mid)
        try:
            size = p.stat().st_size
            p.unlink()
            return size
        except FileNotFoundError:
            return 0


# tables ----------------------------------------------------------------


@dataclass
class Lineage:
    parent_table: str  # internal id of the table cloned from
    parent_name: str
    parent_manifest: str
    ts: int

    def to_json(self) -> dict:
        return {
            "parent_table": self.parent_table,
            "parent_name": self.parent_name,
            "parent_manifest": self.parent_manifest,
            "ts": self.ts,
        }


@dataclass
class SnapshotInfo:
    manifest: str
    ts: int


@dataclass
class TableInfo:
    id: str
    name: str
    schema: Schema
    manifest: str
    created_ts: int
    uniquifier: int = 0
    snapshots: dict[str, SnapshotInfo] = field(default_factory=dict)
    lineage: Lineage | None = None
    history: list[tuple[int, str, str]] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "schema": self.schema.to_json(),
            "manifest": self.manifest,
            "created_ts": self.created_ts,
            "uniquifier": self.uniquifier,
            "snapshots": {k: [v.manifest, v.ts] for k, v in self.snapshots.items()},
            "lineage": self.lineage.to_json() if self.lineage else None,
            "history": [list(h) for h in self.history],
        }

    @classmethod
    def from_json(cls, name: str, d: dict) -> "TableInfo":
        return cls(
            id=d["id"],
            name=name,
            schema=Schema.from_json(d["schema"]),
            manifest=d["manifest"],
            created_ts=d["created_ts"],
            uniquifier=d.get("uniquifier", 0),
            snapshots={k: SnapshotInfo(v[0], v[1]) for k, v in d.get("snapshots", {}).items()},
            lineage=Lineage(**d["lineage"]) if d.get("lineage") else None,
            history=[tuple(h) for h in d.get("history", [])],
        )


@dataclass
class Settings:
    object_rows: int = 8192
    spill_rows: int = 8192
    retention_commits: int | None = None
    fsync: bool = False


class Catalog:
    """Persistent metadata, saved as ``<repo>/catalog.json`` by atomic rename.

    Mutations are serialized by ``lock``; readers work on immutable manifests.
    """

    def __init__(self, root: str | os.PathLike, settings: Settings | None = None, *, create: bool = False):
        self.root = Path(root)
        self.path = self.root / "catalog.json"
        self.lock = threading.RLock()
        if create:
            self.settings = settings or Settings()
            self.clock = 0
            self.tables: dict[str, TableInfo] = {}
        else:
            self._load()
        self.manifests = ManifestStore(self.root / "manifests", fsync=self.settings.fsync)
        if create:
            self.save()

    # persistence -------------------------------------------------------

    def _load(self) -> None:
        try:
            data = json.loads(self.path.read_text())
        except FileNotFoundError:
            raise UnknownTable(f"no repository at {self.root}") from None
        s = data.get("settings", {})
        self.settings = Settings(**s)
        self.clock = data["clock"]
        self.tables = {n: TableInfo.from_json(n, t) for n, t in data["tables"].items()}

    def to_json(self) -> dict:
        return {
            "format": CATALOG_FORMAT,
            "clock": self.clock,
            "settings": vars(self.settings),
            "tables": {n: t.to_json() for n, t in sorted(self.tables.items())},
        }

    def save(self) -> int:
        with self.lock:
            data = json.dumps(self.to_json(), separators=(",", ":")).encode()
            _atomic_write(self.path, data, self.settings.fsync)
            return len(data)

    def size(self) -> int:
        return self.path.stat().st_size

    # clock -------------------------------------------------------------

    def next_ts(self) -> int:
        with self.lock:
            self.clock += 1
            return self.clock

    # tables ------------------------------------------------------------

    def table(self, name: str) -> TableInfo:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTable(f"no table {name!r}") from None

    def create_table(self, name: str, schema: Schema, ts: int) -> TableInfo:
        check_name(TABLE_NAME, name, "table")
        with self.lock:
            if name in self.tables:
                raise DuplicateName(f"table {name!r} already exists")
            m = self.manifests.save(empty_manifest(schema.schema_hash, ts))
            info = TableInfo(new_object_id(), name, schema, m.id, ts, history=[(ts, m.id, "create")])
            self.tables[name] = info
            self.save()
            return info

    def drop_table(self, name: str) -> None:
        with self.lock:
            self.table(name)
            del self.tables[name]
            self.save()

    def current_manifest(self, name: str) -> Manifest:
        return self.manifests.load(self.table(name).manifest)

    def install(self, name: str, manifest: Manifest, ts: int, kind: str, *, save: bool = True) -> Manifest:
        """Make ``manifest`` the current version of ``name``."""
        with self.lock:
            info = self.table(name)
            if manifest.id is None:
                manifest = self.manifests.save(manifest)
            info.manifest = manifest.id
            info.history.append((ts, manifest.id, kind))
            if save:
                self.save()
            return manifest

    # snapshots ---------------------------------------------------------

    def add_snapshot(self, table: str, name: str, ts: int) -> Named:
        check_name(SNAPSHOT_NAME, name, "snapshot")
        with self.lock:
            info = self.table(table)
            if name in info.snapshots:
                raise DuplicateSnapshotName(f"snapshot {name!r} already exists on {table!r}")
            info.snapshots[name] = SnapshotInfo(info.manifest, ts)
            self.save()
            return Named(table, name)

    def drop_snapshot(self, table: str, name: str) -> None:
        with self.lock:
            info = self.table(table)
            if name not in info.snapshots:
                raise UnknownSnapshot(f"no snapshot {name!r} on {table!r}")
            del info.snapshots[name]
            self.save()

    def retention_floor(self) -> int | None:
        r = self.settings.retention_commits
        return None if r is None else self.clock - r

    def history_manifest_at(self, table: str, ts: int) -> tuple[Manifest, bool]:
        """Manifest holding every row committed at or before ``ts``.

        The flag is True when the answer is the current version, in which case
        the in-memory tail also belongs to the read.
        """
        info = self.table(table)
        floor = self.retention_floor()
        if floor is not None and ts < floor:
            raise OutOfRetention(f"ts {ts} is older than the retention horizon ({floor})")
        if ts < info.created_ts:
            raise UnknownSnapshot(f"table {table!r} did not exist at ts {ts}")
        hist = info.history
        for i, (hts, _, kind) in enumerate(hist):
            if hts > ts and kind == "rewrite":
                if i == 0:
                    break
                return self.manifests.load(hist[i - 1][1]), False
        return self.manifests.load(info.manifest), True

    def resolve(self, ref: SnapshotRef) -> Manifest:
        """Frozen manifest for a reference, ignoring any unflushed tail."""
        if isinstance(ref, Named):
            info = self.table(ref.table)
            snap = info.snapshots.get(ref.name)
            if snap is None:
                raise UnknownSnapshot(f"no snapshot {ref.name!r} on {ref.table!r}")
            return self.manifests.load(snap.manifest)
        if isinstance(ref, AtTimestamp):
            m, _ = self.history_manifest_at(ref.table, ref.ts)
            return m.capped(ref.ts)
        if isinstance(ref, Current):
            return self.current_manifest(ref.table)
        raise RefSyntaxError(f"not a snapshot reference: {ref!r}")

    # clone / lineage ---------------------------------------------------

    def clone_table(self, src_table: str, manifest: Manifest, dst: str, ts: int, uniquifier: int) -> TableInfo:
        check_name(TABLE_NAME, dst, "table")
        with self.lock:
            if dst in self.tables:
                raise DuplicateName(f"table {dst!r} already exists")
            src = self.table(src_table)
            if manifest.id is None:
                manifest = self.manifests.save(manifest)
            info = TableInfo(
                id=new_object_id(),
                name=dst,
                schema=src.schema,
                manifest=manifest.id,
                created_ts=ts,
                uniquifier=uniquifier,
                lineage=Lineage(src.id, src.name, manifest.id, ts),
                history=[(ts, manifest.id, "create")],
            )
            self.tables[dst] = info
            self.save()
            return info

    def by_id(self, tid: str) -> TableInfo | None:
        for t in self.tables.values():
            if t.id == tid:
                return t
        return None

    def prune_history(self) -> None:
        """Forget history entries that no retained timestamp can reach."""
        floor = self.retention_floor()
        if floor is None:
            return
        with self.lock:
            for info in self.tables.values():
                hist = info.history
                keep_from = 0
                for i in range(len(hist) - 1):
                    if hist[i + 1][0] <= floor:
                        keep_from = i + 1
                info.history = hist[keep_from:]

    def live_manifest_ids(self) -> set[str]:
        """Manifests pinned by a current version, a named snapshot or history."""
        live = set()
        for info in self.tables.values():
            live.add(info.manifest)
            live.update(s.manifest for s in info.snapshots.values())
            live.update(h[1] for h in info.history)
        return live

    def find_common_base(self, target: str, source: str) -> Manifest | None:
        """Clone-parent manifest linking the two tables, if still pinned."""
        t = self.table(target)
        s = self.table(source)
        candidates = []
        if s.lineage is not None and s.lineage.parent_table == t.id:
            candidates.append(s.lineage.parent_manifest)
        if t.lineage is not None and t.lineage.parent_table == s.id:
            candidates.append(t.lineage.parent_manifest)
        live = self.live_manifest_ids()
        for mid in candidates:
            if mid in live and self.manifests.exists(mid):
                return self.manifests.load(mid)
        return None
