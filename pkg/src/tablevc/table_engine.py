"""Transactions and MVCC reads over immutable objects plus an in-memory tail.

Committed rows first land in the table's tail, an append-only in-memory
object.  ``flush`` sorts the tail into a data object (and a tombstone object
for its deletes) and installs a new manifest.  Tail rows have rowids under a
``tail-`` prefixed id; flushing records where each of them moved so that
transactions that captured such rowids can still commit.
"""

from __future__ import annotations

import heapq
import threading
from array import array
from bisect import bisect_left, bisect_right
from collections import OrderedDict
from dataclasses import dataclass, field
from operator import itemgetter
from typing import Any, Iterable, Mapping, Sequence

from .catalog import AtTimestamp, Catalog, Current, Manifest, Named, ObjectRef, SnapshotRef
from .errors import (
    PkViolation,
    SchemaMismatch,
    TransactionClosed,
    UnknownSnapshot,
    WriteConflict,
)
from .object_store import ObjectMeta, ObjectStore, RowId, new_object_id
from .schema import Schema

_first = itemgetter(0)


def _bound(cap: int | None, ts: int | None) -> int | None:
    if cap is None:
        return ts
    if ts is None:
        return cap
    return min(cap, ts)


class Tail:
    """Committed rows and tombstones not yet written to an object."""

    __slots__ = ("id", "ts", "keys", "values", "tombs", "positions")

    def __init__(self) -> None:
        self.id = "tail-" + new_object_id()
        self.ts: list[int] = []
        self.keys: list[tuple] = []
        self.values: list[tuple] = []
        self.tombs: list[tuple[int, tuple, RowId]] = []
        self.positions: dict[tuple, list[int]] = {}

    def __len__(self) -> int:
        return len(self.keys)

    def append(self, ts: int, rows: Iterable[tuple[tuple, tuple]]) -> None:
        pos = len(self.keys)
        for key, values in rows:
            self.ts.append(ts)
            self.keys.append(key)
            self.values.append(values)
            self.positions.setdefault(key, []).append(pos)
            pos += 1


class DeadSetCache:
    """Tombstone targets per (manifest id, read bound); manifests never change."""

    def __init__(self, capacity: int = 32):
        self.capacity = capacity
        self._d: OrderedDict = OrderedDict()
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            hit = self._d.get(key)
            if hit is not None:
                self._d.move_to_end(key)
            return hit

    def put(self, key, value) -> None:
        with self._lock:
            self._d[key] = value
            self._d.move_to_end(key)
            while len(self._d) > self.capacity:
                self._d.popitem(last=False)

    def clear(self) -> None:
        with self._lock:
            self._d.clear()


def manifest_dead_set(
    store: ObjectStore, manifest: Manifest, ts: int | None = None
) -> dict[str, set[int]]:
    """Offsets hidden by the manifest's tombstones, grouped by object id."""
    dead: dict[str, set[int]] = {}
    for ref in manifest.tombstone_refs:
        bound = _bound(ref.cap, ts)
        tomb = store.read_tombstone_object(ref.id)
        if bound is None or ref.max_ts <= bound:
            for _, _, rid in tomb.entries:
                s = dead.get(rid.object)
                if s is None:
                    s = dead[rid.object] = set()
                s.add(rid.offset)
            continue
        override = ref.commit_ts
        for t, _, rid in tomb.entries:
            if (override if override is not None else t) <= bound:
                dead.setdefault(rid.object, set()).add(rid.offset)
    return dead


@dataclass
class ReadView:
    """A consistent read of one table version.

    ``ts`` filters rows and tombstones by commit timestamp; ``tail`` (with
    the captured lengths) is present only for reads of the latest version.
    """

    store: ObjectStore
    schema: Schema
    manifest: Manifest
    tail: Tail | None = None
    n_rows: int = 0
    n_tombs: int = 0
    ts: int | None = None
    cache: DeadSetCache | None = None
    _dead: dict | None = field(default=None, repr=False)

    # tombstones --------------------------------------------------------

    def dead(self) -> dict[str, set[int]]:
        if self._dead is not None:
            return self._dead
        m = self.manifest
        key = (m.id, self.ts) if m.id is not None else None
        base = self.cache.get(key) if (self.cache is not None and key) else None
        if base is None:
            base = manifest_dead_set(self.store, m, self.ts)
            if self.cache is not None and key:
                self.cache.put(key, base)
        tail_tombs = self.tail.tombs[: self.n_tombs] if self.tail is not None else ()
        if tail_tombs:
            dead = dict(base)
            copied: set[str] = set()
            for t, _, rid in tail_tombs:
                if self.ts is not None and t > self.ts:
                    continue
                if rid.object not in copied:
                    dead[rid.object] = set(dead.get(rid.object, ()))
                    copied.add(rid.object)
                dead[rid.object].add(rid.offset)
        else:
            dead = base
        self._dead = dead
        return dead

    # row selection -----------------------------------------------------

    def _visible(self, ref: ObjectRef, ts_list: Sequence[int], dead: dict) -> range | list[int]:
        bound = _bound(ref.cap, self.ts)
        d = dead.get(ref.id)
        n = ref.rows
        if bound is None or ref.max_ts <= bound:
            if not d:
                return range(n)
            return [i for i in range(n) if i not in d]
        if ref.commit_ts is not None:
            # every row carries commit_ts, which is past the bound here
            return []
        if d:
            return [i for i, t in enumerate(ts_list) if t <= bound and i not in d]
        return [i for i, t in enumerate(ts_list) if t <= bound]

    def _tail_visible(self, dead: dict) -> list[int]:
        tail = self.tail
        if tail is None or not self.n_rows:
            return []
        d = dead.get(tail.id, ())
        ts = self.ts
        tts = tail.ts
        return [
            i
            for i in range(self.n_rows)
            if i not in d and (ts is None or tts[i] <= ts)
        ]

    def _runs(self, with_ids: bool) -> list[list[tuple]]:
        dead = self.dead()
        runs = []
        for ref in self.manifest.data_refs:
            obj = self.store.read_data_object(ref.id)
            vis = self._visible(ref, obj.commit_ts, dead)
            if not vis:
                continue
            keys, values = obj.keys, obj.values
            if with_ids:
                oid = ref.id
                run = [(keys[i], RowId(oid, i), values[i]) for i in vis]
            elif isinstance(vis, range):
                run = list(zip(keys, values))
            else:
                run = [(keys[i], values[i]) for i in vis]
            runs.append(run)
        tvis = self._tail_visible(dead)
        if tvis:
            tail = self.tail
            if with_ids:
                run = [(tail.keys[i], RowId(tail.id, i), tail.values[i]) for i in tvis]
            else:
                run = [(tail.keys[i], tail.values[i]) for i in tvis]
            run.sort(key=_first)
            runs.append(run)
        return runs

    def _merged(self, with_ids: bool) -> list[tuple]:
        runs = self._runs(with_ids)
        if not runs:
            return []
        if len(runs) == 1:
            return runs[0]
        runs.sort(key=lambda r: r[0][0])
        if all(runs[i][-1][0] < runs[i + 1][0][0] for i in range(len(runs) - 1)):
            out: list[tuple] = []
            for r in runs:
                out.extend(r)
            return out
        return list(heapq.merge(*runs, key=_first))

    def scan(self) -> list[tuple]:
        """Row values in key order."""
        return [v for _, v in self._merged(False)]

    def scan_keyed(self) -> list[tuple[tuple, tuple]]:
        return self._merged(False)

    def scan_ids(self) -> list[tuple[tuple, RowId, tuple]]:
        return self._merged(True)

    def count(self) -> int:
        dead = self.dead()
        total = 0
        for ref in self.manifest.data_refs:
            bound = _bound(ref.cap, self.ts)
            if (bound is None or ref.max_ts <= bound) and not dead.get(ref.id):
                total += ref.rows
            else:
                ts, _ = self.store.read_keys(ref.id)
                total += len(self._visible(ref, ts, dead))
        return total + len(self._tail_visible(dead))

    # point access ------------------------------------------------------

    def locate(self, keys: Iterable[tuple]) -> dict[tuple, RowId]:
        """RowId of the live row for each key that has one."""
        qs = sorted(set(keys))
        found: dict[tuple, RowId] = {}
        if not qs:
            return found
        dead = self.dead()
        for ref in self.manifest.data_refs:
            lo = bisect_left(qs, ref.min_key)
            hi = bisect_right(qs, ref.max_key)
            if lo >= hi:
                continue
            bound = _bound(ref.cap, self.ts)
            ts_list, okeys = self.store.read_keys(ref.id)
            d = dead.get(ref.id, ())
            override = ref.commit_ts
            n = len(okeys)
            for q in qs[lo:hi]:
                i = bisect_left(okeys, q)
                while i < n and okeys[i] == q:
                    t = override if override is not None else ts_list[i]
                    if i not in d and (bound is None or t <= bound):
                        found[q] = RowId(ref.id, i)
                    i += 1
        tail = self.tail
        if tail is not None and self.n_rows:
            d = dead.get(tail.id, ())
            for q in qs:
                for i in tail.positions.get(q, ()):
                    if i < self.n_rows and i not in d and (self.ts is None or tail.ts[i] <= self.ts):
                        found[q] = RowId(tail.id, i)
        return found

    def fetch(self, rids: Iterable[RowId]) -> dict[RowId, tuple]:
        """Values stored at the given rowids (liveness is not checked)."""
        by_obj: dict[str, list[int]] = {}
        for rid in rids:
            by_obj.setdefault(rid.object, []).append(rid.offset)
        out: dict[RowId, tuple] = {}
        tail = self.tail
        for oid, offs in by_obj.items():
            if tail is not None and oid == tail.id:
                vals = [tail.values[i] for i in offs]
            else:
                vals = self.store.read_values_at(oid, offs)
            for off, v in zip(offs, vals):
                out[RowId(oid, off)] = v
        return out


# transactions ----------------------------------------------------------


@dataclass
class TableState:
    """Per-table runtime state that lives only in memory."""

    table_id: str
    name: str
    lock: threading.RLock = field(default_factory=threading.RLock)
    tail: Tail = field(default_factory=Tail)
    commit_log: list[tuple[int, frozenset]] = field(default_factory=list)
    rewrites: list[tuple[int, str]] = field(default_factory=list)
    remaps: dict[str, tuple[str, array]] = field(default_factory=dict)
    open_txns: dict[int, int] = field(default_factory=dict)


class Transaction:
    """A private workspace over a snapshot of one table taken at ``begin``."""

    def __init__(self, engine: "Engine", state: TableState, view: ReadView, base_ts: int):
        self.engine = engine
        self.state = state
        self.table = state.name
        self.schema = view.schema
        self.view = view
        self.base_ts = base_ts
        self.closed = False
        self.committed_ts: int | None = None
        self._seq = 0
        self._ins: dict[tuple, tuple] = {}
        self._spilled: list[ObjectMeta] = []
        self._spilled_keys: dict[tuple, RowId] = {}
        self._del: dict[RowId, tuple] = {}

    # context manager ---------------------------------------------------

    def __enter__(self) -> "Transaction":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if self.closed:
            return
        if exc_type is None:
            self.commit()
        else:
            self.abort()

    def _check_open(self) -> None:
        if self.closed:
            raise TransactionClosed("transaction already committed or aborted")

    @property
    def spilled_objects(self) -> list[str]:
        return [m.id for m in self._spilled]

    @property
    def is_empty(self) -> bool:
        return not (self._ins or self._spilled or self._del)

    # staging -----------------------------------------------------------

    def insert(self, rows: Iterable[Sequence]) -> int:
        self._check_open()
        rows = self.schema.validate_rows(rows)
        if not rows:
            return 0
        if self.schema.has_pk:
            idx = self.schema.pk_indices
            keyed = [(tuple(r[i] for i in idx), r) for r in rows]
            self._check_new_keys([k for k, _ in keyed])
        else:
            start = self.engine.reserve_uniquifiers(self.table, len(rows))
            keyed = [((start + i,), r) for i, r in enumerate(rows)]
        self._ins.update(keyed)
        self._maybe_spill()
        return len(rows)

    def _check_new_keys(self, keys: list[tuple]) -> None:
        if len(set(keys)) != len(keys):
            raise PkViolation("duplicate primary key within one insert")
        ins, spilled = self._ins, self._spilled_keys
        clash = [k for k in keys if k in ins or k in spilled]
        if clash:
            raise PkViolation(f"primary key {clash[0]!r} already inserted in this transaction")
        live = self.view.locate(keys)
        clash = [k for k, rid in live.items() if rid not in self._del]
        if clash:
            raise PkViolation(f"primary key {min(clash)!r} already exists")

    def _maybe_spill(self) -> None:
        limit = self.engine.catalog.settings.spill_rows
        if len(self._ins) < limit:
            return
        items = sorted(self._ins.items(), key=_first)
        cut = len(items) - len(items) % limit
        store = self.engine.store
        h = self.schema.schema_hash
        for start in range(0, cut, limit):
            chunk = items[start : start + limit]
            keys = [k for k, _ in chunk]
            meta = store.put_data(columns=([0] * len(chunk), keys, [v for _, v in chunk]), schema_hash=h)
            self.engine.inflight.add(meta.id)
            self._spilled.append(meta)
            oid = meta.id
            for i, k in enumerate(keys):
                self._spilled_keys[k] = RowId(oid, i)
        self._ins = dict(items[cut:])

    def stage_known(self, inserts: Iterable[tuple], deletes: Iterable[tuple[tuple, RowId]]) -> None:
        """Stage changes whose validity the caller already established.

        ``deletes`` are (key, rowid) pairs of rows live in this transaction's
        snapshot; inserted keys must be free once the deletes apply.
        """
        self._check_open()
        for key, rid in deletes:
            self._del[rid] = key
        rows = self.schema.validate_rows(inserts)
        if self.schema.has_pk:
            idx = self.schema.pk_indices
            self._ins.update((tuple(r[i] for i in idx), r) for r in rows)
        elif rows:
            start = self.engine.reserve_uniquifiers(self.table, len(rows))
            self._ins.update(((start + i,), r) for i, r in enumerate(rows))
        self._maybe_spill()

    def delete(self, keys: Iterable[Sequence]) -> int:
        self._check_open()
        keys = [tuple(k) for k in keys]
        n = 0
        pending = []
        for k in dict.fromkeys(keys):
            if k in self._ins:
                del self._ins[k]
                n += 1
            elif k in self._spilled_keys:
                self._del[self._spilled_keys.pop(k)] = k
                n += 1
            else:
                pending.append(k)
        if pending:
            for k, rid in self.view.locate(pending).items():
                if rid not in self._del:
                    self._del[rid] = k
                    n += 1
        return n

    def _matches(self, predicate: Mapping[str, Any]):
        idx = [(self.schema.index(c), v) for c, v in predicate.items()]
        return lambda values: all(values[i] == v for i, v in idx)

    def keys_where(self, predicate: Mapping[str, Any]) -> list[tuple]:
        """Keys of visible rows whose columns equal every ``column: value`` pair."""
        match = self._matches(predicate)
        return [k for k, v in self.scan_keyed() if match(v)]

    def delete_where(self, predicate: Mapping[str, Any]) -> int:
        return self.delete(self.keys_where(predicate))

    def update_where(self, predicate: Mapping[str, Any], changes: Mapping[str, Any]) -> int:
        return self.update(self.keys_where(predicate), changes)

    def lookup(self, keys: Iterable[tuple]) -> dict[tuple, tuple]:
        """Values of rows visible to this transaction, by key."""
        keys = [tuple(k) for k in keys]
        out: dict[tuple, tuple] = {}
        rest = []
        spilled: list[tuple[tuple, RowId]] = []
        for k in keys:
            if k in self._ins:
                out[k] = self._ins[k]
            elif k in self._spilled_keys:
                spilled.append((k, self._spilled_keys[k]))
            else:
                rest.append(k)
        located = [(k, rid) for k, rid in self.view.locate(rest).items() if rid not in self._del]
        if located:
            got = self.view.fetch(rid for _, rid in located)
            out.update((k, got[rid]) for k, rid in located)
        for k, rid in spilled:
            out[k] = self.engine.store.read_values_at(rid.object, [rid.offset])[0]
        return out

    def update(self, keys: Iterable[Sequence], changes: Mapping[str, Any]) -> int:
        """Rewrite matching rows as delete plus insert; returns rows changed."""
        self._check_open()
        idx = {self.schema.index(c): v for c, v in changes.items()}
        current = self.lookup(keys)
        if not current:
            return 0
        new_rows = self.schema.validate_rows(
            tuple(idx.get(i, v) for i, v in enumerate(vals)) for vals in current.values()
        )
        if self.schema.has_pk:
            pk = self.schema.pk_indices
            new_keys = [tuple(r[i] for i in pk) for r in new_rows]
            if len(set(new_keys)) != len(new_keys):
                raise PkViolation("update maps several rows to one primary key")
            moving = [k for k in new_keys if k not in current]
            if moving and self.lookup(moving):
                raise PkViolation("update collides with an existing primary key")
        self.delete(current.keys())
        self.insert(new_rows)
        return len(new_rows)

    # reading -----------------------------------------------------------

    def scan_keyed(self) -> list[tuple[tuple, tuple]]:
        rows = [(k, v) for k, rid, v in self.view.scan_ids() if rid not in self._del]
        extra = list(self._ins.items())
        store = self.engine.store
        for meta in self._spilled:
            obj = store.read_data_object(meta.id)
            extra.extend(
                (k, v)
                for i, (k, v) in enumerate(zip(obj.keys, obj.values))
                if RowId(meta.id, i) not in self._del
            )
        if extra:
            extra.sort(key=_first)
            rows = list(heapq.merge(rows, extra, key=_first))
        return rows

    def scan(self) -> list[tuple]:
        return [v for _, v in self.scan_keyed()]

    # finishing ---------------------------------------------------------

    def touched_keys(self) -> frozenset:
        return frozenset(self._ins) | frozenset(self._spilled_keys) | frozenset(self._del.values())

    def commit(self) -> int:
        self._check_open()
        return self.engine.commit(self)

    def abort(self) -> None:
        if self.closed:
            return
        self.engine.abort(self)


# engine ----------------------------------------------------------------


class Engine:
    """Commit pipeline, flushes and read views for every table of a repository."""

    def __init__(self, catalog: Catalog, store: ObjectStore):
        self.catalog = catalog
        self.store = store
        self.states: dict[str, TableState] = {}
        self.inflight: set[str] = set()
        self.dead_cache = DeadSetCache()
        self._txn_seq = 0
        self._lock = threading.RLock()

    def state(self, name: str) -> TableState:
        info = self.catalog.table(name)
        with self._lock:
            st = self.states.get(info.id)
            if st is None:
                st = self.states[info.id] = TableState(info.id, name)
            st.name = name
            return st

    def forget(self, name: str) -> None:
        info = self.catalog.table(name)
        self.states.pop(info.id, None)

    def reserve_uniquifiers(self, table: str, n: int) -> int:
        with self.catalog.lock:
            info = self.catalog.table(table)
            start = info.uniquifier
            info.uniquifier += n
            return start

    # views -------------------------------------------------------------

    def current_view(self, name: str) -> ReadView:
        st = self.state(name)
        with st.lock:
            info = self.catalog.table(name)
            return ReadView(
                self.store,
                info.schema,
                self.catalog.manifests.load(info.manifest),
                st.tail,
                len(st.tail),
                len(st.tail.tombs),
                None,
                self.dead_cache,
            )

    def view(self, ref: SnapshotRef) -> ReadView:
        if isinstance(ref, Current):
            return self.current_view(ref.table)
        info = self.catalog.table(ref.table)
        if isinstance(ref, Named):
            return ReadView(self.store, info.schema, self.catalog.resolve(ref), cache=self.dead_cache)
        if isinstance(ref, AtTimestamp):
            if ref.ts > self.catalog.clock:
                raise UnknownSnapshot(f"ts {ref.ts} is in the future (clock {self.catalog.clock})")
            st = self.state(ref.table)
            with st.lock:
                manifest, is_current = self.catalog.history_manifest_at(ref.table, ref.ts)
                if is_current:
                    return ReadView(
                        self.store,
                        info.schema,
                        manifest,
                        st.tail,
                        len(st.tail),
                        len(st.tail.tombs),
                        ref.ts,
                        self.dead_cache,
                    )
            return ReadView(self.store, info.schema, manifest.capped(ref.ts), ts=ref.ts, cache=self.dead_cache)
        raise UnknownSnapshot(f"cannot read {ref!r}")

    # transactions ------------------------------------------------------

    def begin(self, name: str) -> Transaction:
        st = self.state(name)
        with st.lock:
            view = self.current_view(name)
            base_ts = self.catalog.clock
            txn = Transaction(self, st, view, base_ts)
            with self._lock:
                self._txn_seq += 1
                txn._seq = self._txn_seq
            st.open_txns[txn._seq] = base_ts
            return txn

    def _close(self, txn: Transaction) -> None:
        txn.closed = True
        st = txn.state
        st.open_txns.pop(txn._seq, None)
        self.inflight.difference_update(txn.spilled_objects)
        if not st.open_txns:
            st.commit_log.clear()
            st.rewrites.clear()
            st.remaps.clear()
        else:
            oldest = min(st.open_txns.values())
            st.commit_log = [c for c in st.commit_log if c[0] > oldest]
            st.rewrites = [r for r in st.rewrites if r[0] > oldest]

    def abort(self, txn: Transaction) -> None:
        with txn.state.lock:
            self._close(txn)

    def _resolve_deletes(self, txn: Transaction, st: TableState) -> list[tuple[tuple, RowId]]:
        """Translate the transaction's delete targets to the current layout."""
        dels = []
        stale = []
        manifest = self.catalog.current_manifest(txn.table)
        live_objects = manifest.data_objects | {st.tail.id} | set(txn.spilled_objects)
        for rid, key in txn._del.items():
            moved = st.remaps.get(rid.object)
            if moved is not None:
                rid = RowId(moved[0], moved[1][rid.offset])
            if rid.object in live_objects:
                dels.append((key, rid))
            else:
                stale.append(key)
        if stale:
            found = self.current_view(txn.table).locate(stale)
            missing = [k for k in stale if k not in found]
            if missing:
                raise WriteConflict(f"row with key {missing[0]!r} changed after the transaction began")
            dels.extend((k, found[k]) for k in stale)
        return dels

    def commit(self, txn: Transaction) -> int:
        st = txn.state
        with st.lock:
            try:
                if txn.is_empty:
                    self._close(txn)
                    txn.committed_ts = self.catalog.clock
                    return txn.committed_ts
                if self.catalog.table(txn.table).id != st.table_id:
                    raise WriteConflict(f"table {txn.table!r} was dropped")
                for ts, kind in st.rewrites:
                    if ts > txn.base_ts and kind == "restore":
                        raise WriteConflict(f"table {txn.table!r} was restored at ts {ts}")
                touched = txn.touched_keys()
                for ts, keys in st.commit_log:
                    if ts > txn.base_ts and not keys.isdisjoint(touched):
                        key = min(keys & touched)
                        raise WriteConflict(f"key {key!r} was modified by a commit at ts {ts}")
                dels = self._resolve_deletes(txn, st)
            except BaseException:
                self._close(txn)
                raise
            ts = self.catalog.next_ts()
            if txn._spilled:
                refs = [ObjectRef.from_meta(m, commit_ts=ts) for m in txn._spilled]
                current = self.catalog.current_manifest(txn.table)
                self.catalog.install(txn.table, current.with_added(refs, ts), ts, "append")
            tail = st.tail
            tail.append(ts, sorted(txn._ins.items(), key=_first))
            tail.tombs.extend((ts, key, rid) for key, rid in dels)
            st.commit_log.append((ts, touched))
            txn.committed_ts = ts
            self._close(txn)
            limit = self.catalog.settings.object_rows
            if len(tail) >= limit or len(tail.tombs) >= limit:
                self.flush(txn.table)
            return ts

    # flush -------------------------------------------------------------

    def flush(self, name: str) -> bool:
        """Write the tail as objects; returns False when there was nothing to write."""
        st = self.state(name)
        with st.lock:
            tail = st.tail
            if not len(tail) and not tail.tombs:
                return False
            info = self.catalog.table(name)
            refs = []
            remap = None
            if len(tail):
                order = sorted(range(len(tail)), key=lambda i: (tail.keys[i], tail.ts[i]))
                meta = self.store.put_data(
                    columns=(
                        [tail.ts[i] for i in order],
                        [tail.keys[i] for i in order],
                        [tail.values[i] for i in order],
                    ),
                    schema_hash=info.schema.schema_hash,
                )
                perm = array("I", bytes(4 * len(order)))
                for new, old in enumerate(order):
                    perm[old] = new
                remap = (meta.id, perm)
                refs.append(ObjectRef.from_meta(meta))
            if tail.tombs:
                entries = []
                for t, key, rid in tail.tombs:
                    if rid.object == tail.id:
                        rid = RowId(remap[0], remap[1][rid.offset])
                    entries.append((t, key, rid))
                entries.sort(key=lambda e: (e[1], e[0]))
                refs.append(ObjectRef.from_meta(self.store.put_tombstones(entries)))
            current = self.catalog.manifests.load(info.manifest)
            self.catalog.install(name, current.with_added(refs, self.catalog.clock), self.catalog.clock, "append")
            if remap is not None and st.open_txns:
                st.remaps[tail.id] = remap
            st.tail = Tail()
            return True

    def flush_all(self) -> None:
        for name in list(self.catalog.tables):
            self.flush(name)

    # rewrites ----------------------------------------------------------

    def install_rewrite(self, name: str, manifest: Manifest, kind: str) -> tuple[Manifest, int]:
        """Replace the current version wholesale (compaction or restore).

        The caller must have flushed the tail under the same lock.
        """
        st = self.state(name)
        with st.lock:
            if len(st.tail) or st.tail.tombs:
                raise SchemaMismatch("internal: rewrite requires an empty tail")
            ts = self.catalog.next_ts()
            installed = self.catalog.install(name, manifest, ts, "rewrite")
            if st.open_txns:
                st.rewrites.append((ts, kind))
            return installed, ts
