"""Deltas between table versions, signed change scans and multiset diffs.

A delta is the object-set difference between two manifests.  Scanning it
yields one signed row per physical row whose liveness differs between the two
versions: ``-`` for a base row that is gone, ``+`` for a row that appeared.
Only objects in the delta are read, plus any shared tombstone object whose
targets fall inside the delta and, for value lookups, the base rows of
deletes.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Sequence

import msgpack

from .catalog import Manifest, ObjectRef
from .errors import BaseMismatch, MissingObject, NotFound, SchemaMismatch
from .object_store import ObjectStore, RowId
from .schema import ColumnType, Schema, row_order_key

WIDE_VALUE_BYTES = 256


class SignedRow(NamedTuple):
    sign: int
    key: tuple
    values: tuple | None
    rowid: RowId


class DiffRow(NamedTuple):
    diff_cnt: int
    values: tuple


@dataclass(frozen=True)
class DeltaSet:
    added_data: tuple[ObjectRef, ...]
    added_tombstones: tuple[ObjectRef, ...]
    removed: tuple[ObjectRef, ...]
    shared: tuple[ObjectRef, ...]

    @property
    def added_data_ids(self) -> frozenset[str]:
        return frozenset(r.id for r in self.added_data)

    @property
    def added_tombstone_ids(self) -> frozenset[str]:
        return frozenset(r.id for r in self.added_tombstones)

    @property
    def removed_ids(self) -> frozenset[str]:
        return frozenset(r.id for r in self.removed)

    @property
    def is_empty(self) -> bool:
        return not (self.added_data or self.added_tombstones or self.removed)

    @property
    def base_fingerprint(self) -> frozenset:
        return frozenset(r.ident for r in self.shared + self.removed)


def compute_delta(snap: Manifest, base: Manifest) -> DeltaSet:
    if snap.schema_hash != base.schema_hash:
        raise SchemaMismatch("manifests belong to different schemas")
    base_ids = {r.ident for r in base.refs}
    snap_ids = {r.ident for r in snap.refs}
    added = [r for r in snap.refs if r.ident not in base_ids]
    return DeltaSet(
        added_data=tuple(r for r in added if r.is_data),
        added_tombstones=tuple(r for r in added if not r.is_data),
        removed=tuple(r for r in base.refs if r.ident not in snap_ids),
        shared=tuple(r for r in snap.refs if r.ident in base_ids),
    )


# visibility helpers ----------------------------------------------------


def _read_data(store: ObjectStore, oid: str):
    try:
        return store.read_data_object(oid)
    except NotFound as exc:
        raise MissingObject(str(exc)) from None


def _read_keys(store: ObjectStore, oid: str):
    try:
        return store.read_keys(oid)
    except NotFound as exc:
        raise MissingObject(str(exc)) from None


def _read_tomb(store: ObjectStore, oid: str):
    try:
        return store.read_tombstone_object(oid)
    except NotFound as exc:
        raise MissingObject(str(exc)) from None


def _fully_visible(ref: ObjectRef) -> bool:
    return ref.cap is None or ref.max_ts <= ref.cap


def visible_offsets(ref: ObjectRef, ts_list: Sequence[int]) -> range | list[int]:
    """Offsets of a data ref's rows inside its commit-ts cap."""
    if _fully_visible(ref):
        return range(ref.rows)
    if ref.commit_ts is not None:
        return []
    cap = ref.cap
    return [i for i, t in enumerate(ts_list) if t <= cap]


def tombstone_entries(store: ObjectStore, ref: ObjectRef) -> Iterable[tuple[int, tuple, RowId]]:
    entries = _read_tomb(store, ref.id).entries
    if _fully_visible(ref):
        return entries
    if ref.commit_ts is not None:
        return ()
    return [e for e in entries if e[0] <= ref.cap]


class _RowPresence:
    """Answers "is this rowid a stored, in-cap row of that manifest"."""

    def __init__(self, store: ObjectStore, data_refs: Iterable[ObjectRef]):
        self.store = store
        self.refs = {r.id: r for r in data_refs}

    def __call__(self, rid: RowId) -> bool:
        ref = self.refs.get(rid.object)
        if ref is None or rid.offset >= ref.rows:
            return False
        if _fully_visible(ref):
            return True
        if ref.commit_ts is not None:
            return False
        ts, _ = _read_keys(self.store, ref.id)
        return ts[rid.offset] <= ref.cap


def _dead_targets(store: ObjectStore, refs: Iterable[ObjectRef], objects: set[str]) -> set[RowId]:
    dead = set()
    for ref in refs:
        if objects.isdisjoint(ref.targets):
            continue
        dead.update(rid for _, _, rid in tombstone_entries(store, ref) if rid.object in objects)
    return dead


# delta scan ------------------------------------------------------------


@dataclass
class ScannedDelta:
    rows: list[SignedRow]
    base_fingerprint: frozenset = field(default_factory=frozenset)

    def __iter__(self):
        return iter(self.rows)

    def __len__(self) -> int:
        return len(self.rows)


def scan_delta(store: ObjectStore, delta: DeltaSet, base: Manifest | None = None) -> ScannedDelta:
    """Collapse a delta into signed rows ordered by key.

    A row is emitted with ``-`` when it is live in the base version but not in
    the newer one, and with ``+`` in the opposite case.  A row inserted and
    deleted inside the delta is live in neither and produces nothing.  Deletes
    carry the key and rowid only; inserts carry their values.
    """
    if base is not None and delta.base_fingerprint != base.fingerprint:
        raise BaseMismatch("delta was not computed against this base")
    cand: dict[RowId, tuple] = {}
    values: dict[RowId, tuple] = {}
    for ref in delta.added_data:
        obj = _read_data(store, ref.id)
        oid = ref.id
        for i in visible_offsets(ref, obj.commit_ts):
            rid = RowId(oid, i)
            cand[rid] = obj.keys[i]
            values[rid] = obj.values[i]
    removed_data = [r for r in delta.removed if r.is_data]
    removed_tombs = [r for r in delta.removed if not r.is_data]
    for ref in removed_data:
        ts, keys = _read_keys(store, ref.id)
        oid = ref.id
        for i in visible_offsets(ref, ts):
            cand[RowId(oid, i)] = keys[i]
    dead_base: set[RowId] = set()
    dead_snap: set[RowId] = set()
    for ref in removed_tombs:
        for _, key, rid in tombstone_entries(store, ref):
            cand.setdefault(rid, key)
            dead_base.add(rid)
    for ref in delta.added_tombstones:
        for _, key, rid in tombstone_entries(store, ref):
            cand.setdefault(rid, key)
            dead_snap.add(rid)
    if not cand:
        return ScannedDelta([], delta.base_fingerprint)

    objects = {rid.object for rid in cand}
    shared_tombs = [r for r in delta.shared if not r.is_data]
    shared_dead = _dead_targets(store, shared_tombs, objects)
    shared_data = [r for r in delta.shared if r.is_data]
    in_base = _RowPresence(store, shared_data + removed_data)
    in_snap = _RowPresence(store, shared_data + list(delta.added_data))

    out: list[SignedRow] = []
    revived: list[RowId] = []
    for rid, key in cand.items():
        if rid in shared_dead:
            continue
        live_b = rid not in dead_base and in_base(rid)
        live_s = rid not in dead_snap and in_snap(rid)
        if live_b == live_s:
            continue
        if live_b:
            out.append(SignedRow(-1, key, None, rid))
        elif rid in values:
            out.append(SignedRow(1, key, values[rid], rid))
        else:
            revived.append(rid)
    if revived:
        got = lookup_rows(store, revived)
        out.extend(SignedRow(1, cand[rid], got[rid], rid) for rid in revived)
    out.sort(key=lambda r: (r.key, r.sign, r.rowid))
    return ScannedDelta(out, delta.base_fingerprint)


def lookup_rows(store: ObjectStore, rids: Iterable[RowId]) -> dict[RowId, tuple]:
    """Stored values for each rowid, reading only the needed rows."""
    by_obj: dict[str, list[int]] = {}
    for rid in rids:
        by_obj.setdefault(rid.object, []).append(rid.offset)
    out: dict[RowId, tuple] = {}
    for oid, offsets in by_obj.items():
        offsets.sort()
        try:
            vals = store.read_values_at(oid, offsets)
        except NotFound as exc:
            raise MissingObject(str(exc)) from None
        for off, v in zip(offsets, vals):
            out[RowId(oid, off)] = v
    return out


# grouping --------------------------------------------------------------


class ValueGrouper:
    """Hashable group keys for full rows.

    Rows holding a long STRING or BYTES value are keyed by a SHA-256 digest so
    the grouping table does not retain copies of large values; the first row
    seen per digest is kept to verify later rows really are equal.
    """

    def __init__(self, schema: Schema, wide: int = WIDE_VALUE_BYTES):
        self.wide = wide
        self.lob_cols = [
            i for i, c in enumerate(schema.columns) if c.type in (ColumnType.STRING, ColumnType.BYTES)
        ]
        self._witness: dict[bytes, tuple] = {}

    def key(self, values: tuple):
        if not any(
            values[i] is not None and len(values[i]) > self.wide for i in self.lob_cols
        ):
            return values
        digest = hashlib.sha256(msgpack.packb(values)).digest()
        seen = self._witness.setdefault(digest, values)
        if seen != values:
            return values
        return ("\x00sha256", digest)

    def values_of(self, key) -> tuple:
        if isinstance(key, tuple) and len(key) == 2 and key[0] == "\x00sha256" and isinstance(key[1], bytes):
            return self._witness[key[1]]
        return key


@dataclass
class Group:
    """Changes from both sides touching one key (or one row value)."""

    key: tuple
    ops: tuple[list[SignedRow], list[SignedRow]]
    survivors: tuple[list[SignedRow], list[SignedRow]]


def _cancel(a: list[SignedRow], b: list[SignedRow], val: Callable[[SignedRow], tuple]):
    """Drop deletes of the same rowid and equal-valued inserts from both sides."""
    a_del = {r.rowid for r in a if r.sign < 0}
    b_del = {r.rowid for r in b if r.sign < 0}
    both = a_del & b_del
    a_ins = Counter(val(r) for r in a if r.sign > 0)
    b_ins = Counter(val(r) for r in b if r.sign > 0)
    common = a_ins & b_ins

    def keep(rows):
        out = []
        budget = Counter(common)
        for r in rows:
            if r.sign < 0:
                if r.rowid in both:
                    continue
            else:
                v = val(r)
                if budget[v] > 0:
                    budget[v] -= 1
                    continue
            out.append(r)
        return out

    return keep(a), keep(b)


def diff_aggregate(
    delta_a: ScannedDelta,
    delta_b: ScannedDelta,
    schema: Schema,
    lookup: Callable[[list[RowId]], dict[RowId, tuple]] | None = None,
    *,
    keep_cancelled: bool = False,
) -> list[Group]:
    """Group both sides' changes and cancel the ones they share.

    PK tables group by primary key.  Tables without a primary key group by
    full row values; deletes then need ``lookup`` to recover their values.
    Cancelled changes stay in ``ops`` but not in ``survivors``.  Without
    ``keep_cancelled``, no-PK groups only hold surviving changes.
    """
    if delta_a.base_fingerprint != delta_b.base_fingerprint:
        raise BaseMismatch("the two deltas were computed against different bases")
    if schema.has_pk:
        sides: dict[tuple, tuple[list, list]] = {}
        for idx, delta in enumerate((delta_a, delta_b)):
            for r in delta.rows:
                sides.setdefault(r.key, ([], []))[idx].append(r)
        groups = []
        for key in sorted(sides):
            a, b = sides[key]
            sa, sb = _cancel(a, b, lambda r: r.values)
            if sa or sb:
                groups.append(Group(key, (a, b), (sa, sb)))
        return groups

    if lookup is None:
        raise ValueError("tables without a primary key need a lookup for deleted rows")
    a_rows, b_rows = list(delta_a.rows), list(delta_b.rows)
    sa, sb = _cancel(a_rows, b_rows, lambda r: r.values)
    if not keep_cancelled:
        a_rows, b_rows = sa, sb
    need = {r.rowid for r in a_rows + b_rows if r.sign < 0}
    found = lookup(sorted(need)) if need else {}

    def filled(rows):
        return [r if r.sign > 0 else r._replace(values=found[r.rowid]) for r in rows]

    a_rows, b_rows = filled(a_rows), filled(b_rows)
    surv = ({id_of(r) for r in sa}, {id_of(r) for r in sb})
    grouper = ValueGrouper(schema)
    sides = {}
    for idx, rows in enumerate((a_rows, b_rows)):
        for r in rows:
            sides.setdefault(grouper.key(r.values), ([], []))[idx].append(r)
    groups = []
    for gk, (a, b) in sides.items():
        ga = [r for r in a if id_of(r) in surv[0]]
        gb = [r for r in b if id_of(r) in surv[1]]
        if ga or gb:
            groups.append(Group(grouper.values_of(gk), (a, b), (ga, gb)))
    groups.sort(key=lambda g: row_order_key(g.key))
    return groups


def id_of(r: SignedRow) -> tuple[int, RowId]:
    return (r.sign, r.rowid)


# snapshot diff ---------------------------------------------------------


def _sorted_diff(schema: Schema, counts: Counter, grouper: ValueGrouper | None = None) -> list[DiffRow]:
    rows = []
    for gk, n in counts.items():
        if n:
            vals = grouper.values_of(gk) if grouper is not None else gk
            rows.append(DiffRow(n, vals))
    return sort_diff(schema, rows)


def sort_diff(schema: Schema, rows: Iterable[DiffRow]) -> list[DiffRow]:
    if schema.has_pk:
        pk = schema.pk_indices
        return sorted(
            rows, key=lambda d: (tuple(d.values[i] for i in pk), d.diff_cnt, row_order_key(d.values))
        )
    return sorted(rows, key=lambda d: (row_order_key(d.values), d.diff_cnt))


def diff_with_base(store: ObjectStore, schema: Schema, a: Manifest, b: Manifest, base: Manifest) -> list[DiffRow]:
    """Fast path: both versions expressed as deltas from a shared base."""
    da = scan_delta(store, compute_delta(a, base), base)
    db = scan_delta(store, compute_delta(b, base), base)
    sa, sb = _cancel(da.rows, db.rows, lambda r: r.values)
    need = [r.rowid for r in sa + sb if r.sign < 0]
    found = lookup_rows(store, need) if need else {}
    grouper = ValueGrouper(schema)
    counts: Counter = Counter()
    for sign, rows in ((-1, sa), (1, sb)):
        for r in rows:
            vals = r.values if r.sign > 0 else found[r.rowid]
            counts[grouper.key(vals)] += sign * r.sign
    return _sorted_diff(schema, counts, grouper)


def unshared_live(store: ObjectStore, a: Manifest, b: Manifest) -> tuple[list[tuple], list[tuple]]:
    """Rows live in exactly one of two versions, skipping shared rows.

    Rows of data objects present in both versions are read only when a
    tombstone held by just one side hides them.
    """
    delta = compute_delta(b, a)
    a_only = [r for r in delta.removed if r.is_data]
    b_only = list(delta.added_data)
    a_tombs_own = [r for r in delta.removed if not r.is_data]
    b_tombs_own = list(delta.added_tombstones)
    shared_data = [r for r in delta.shared if r.is_data]
    shared_tombs = [r for r in delta.shared if not r.is_data]

    def live_rows(refs, own_tombs) -> list[tuple]:
        if not refs:
            return []
        objects = {r.id for r in refs}
        dead = _dead_targets(store, own_tombs + shared_tombs, objects)
        out = []
        for ref in refs:
            obj = _read_data(store, ref.id)
            oid = ref.id
            vals = obj.values
            vis = visible_offsets(ref, obj.commit_ts)
            if dead:
                out.extend(vals[i] for i in vis if RowId(oid, i) not in dead)
            elif isinstance(vis, range):
                out.extend(vals)
            else:
                out.extend(vals[i] for i in vis)
        return out

    rows_a = live_rows(a_only, a_tombs_own)
    rows_b = live_rows(b_only, b_tombs_own)
    if shared_data and (a_tombs_own or b_tombs_own):
        objects = {r.id for r in shared_data}
        dead_a = _dead_targets(store, a_tombs_own, objects)
        dead_b = _dead_targets(store, b_tombs_own, objects)
        flipped = dead_a ^ dead_b
        if flipped:
            flipped -= _dead_targets(store, shared_tombs, objects)
            present = _RowPresence(store, shared_data)
            flipped = {rid for rid in flipped if present(rid)}
            got = lookup_rows(store, flipped)
            for rid in sorted(flipped):
                (rows_b if rid in dead_a else rows_a).append(got[rid])
    return rows_a, rows_b


def diff_without_base(store: ObjectStore, schema: Schema, a: Manifest, b: Manifest) -> list[DiffRow]:
    """Fallback: multiset difference of the rows the two versions do not share."""
    rows_a, rows_b = unshared_live(store, a, b)
    grouper = ValueGrouper(schema)
    counts: Counter = Counter()
    for v in rows_b:
        counts[grouper.key(v)] += 1
    for v in rows_a:
        counts[grouper.key(v)] -= 1
    return _sorted_diff(schema, counts, grouper)


def snapshot_diff(
    store: ObjectStore, schema: Schema, a: Manifest, b: Manifest, base: Manifest | None = None
) -> list[DiffRow]:
    """Rows whose multiplicity differs between ``a`` and ``b`` (``b`` minus ``a``)."""
    if a.schema_hash != b.schema_hash:
        raise SchemaMismatch("cannot diff tables with different schemas")
    if base is None:
        return diff_without_base(store, schema, a, b)
    if base.schema_hash != a.schema_hash:
        raise SchemaMismatch("base revision has a different schema")
    return diff_with_base(store, schema, a, b, base)
