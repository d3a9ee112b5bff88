"""Three-way and two-way merge of a source version into a table's current version.

Both sides are reduced to signed changes against a common base.  Changes the
sides share cancel out; every remaining key (or, without a primary key, every
remaining row-value group) is a potential conflict.  It is a true conflict
only when both sides changed it.  Resolutions are applied to the target in a
single transaction, so a failed merge changes nothing.
"""

from __future__ import annotations

import enum
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

from .catalog import Manifest, SnapshotRef
from .errors import MergeConflictFailure, NegativeCount
from .object_store import RowId
from .schema import Schema, row_order_key
from .version_ops import (
    Group,
    ScannedDelta,
    SignedRow,
    ValueGrouper,
    compute_delta,
    diff_aggregate,
    lookup_rows,
    scan_delta,
    visible_offsets,
    _dead_targets,
    _read_data,
)

if TYPE_CHECKING:
    from .repo import Repository


class MergeMode(str, enum.Enum):
    FAIL = "fail"
    SKIP = "skip"
    ACCEPT = "accept"

    @classmethod
    def parse(cls, mode: "MergeMode | str") -> "MergeMode":
        if isinstance(mode, MergeMode):
            return mode
        try:
            return cls(str(mode).lower())
        except ValueError:
            from .errors import UserError

            raise UserError(f"unknown conflict mode {mode!r}; use fail, skip or accept") from None


TRUE = "true"
FALSE = "false"

KEPT_TARGET = "kept_target"
KEPT_SOURCE = "kept_source"
APPLIED = "applied"
ABORTED = "aborted"


@dataclass
class ConflictRecord:
    key_or_values: tuple
    kind: str
    scenario: int
    target_change: str | int | None
    source_change: str | int | None
    resolution: str
    result_count: int | None = None

    def to_json(self) -> dict:
        d = asdict(self)
        d["key_or_values"] = [_jsonable(v) for v in self.key_or_values]
        if d["result_count"] is None:
            del d["result_count"]
        return d


def _jsonable(v):
    return v.hex() if isinstance(v, bytes) else v


@dataclass
class MergeReport:
    applied_inserts: int = 0
    applied_deletes: int = 0
    true_conflicts: int = 0
    false_conflicts: int = 0
    conflicts: list[ConflictRecord] = field(default_factory=list)
    committed_ts: int | None = None
    base: str = "empty"

    def to_json(self) -> dict:
        return {
            "committed": self.committed_ts is not None,
            "committed_ts": self.committed_ts,
            "base": self.base,
            "applied_inserts": self.applied_inserts,
            "applied_deletes": self.applied_deletes,
            "true_conflicts": self.true_conflicts,
            "false_conflicts": self.false_conflicts,
            "conflicts": [c.to_json() for c in self.conflicts],
        }

    def _add(self, rec: ConflictRecord) -> None:
        self.conflicts.append(rec)
        if rec.kind == TRUE:
            self.true_conflicts += 1
        else:
            self.false_conflicts += 1


# classification ----------------------------------------------------------


def _side_change(ops: Sequence[SignedRow], moved: bool) -> str | None:
    if not ops:
        return None
    if moved:
        return "move"
    minus = any(r.sign < 0 for r in ops)
    plus = any(r.sign > 0 for r in ops)
    if minus and plus:
        return "update"
    return "delete" if minus else "insert"


def detect_moves(rows: Iterable[SignedRow], base_values: dict[RowId, tuple]) -> set[tuple]:
    """Keys whose only change re-inserts the deleted base row unchanged."""
    by_key: dict[tuple, list[SignedRow]] = defaultdict(list)
    for r in rows:
        by_key[r.key].append(r)
    return {k for k, ops in by_key.items() if _is_move(ops, base_values)}


def _is_move(ops: Sequence[SignedRow], base_values: dict[RowId, tuple]) -> bool:
    if len(ops) != 2:
        return False
    minus = [r for r in ops if r.sign < 0]
    plus = [r for r in ops if r.sign > 0]
    if len(minus) != 1 or len(plus) != 1:
        return False
    old = base_values.get(minus[0].rowid)
    return old is not None and old == plus[0].values


def classify_conflict_pk(
    group: Group, mode: MergeMode, base_values: dict[RowId, tuple] | None
) -> ConflictRecord:
    """Scenario 1-6 classification of one primary-key group.

    ``base_values`` maps base rowids to their values; pass None for an empty
    base, which disables move excusal.
    """
    t_ops, s_ops = group.ops
    t_move = s_move = False
    if base_values is not None and t_ops and s_ops:
        t_move = _is_move(t_ops, base_values)
        s_move = _is_move(s_ops, base_values)
    t_changed = bool(t_ops) and not t_move
    s_changed = bool(s_ops) and not s_move
    in_base = any(r.sign < 0 for r in t_ops + s_ops)
    tc, sc = _side_change(t_ops, t_move), _side_change(s_ops, s_move)
    if t_changed and s_changed:
        scenario = 6 if in_base else 3
        resolution = {MergeMode.SKIP: KEPT_TARGET, MergeMode.ACCEPT: KEPT_SOURCE, MergeMode.FAIL: ABORTED}[mode]
        return ConflictRecord(group.key, TRUE, scenario, tc, sc, resolution)
    if s_changed:
        return ConflictRecord(group.key, FALSE, 4 if in_base else 2, tc, sc, APPLIED)
    return ConflictRecord(group.key, FALSE, 5 if in_base else 1, tc, sc, KEPT_TARGET)


def _classify_deltas(delta_t: int, delta_s: int, mode: MergeMode) -> tuple[str, int, str, int | None] | None:
    """(kind, case, resolution, chosen delta) for one row-value group."""
    if delta_t == delta_s:
        return None
    if delta_t == 0:
        return FALSE, 1, APPLIED, delta_s
    if delta_s == 0:
        return FALSE, 2, KEPT_TARGET, delta_t
    if mode is MergeMode.SKIP:
        return TRUE, 3, KEPT_TARGET, delta_t
    if mode is MergeMode.ACCEPT:
        return TRUE, 3, KEPT_SOURCE, delta_s
    return TRUE, 3, ABORTED, None


def classify_conflict_nopk(
    n_base: int, n_target: int, n_source: int, mode: MergeMode = MergeMode.FAIL, values: tuple = ()
) -> ConflictRecord | None:
    """Cardinality cases 1-3 for one row-value group.

    Returns None when both sides end with the same multiplicity, which is not
    a conflict.  ``result_count`` is the merged multiplicity, or None on abort.
    """
    if min(n_base, n_target, n_source) < 0:
        raise NegativeCount(f"negative multiplicity in {(n_base, n_target, n_source)}")
    mode = MergeMode.parse(mode)
    decided = _classify_deltas(n_target - n_base, n_source - n_base, mode)
    if decided is None:
        return None
    kind, case, resolution, chosen = decided
    result = None if chosen is None else n_base + chosen
    return ConflictRecord(values, kind, case, n_target - n_base, n_source - n_base, resolution, result)


# merge -------------------------------------------------------------------


@dataclass
class _Plan:
    inserts: list[tuple] = field(default_factory=list)
    deletes: list[tuple[tuple, RowId]] = field(default_factory=list)


def merge(
    repo: "Repository",
    target: str,
    source: SnapshotRef,
    base: SnapshotRef | None,
    mode: MergeMode = MergeMode.FAIL,
) -> MergeReport:
    mode = MergeMode.parse(mode)
    schema = repo.schema(target)
    schema.require_compatible(repo.schema(source.table), "merge schemas")
    source_manifest = repo.resolve_manifest(source)
    if base is not None:
        schema.require_compatible(repo.schema(base.table), "base schema")
        base_manifest = repo.resolve_manifest(base)
        base_label = str(base)
    else:
        base_manifest = repo.find_common_base(target, source)
        base_label = "lineage" if base_manifest is not None else "empty"

    while True:
        repo.flush(target)
        txn = repo.begin(target)
        if not txn.view.n_rows and not txn.view.n_tombs:
            break
        txn.abort()
    target_manifest = txn.view.manifest
    report = MergeReport(base=base_label)
    store = repo.store
    try:
        if base_manifest is None:
            plan = _merge_empty_base(store, schema, target_manifest, source_manifest, mode, report)
        else:
            dt = scan_delta(store, compute_delta(target_manifest, base_manifest), base_manifest)
            ds = scan_delta(store, compute_delta(source_manifest, base_manifest), base_manifest)
            if schema.has_pk:
                plan = _merge_pk(store, schema, dt, ds, mode, report)
            else:
                plan = _merge_nopk(store, schema, dt, ds, mode, report)
        report.conflicts.sort(key=lambda c: row_order_key(c.key_or_values))
        if report.true_conflicts and mode is MergeMode.FAIL:
            txn.abort()
            raise MergeConflictFailure(report)
        txn.stage_known(plan.inserts, plan.deletes)
        report.applied_inserts = len(plan.inserts)
        report.applied_deletes = len(plan.deletes)
        report.committed_ts = txn.commit()
    finally:
        if not txn.closed:
            txn.abort()
    return report


def _merge_pk(store, schema: Schema, dt: ScannedDelta, ds: ScannedDelta, mode: MergeMode, report: MergeReport) -> _Plan:
    groups = diff_aggregate(dt, ds, schema)
    need = set()
    for g in groups:
        t_ops, s_ops = g.ops
        if t_ops and s_ops:
            need.update(r.rowid for r in t_ops + s_ops if r.sign < 0)
    base_values = lookup_rows(store, need) if need else {}
    plan = _Plan()
    for g in groups:
        rec = classify_conflict_pk(g, mode, base_values)
        report._add(rec)
        if rec.resolution in (APPLIED, KEPT_SOURCE):
            _take_source(g, plan)
    return plan


def _take_source(g: Group, plan: _Plan) -> None:
    t_ops, s_ops = g.ops
    if t_ops:
        current = next((r.rowid for r in t_ops if r.sign > 0), None)
    else:
        current = next((r.rowid for r in s_ops if r.sign < 0), None)
    if current is not None:
        plan.deletes.append((g.key, current))
    plan.inserts.extend(r.values for r in s_ops if r.sign > 0)


def _merge_nopk(store, schema: Schema, dt: ScannedDelta, ds: ScannedDelta, mode: MergeMode, report: MergeReport) -> _Plan:
    groups = diff_aggregate(dt, ds, schema, lookup=lambda rids: lookup_rows(store, rids), keep_cancelled=True)
    plan = _Plan()
    for g in groups:
        t_ops, s_ops = g.ops
        delta_t = sum(r.sign for r in t_ops)
        delta_s = sum(r.sign for r in s_ops)
        decided = _classify_deltas(delta_t, delta_s, mode)
        if decided is None:
            continue
        kind, case, resolution, chosen = decided
        report._add(ConflictRecord(g.key, kind, case, delta_t, delta_s, resolution))
        if chosen is None or chosen == delta_t:
            continue
        change = chosen - delta_t
        if change > 0:
            plan.inserts.extend([g.key] * change)
        else:
            deleted_by_target = {r.rowid for r in t_ops if r.sign < 0}
            known = [(r.key, r.rowid) for r in t_ops if r.sign > 0]
            known += [(r.key, r.rowid) for r in s_ops if r.sign < 0 and r.rowid not in deleted_by_target]
            known.sort()
            plan.deletes.extend(known[:-change])
    return plan


# empty base --------------------------------------------------------------


def _unshared_rows(store, a: Manifest, b: Manifest) -> tuple[list[SignedRow], list[SignedRow]]:
    """Rows live in only one of the two versions, as inserts against nothing."""
    rows = scan_delta(store, compute_delta(b, a)).rows
    minus = [r for r in rows if r.sign < 0]
    found = lookup_rows(store, (r.rowid for r in minus)) if minus else {}
    a_rows = [SignedRow(1, r.key, found[r.rowid], r.rowid) for r in minus]
    b_rows = [r for r in rows if r.sign > 0]
    return a_rows, b_rows


def _shared_counts(store, schema: Schema, a: Manifest, b: Manifest, wanted: set) -> dict:
    """Multiplicity of each wanted row value among rows live in both versions."""
    delta = compute_delta(b, a)
    shared = [r for r in delta.shared if r.is_data]
    counts: dict = defaultdict(int)
    if not shared or not wanted:
        return counts
    objects = {r.id for r in shared}
    dead = _dead_targets(store, [r for r in a.refs if not r.is_data], objects)
    dead |= _dead_targets(store, [r for r in b.refs if not r.is_data], objects)
    grouper = ValueGrouper(schema)
    for ref in shared:
        obj = _read_data(store, ref.id)
        for i in visible_offsets(ref, obj.commit_ts):
            if RowId(ref.id, i) in dead:
                continue
            k = grouper.key(obj.values[i])
            if k in wanted:
                counts[k] += 1
    return counts


def _merge_empty_base(store, schema: Schema, tm: Manifest, sm: Manifest, mode: MergeMode, report: MergeReport) -> _Plan:
    t_rows, s_rows = _unshared_rows(store, tm, sm)
    if schema.has_pk:
        delta_t = ScannedDelta(sorted(t_rows, key=lambda r: r.key))
        delta_s = ScannedDelta(sorted(s_rows, key=lambda r: r.key))
        plan = _Plan()
        for g in diff_aggregate(delta_t, delta_s, schema):
            rec = classify_conflict_pk(g, mode, None)
            report._add(rec)
            if rec.resolution in (APPLIED, KEPT_SOURCE):
                _take_source(g, plan)
        return plan

    grouper = ValueGrouper(schema)
    sides: dict = {}
    for idx, rows in enumerate((t_rows, s_rows)):
        for r in rows:
            sides.setdefault(grouper.key(r.values), ([], []))[idx].append(r)
    one_sided = {k for k, (t, s) in sides.items() if len(t) != len(s) and not (t and s)}
    shared = _shared_counts(store, schema, tm, sm, one_sided)
    plan = _Plan()
    for gk in sorted(sides, key=lambda k: row_order_key(grouper.values_of(k))):
        t, s = sides[gk]
        if len(t) == len(s):
            continue
        values = grouper.values_of(gk)
        common = shared.get(gk, 0)
        n_t, n_s = common + len(t), common + len(s)
        decided = _classify_deltas(n_t, n_s, mode)
        kind, case, resolution, chosen = decided
        report._add(ConflictRecord(values, kind, case, n_t, n_s, resolution))
        if chosen is None or chosen == n_t:
            continue
        change = chosen - n_t
        if change > 0:
            plan.inserts.extend([values] * change)
        else:
            victims = sorted((r.key, r.rowid) for r in t)
            plan.deletes.extend(victims[:-change])
    return plan
