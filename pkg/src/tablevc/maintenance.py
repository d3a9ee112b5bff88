"""Compaction and garbage collection."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING

from .catalog import Manifest, ObjectRef

if TYPE_CHECKING:
    from .repo import Repository


def _is_compact(manifest: Manifest, object_rows: int) -> bool:
    if manifest.tombstone_refs:
        return False
    data = sorted(manifest.data_refs, key=lambda r: r.min_key)
    if any(r.cap is not None or r.commit_ts is not None for r in data):
        return False
    if any(data[i].max_key >= data[i + 1].min_key for i in range(len(data) - 1)):
        return False
    live = sum(r.rows for r in data)
    return len(data) == math.ceil(live / object_rows)


def compact(repo: "Repository", table: str) -> Manifest:
    """Rewrite the table's live rows into fresh, full, non-overlapping objects.

    Rows keep their original commit timestamps so reads at older timestamps
    that resolve to the new version still filter correctly.  Returns the
    current manifest, unchanged when the table is already compact.
    """
    engine = repo.engine
    st = engine.state(table)
    with st.lock:
        engine.flush(table)
        info = repo.catalog.table(table)
        current = repo.catalog.manifests.load(info.manifest)
        object_rows = repo.catalog.settings.object_rows
        if _is_compact(current, object_rows):
            return current
        view = engine.current_view(table)
        ts_of = _row_ts_lookup(repo, current)
        rows = view.scan_ids()
        refs = []
        h = info.schema.schema_hash
        for start in range(0, len(rows), object_rows):
            chunk = rows[start : start + object_rows]
            meta = repo.store.put_data(
                columns=([ts_of(rid) for _, rid, _ in chunk], [k for k, _, _ in chunk], [v for _, _, v in chunk]),
                schema_hash=h,
            )
            refs.append(ObjectRef.from_meta(meta))
        new = Manifest(tuple(refs), current.schema_hash, repo.catalog.clock)
        installed, _ = engine.install_rewrite(table, new, "compact")
        return installed


def _row_ts_lookup(repo: "Repository", manifest: Manifest):
    refs = {r.id: r for r in manifest.data_refs}
    store = repo.store

    def ts_of(rid) -> int:
        ref = refs[rid.object]
        if ref.commit_ts is not None:
            return ref.commit_ts
        return store.read_keys(rid.object)[0][rid.offset]

    return ts_of


@dataclass
class GcReport:
    objects_deleted: int
    bytes_reclaimed: int
    manifests_deleted: int
    dry_run: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def gc(repo: "Repository", dry_run: bool = False) -> GcReport:
    """Delete objects and manifests no live version can reach.

    Roots are every table's current manifest, its named snapshots, the
    history entries inside the retention horizon, and objects written by
    transactions that have not finished.
    """
    cat = repo.catalog
    with cat.lock:
        repo.engine.flush_all()
        if not dry_run:
            cat.prune_history()
            cat.save()
        else:
            saved = {n: list(t.history) for n, t in cat.tables.items()}
            cat.prune_history()
        live_manifests = cat.live_manifest_ids()
        if dry_run:
            for n, h in saved.items():
                cat.tables[n].history = h
        reachable: set[str] = set(repo.engine.inflight)
        for mid in live_manifests:
            reachable |= cat.manifests.load(mid).object_ids
        dead_objects = [oid for oid, _ in repo.store.object_ids() if oid not in reachable]
        dead_manifests = [mid for mid in cat.manifests.ids() if mid not in live_manifests]
        freed = 0
        for oid in dead_objects:
            freed += repo.store.size_of(oid) if dry_run else repo.store.delete(oid)
        for mid in dead_manifests:
            if dry_run:
                freed += cat.manifests.path_of(mid).stat().st_size
            else:
                freed += cat.manifests.delete(mid)
        if not dry_run:
            repo.engine.dead_cache.clear()
        return GcReport(len(dead_objects), freed, len(dead_manifests), dry_run)
