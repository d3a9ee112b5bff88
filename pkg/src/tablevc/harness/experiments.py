"""Desk-scale reproductions of the clone, diff/merge and collaboration experiments.

Every built-in operation is timed against a full-scan arm that computes the
same answer from complete table scans with the oracles.  Object caches are
cleared before each timed operation.
"""

from __future__ import annotations

import random
import tempfile
import time
from collections import Counter
from contextlib import contextmanager
from pathlib import Path
from typing import Any

from ..repo import Repository
from ..schema import row_order_key
from .generator import gen_lineitem, lineitem_schema
from .oracles import ABORT, oracle_diff, oracle_merge

CHANGE_SETS = {"C1": 100, "C2": 1_000, "C3": 10_000, "C4": 100_000}
DEFAULT_BASE_ROWS = 1_000_000
ENGINEERS = 4


@contextmanager
def _repo(path: str | Path | None):
    if path is None:
        with tempfile.TemporaryDirectory(prefix="tablevc-bench-") as d:
            yield Repository.init(Path(d) / "repo")
    else:
        yield Repository.init(path)


def _timed(repo: Repository, fn):
    repo.store.clear_cache()
    repo.engine.dead_cache.clear()
    start = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - start


def _load_base(repo: Repository, name: str, rows: list[tuple], pk: bool) -> dict[str, float]:
    repo.create_table(name, lineitem_schema(pk))
    before = repo.store.bytes_written + repo.catalog.manifests.bytes_written
    start = time.perf_counter()
    repo.insert(name, rows)
    repo.flush(name)
    elapsed = time.perf_counter() - start
    written = repo.store.bytes_written + repo.catalog.manifests.bytes_written - before
    return {"seconds": elapsed, "bytes": written}


def _change_keys(repo: Repository, table: str, pk: bool, rows: list[tuple], count: int, rng: random.Random):
    """Keys of ``count`` random rows: primary keys, or uniquifiers without one."""
    if pk:
        return [r[:2] for r in rng.sample(rows, count)]
    keyed = repo.view(table).scan_keyed()
    return [k for k, _ in rng.sample(keyed, count)]


def _apply_changes(repo: Repository, table: str, keys, tag: str, rng: random.Random) -> None:
    with repo.begin(table) as txn:
        current = txn.lookup(keys)
        new_rows = []
        for k, vals in current.items():
            row = list(vals)
            row[4] = float(rng.randint(51, 99))
            row[9] = f"{tag} {k[-1]}"
            new_rows.append((k, tuple(row)))
        txn.delete([k for k, _ in new_rows])
        txn.insert([r for _, r in new_rows])
    repo.flush(table)


def experiment_clone(repo: Repository, base_rows: int, pk: bool, seed: int) -> dict[str, Any]:
    rows = gen_lineitem(base_rows, seed)
    load = _load_base(repo, "T", rows, pk)
    meta_before = repo.metadata_bytes()
    written_before = repo.store.bytes_written + repo.catalog.manifests.bytes_written
    start = time.perf_counter()
    repo.clone_table("T", "TClone")
    clone_seconds = time.perf_counter() - start
    clone_bytes = repo.metadata_bytes() - meta_before
    clone_bytes += repo.store.bytes_written + repo.catalog.manifests.bytes_written - written_before
    return {
        "experiment": "E1",
        "rows": base_rows,
        "insert_seconds": load["seconds"],
        "insert_bytes": load["bytes"],
        "clone_seconds": clone_seconds,
        "clone_bytes": clone_bytes,
        "bytes_ratio": clone_bytes / load["bytes"],
        "time_ratio": clone_seconds / load["seconds"],
        "rows_match": repo.count("TClone") == base_rows,
    }


def experiment_diff_merge(
    repo: Repository, base_rows: int, changed: int, pk: bool, seed: int, rows: list[tuple] | None = None
) -> dict[str, Any]:
    rng = random.Random(seed)
    rows = rows if rows is not None else gen_lineitem(base_rows, seed)
    _load_base(repo, "T", rows, pk)
    repo.create_snapshot("T", "sn1")
    repo.clone_table("T@sn1", "TClone")
    keys = _change_keys(repo, "TClone", pk, rows, changed, rng)
    _apply_changes(repo, "TClone", keys, "edited", rng)
    repo.create_snapshot("TClone", "sn2")
    schema = repo.schema("T")

    builtin_diff, diff_s = _timed(repo, lambda: repo.diff("T", "TClone@sn2"))
    oracle_rows, oracle_diff_s = _timed(
        repo, lambda: oracle_diff(repo.scan("T"), repo.scan("TClone@sn2"), schema)
    )
    pk_idx = schema.pk_indices or None
    oracle_result, oracle_merge_s = _timed(
        repo,
        lambda: oracle_merge(repo.scan("T@sn1"), repo.scan("T"), repo.scan("TClone@sn2"), "accept", pk_idx),
    )
    report, merge_s = _timed(repo, lambda: repo.merge("T", "TClone@sn2", mode="accept"))
    merged_ok = sorted(repo.scan("T"), key=row_order_key) == oracle_result
    return {
        "experiment": "E2",
        "pk": pk,
        "rows": base_rows,
        "changed": changed,
        "diff_rows": len(builtin_diff),
        "diff_matches_oracle": Counter(builtin_diff) == Counter(oracle_rows),
        "builtin_diff_seconds": diff_s,
        "oracle_diff_seconds": oracle_diff_s,
        "builtin_merge_seconds": merge_s,
        "oracle_merge_seconds": oracle_merge_s,
        "merge_matches_oracle": merged_ok,
        "true_conflicts": report.true_conflicts,
    }


def _partitions(keys: list, engineers: int, per: int, overlap: float, rng: random.Random) -> list[list]:
    """Disjoint slices of ``keys``; engineer i also edits a share of engineer i-1's slice."""
    rng.shuffle(keys)
    parts = [keys[i * per : (i + 1) * per] for i in range(engineers)]
    if overlap <= 0:
        return parts
    shared = max(1, int(per * overlap))
    out = [list(parts[0])]
    for i in range(1, engineers):
        out.append(parts[i][: per - shared] + parts[i - 1][:shared])
    return out


def experiment_collaborate(
    repo: Repository, base_rows: int, changed: int, pk: bool, overlap: float, seed: int
) -> dict[str, Any]:
    rng = random.Random(seed)
    rows = gen_lineitem(base_rows, seed)
    _load_base(repo, "T", rows, pk)
    repo.create_snapshot("T", "sn0")
    if pk:
        all_keys = [r[:2] for r in rows]
    else:
        all_keys = [k for k, _ in repo.view("T").scan_keyed()]
    parts = _partitions(all_keys, ENGINEERS, changed, overlap, rng)
    forks = []
    for i, keys in enumerate(parts, start=1):
        name = f"TClone{i}"
        repo.clone_table("T@sn0", name)
        _apply_changes(repo, name, keys, f"engineer{i}", rng)
        repo.create_snapshot(name, "done")
        forks.append(name)

    schema = repo.schema("T")
    pk_idx = schema.pk_indices or None
    base_rows_list = repo.scan("T@sn0")
    mode = "accept" if overlap > 0 else "fail"
    expected = repo.scan("T")
    merges = []
    for name in forks:
        source = repo.scan(f"{name}@done")
        expected = oracle_merge(base_rows_list, expected, source, mode, pk_idx)
        report, seconds = _timed(repo, lambda: repo.merge("T", f"{name}@done", mode=mode))
        merges.append(
            {
                "source": name,
                "seconds": seconds,
                "true_conflicts": report.true_conflicts,
                "false_conflicts": report.false_conflicts,
                "committed": report.committed_ts is not None,
            }
        )
    final_ok = expected is not ABORT and sorted(repo.scan("T"), key=row_order_key) == expected
    return {
        "experiment": "E4" if overlap > 0 else "E3",
        "pk": pk,
        "rows": base_rows,
        "changed_per_engineer": changed,
        "overlap": overlap,
        "merges": merges,
        "final_matches_oracle": final_ok,
    }


def run_experiment(
    name: str,
    change_set: str = "C2",
    pk: bool = True,
    overlap_pct: float = 0.1,
    seed: int = 7,
    *,
    base_rows: int = DEFAULT_BASE_ROWS,
    repo_path: str | Path | None = None,
) -> dict[str, Any]:
    """Run one experiment in a fresh repository and return its metrics."""
    name = name.upper()
    changed = CHANGE_SETS[change_set.upper()] if isinstance(change_set, str) else int(change_set)
    with _repo(repo_path) as repo:
        if name == "E1":
            return experiment_clone(repo, base_rows, pk, seed)
        if name == "E2":
            return experiment_diff_merge(repo, base_rows, changed, pk, seed)
        if name == "E3":
            return experiment_collaborate(repo, base_rows, changed, pk, 0.0, seed)
        if name == "E4":
            return experiment_collaborate(repo, base_rows, changed, pk, overlap_pct, seed)
    raise ValueError(f"unknown experiment {name!r}; expected E1, E2, E3 or E4")
