"""Exhaustive single-key and single-value merge fixtures checked against the oracles."""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from ..errors import MergeConflictFailure
from ..merge_engine import MergeReport
from ..repo import Repository
from ..schema import Schema, row_order_key
from .oracles import ABORT, oracle_merge

KV_SCHEMA = Schema.of([("k", "INT64"), ("v", "STRING")], ["k"])
BAG_SCHEMA = Schema.of([("k", "INT64"), ("v", "STRING")])

KEY = 2
OTHER_ROWS = [(1, "a"), (3, "c")]
BASE_VALUE = "b"

# actions on a key that exists in the base
PRESENT_ACTIONS = ("none", "delete", "update_x", "update_y", "rewrite_same", "reinsert_same")
# actions on a key absent from the base
ABSENT_ACTIONS = ("none", "insert_x", "insert_y", "transient")
MODES = ("fail", "skip", "accept")


@dataclass(frozen=True)
class PkCase:
    in_base: bool
    target: str
    source: str
    compact_target: bool = False
    compact_source: bool = False

    def __str__(self) -> str:
        flags = "".join(c for c, on in (("T", self.compact_target), ("S", self.compact_source)) if on)
        return f"{'base' if self.in_base else 'nobase'}:{self.target}/{self.source}" + (f"+compact{flags}" if flags else "")


def pk_cases(with_compaction: bool = True) -> Iterator[PkCase]:
    compaction = (False, True) if with_compaction else (False,)
    for in_base, actions in ((True, PRESENT_ACTIONS), (False, ABSENT_ACTIONS)):
        for t, s, ct, cs in itertools.product(actions, actions, compaction, compaction):
            yield PkCase(in_base, t, s, ct, cs)


def _apply_pk_action(repo: Repository, table: str, action: str) -> None:
    if action == "none":
        return
    if action == "delete":
        repo.delete(table, [(KEY,)])
    elif action.startswith("update_"):
        repo.update(table, [(KEY,)], {"v": action[-1]})
    elif action.startswith("insert_"):
        repo.insert(table, [(KEY, action[-1])])
    elif action == "rewrite_same":
        repo.update(table, [(KEY,)], {"v": BASE_VALUE})
    elif action == "reinsert_same":
        repo.delete(table, [(KEY,)])
        repo.flush(table)
        repo.insert(table, [(KEY, BASE_VALUE)])
    elif action == "transient":
        repo.insert(table, [(KEY, "t")])
        repo.flush(table)
        repo.delete(table, [(KEY,)])
    else:
        raise ValueError(f"unknown action {action!r}")
    repo.flush(table)


def _fragmented_base(repo: Repository, schema: Schema, rows: list[tuple]) -> None:
    """One object per row so that compaction always rewrites."""
    repo.create_table("T", schema)
    for r in rows:
        repo.insert("T", [r])
        repo.flush("T")
    repo.create_snapshot("T", "base")
    repo.clone_table("T@base", "S")


@dataclass
class Outcome:
    rows: object
    expected: object
    report: MergeReport
    target_unchanged: bool

    @property
    def true_conflicts(self) -> int:
        return self.report.true_conflicts

    @property
    def ok(self) -> bool:
        if self.expected is ABORT:
            return self.rows is ABORT and self.target_unchanged
        return self.rows == self.expected


def _merge_and_compare(repo: Repository, base_rows, mode: str, pk) -> Outcome:
    target_rows = repo.scan("T")
    source_rows = repo.scan("S")
    expected = oracle_merge(base_rows, target_rows, source_rows, mode, pk)
    before_manifest = repo.resolve_manifest("T").id
    try:
        report = repo.merge("T", "S", mode=mode)
    except MergeConflictFailure as exc:
        unchanged = repo.scan("T") == target_rows and repo.resolve_manifest("T").id == before_manifest
        return Outcome(ABORT, expected, exc.report, unchanged)
    return Outcome(sorted(repo.scan("T"), key=row_order_key), expected, report, False)


def run_pk_case(root: str | Path, case: PkCase, mode: str) -> Outcome:
    with Repository.init(root, object_rows=8) as repo:
        base_rows = sorted(OTHER_ROWS + ([(KEY, BASE_VALUE)] if case.in_base else []))
        _fragmented_base(repo, KV_SCHEMA, base_rows)
        for table, action, compact in (("T", case.target, case.compact_target), ("S", case.source, case.compact_source)):
            _apply_pk_action(repo, table, action)
            if compact:
                repo.compact(table)
        return _merge_and_compare(repo, base_rows, mode, (0,))


ROW = (KEY, "r")
FILLER = [(0, "f"), (5, "g")]


def _set_multiplicity(repo: Repository, table: str, n: int, rng: random.Random) -> None:
    copies = [k for k, v in repo.view(table).scan_keyed() if v == ROW]
    if n < len(copies):
        repo.delete(table, rng.sample(copies, len(copies) - n))
    elif n > len(copies):
        repo.insert(table, [ROW] * (n - len(copies)))
    repo.flush(table)


def run_nopk_case(
    root: str | Path, counts: tuple[int, int, int], mode: str, seed: int = 0, compact: bool = False
) -> Outcome:
    """Merge a table whose row ``ROW`` appears ``counts`` times in base, target, source."""
    rng = random.Random(seed)
    n_base, n_target, n_source = counts
    with Repository.init(root, object_rows=3) as repo:
        base_rows = FILLER + [ROW] * n_base
        _fragmented_base(repo, BAG_SCHEMA, base_rows)
        _set_multiplicity(repo, "T", n_target, rng)
        _set_multiplicity(repo, "S", n_source, rng)
        if compact:
            repo.compact(rng.choice(("T", "S")))
        return _merge_and_compare(repo, base_rows, mode, None)


def nopk_triples(limit: int = 4) -> Iterator[tuple[int, int, int]]:
    return itertools.product(range(limit + 1), repeat=3)
