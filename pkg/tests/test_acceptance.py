"""Acceptance criteria, one test each; verdicts are listed in the terminal summary."""

from __future__ import annotations

import random
import time
from collections import Counter

import pytest
from conftest import KV, record

from tablevc import MergeConflictFailure, Repository, codec
from tablevc.errors import OutOfRetention
from tablevc.harness.experiments import run_experiment
from tablevc.harness.histories import build_history
from tablevc.harness.oracles import ABORT, oracle_diff, oracle_merge
from tablevc.harness.scenarios import MODES, PkCase, nopk_triples, pk_cases, run_nopk_case, run_pk_case
from tablevc.merge_engine import MergeMode, classify_conflict_nopk
from tablevc.version_ops import diff_with_base, diff_without_base

LARGE = 1_000_000


def resolvable_refs(repo: Repository, table: str) -> list[str]:
    info = repo.table(table)
    refs = [table] + [f"{table}@{s}" for s in info.snapshots]
    for ts in range(info.created_ts, repo.clock + 1):
        ref = f"{table}@ts:{ts}"
        try:
            repo.resolve_manifest(ref)
        except OutOfRetention:
            continue
        refs.append(ref)
    return refs


def scan_bytes(repo: Repository, refs) -> dict[str, str]:
    return {r: codec.csv_text(repo.schema(r.split("@")[0]).names, repo.scan(r)) for r in refs}


def test_diff_paths_agree_with_oracle(tmp_path):
    start = time.perf_counter()
    bad, kinds = [], Counter()
    for seed in range(1000):
        h = build_history(tmp_path / f"h{seed}", seed, steps=random.Random(seed).randint(1, 16))
        repo = h.repo
        ma, mb = repo.resolve_manifest("T"), repo.resolve_manifest("TC")
        expected = oracle_diff(h.models["T"], h.models["TC"], h.schema)
        fast = diff_with_base(repo.store, h.schema, ma, mb, repo.resolve_manifest(h.base_ref))
        fallback = diff_without_base(repo.store, h.schema, ma, mb)
        if Counter(fast) != Counter(expected) or Counter(fallback) != Counter(expected):
            bad.append(seed)
        kinds["pk" if h.pk else "nopk"] += 1
        kinds.update(op.split()[1] for op in h.log)
        repo.close()
    elapsed = time.perf_counter() - start
    assert kinds["pk"] and kinds["nopk"] and kinds["compact"] and kinds["transient"]
    record("diff: fast path, fallback and oracle agree on 1000 histories", not bad, f"bad={bad[:5]} {elapsed:.0f}s")


def test_merge_scenarios_are_exhaustive(tmp_path):
    start = time.perf_counter()
    bad, n = [], 0
    for case in pk_cases():
        for mode in MODES:
            n += 1
            if not run_pk_case(tmp_path / f"p{n}", case, mode).ok:
                bad.append((str(case), mode))
    for counts in nopk_triples(4):
        for mode in MODES:
            for seed, compact in ((0, False), (1, True)):
                n += 1
                if not run_nopk_case(tmp_path / f"n{n}", counts, mode, seed=seed, compact=compact).ok:
                    bad.append((counts, mode, seed))
    elapsed = time.perf_counter() - start
    record("merge: every single-key and multiplicity case matches the oracle", not bad, f"{n} cases, bad={bad[:5]} {elapsed:.0f}s")


def test_no_pk_literal_cases(tmp_path):
    expected = {
        ((3, 3, 1), "fail"): 1,
        ((2, 5, 2), "fail"): 5,
        ((2, 0, 4), "skip"): 0,
        ((2, 0, 4), "accept"): 4,
        ((2, 0, 4), "fail"): ABORT,
    }
    bad = []
    for i, ((counts, mode), want) in enumerate(expected.items()):
        rec = classify_conflict_nopk(*counts, mode=MergeMode.parse(mode))
        got = ABORT if rec.result_count is None else rec.result_count
        outcome = run_nopk_case(tmp_path / f"l{i}", counts, mode)
        merged = outcome.rows if outcome.rows is ABORT else Counter(outcome.rows)[(2, "r")]
        if got != want or merged != want or (want is ABORT and not outcome.target_unchanged):
            bad.append((counts, mode, got, merged))
    record("merge: literal multiplicity cases", not bad, f"bad={bad}")


def test_fail_merges_are_atomic(tmp_path):
    start = time.perf_counter()
    bad = []
    for seed in range(100):
        h = build_history(tmp_path / f"h{seed}", 5000 + seed)
        repo = h.repo
        # base has neither row; both sides insert a different one
        if h.pk:
            repo.insert("T", [(100, "x", 0)])
            repo.insert("TC", [(100, "y", 0)])
        else:
            repo.insert("T", [("zz", 9)])
            repo.insert("TC", [("zz", 9)] * 2)
        refs = resolvable_refs(repo, "T")
        before = scan_bytes(repo, refs)
        manifest = repo.resolve_manifest("T").id
        try:
            repo.merge("T", "TC", base=h.base_ref, mode="fail")
            bad.append((seed, "committed"))
        except MergeConflictFailure as exc:
            if exc.report.true_conflicts < 1:
                bad.append((seed, "no conflict"))
        repo.store.clear_cache()
        if scan_bytes(repo, refs) != before or repo.resolve_manifest("T").id != manifest:
            bad.append((seed, "changed"))
        repo.close()
    elapsed = time.perf_counter() - start
    record("merge: FAIL leaves every target ref byte-identical (100 merges)", not bad, f"bad={bad[:5]} {elapsed:.0f}s")


def test_moves_after_compaction(tmp_path):
    bad = []
    # single-key fixtures with a compacted target
    for case in pk_cases():
        if case.compact_target and not case.compact_source:
            outcome = run_pk_case(tmp_path / f"c{len(bad)}{hash(case) & 0xffff}", case, "fail")
            if not outcome.ok:
                bad.append(str(case))
            elif outcome.expected is not ABORT and outcome.true_conflicts:
                bad.append(f"{case} spurious")

    # a wider table: the target compacts, the source edits some rows
    with Repository.init(tmp_path / "wide", object_rows=4) as repo:
        repo.create_table("t", KV)
        for k in range(40):
            repo.insert("t", [(k, f"v{k}")])
            repo.flush("t")
        repo.create_snapshot("t", "base")
        repo.clone_table("t@base", "c")
        edited = list(range(0, 40, 7))
        repo.update("c", [(k,) for k in edited], {"b": "edited"})
        repo.insert("t", [(100, "target only")])
        repo.compact("t")
        expected = oracle_merge(repo.scan("t@base"), repo.scan("t"), repo.scan("c"), "fail", (0,))

        repo.create_table("o", KV)
        repo.restore_table("o", "c")
        repo.compact("o")
        repo.create_snapshot("t", "pre")
        report = repo.merge("t", "c", mode="fail")
        if report.true_conflicts or sorted(repo.scan("t")) != expected:
            bad.append("with base")

        repo.restore_table("t", "t@pre")
        report = repo.merge("t", "o", mode="skip")
        true_keys = sorted(c.key_or_values[0] for c in report.conflicts if c.kind == "true")
        if report.base != "empty" or true_keys != edited:
            bad.append(f"empty base: {report.base} {true_keys}")
    record("merge: compaction moves are excused with a base, conflicts without", not bad, f"bad={bad[:5]}")


@pytest.mark.slow
def test_clone_economy():
    out = run_experiment("E1", pk=True, base_rows=LARGE)
    ok = out["rows_match"] and out["bytes_ratio"] < 0.01 and out["time_ratio"] < 0.01
    record(
        "clone: <1% of insert bytes and time at 10^6 rows",
        ok,
        f"bytes {out['bytes_ratio']:.2e}, time {out['time_ratio']:.2e}, clone {out['clone_seconds'] * 1e3:.1f} ms",
    )


@pytest.mark.slow
def test_delta_scaling():
    small = run_experiment("E2", "C2", pk=True, base_rows=LARGE)
    large = run_experiment("E2", "C4", pk=True, base_rows=LARGE)
    correct = all(r["diff_matches_oracle"] and r["merge_matches_oracle"] for r in (small, large))
    diff_ratio = small["builtin_diff_seconds"] / small["oracle_diff_seconds"]
    merge_ratio = small["builtin_merge_seconds"] / small["oracle_merge_seconds"]
    growth = large["builtin_diff_seconds"] / small["builtin_diff_seconds"]
    oracle_swing = max(small["oracle_diff_seconds"], large["oracle_diff_seconds"]) / min(
        small["oracle_diff_seconds"], large["oracle_diff_seconds"]
    )
    ok = correct and diff_ratio < 0.1 and merge_ratio < 0.1 and growth >= 5 and oracle_swing < 2
    record(
        "delta: diff/merge cost tracks the change set, not the table",
        ok,
        f"diff {diff_ratio:.3f}, merge {merge_ratio:.3f} of full scan; growth x{growth:.1f}; oracle swing x{oracle_swing:.2f}",
    )


@pytest.mark.slow
def test_collaboration():
    disjoint = run_experiment("E3", "C3", pk=True, base_rows=LARGE)
    overlap = run_experiment("E4", "C3", pk=True, overlap_pct=0.1, base_rows=LARGE)
    d_conflicts = [m["true_conflicts"] for m in disjoint["merges"]]
    o_conflicts = [m["true_conflicts"] for m in overlap["merges"]]
    ok = (
        disjoint["final_matches_oracle"]
        and all(m["committed"] for m in disjoint["merges"])
        and not any(d_conflicts)
        and overlap["final_matches_oracle"]
        and all(c > 0 for c in o_conflicts[1:])
    )
    record("collaboration: disjoint chain clean, overlapping chain conflicts", ok, f"disjoint {d_conflicts}, overlap {o_conflicts}")


class _Invariants:
    """Random DML, flushes, compactions and GC on one table, checked against a per-timestamp model."""

    def __init__(self, repo: Repository, rng: random.Random):
        self.repo, self.rng = repo, rng
        repo.create_table("t", KV)
        self.model: dict[int, str] = {}
        self.history = {repo.clock: {}}
        self.violations: list[str] = []

    def commit_step(self):
        rng, model = self.rng, dict(self.model)
        with self.repo.begin("t") as txn:
            for _ in range(rng.randint(1, 4)):
                op = rng.random()
                k = rng.randrange(24)
                if op < 0.5 and k not in model:
                    v = rng.choice("abc")
                    txn.insert([(k, v)])
                    model[k] = v
                elif op < 0.75 and k in model:
                    txn.delete([(k,)])
                    del model[k]
                elif k in model:
                    v = rng.choice("xyz")
                    txn.update([(k,)], {"b": v})
                    model[k] = v
        self.model = model
        self.history[self.repo.clock] = dict(model)

    def check(self, what: str):
        repo = self.repo
        repo.store.clear_cache()
        oldest = min(self.history)
        for ts in range(oldest, repo.clock + 1):
            # timestamps between commits see the previous commit
            latest = max(t for t in self.history if t <= ts)
            try:
                rows = repo.scan(f"t@ts:{ts}")
            except OutOfRetention:
                continue
            keys = [r[0] for r in rows]
            if len(keys) != len(set(keys)):
                self.violations.append(f"{what}: duplicate key at ts {ts}")
            if dict(rows) != self.history[latest]:
                self.violations.append(f"{what}: ts {ts} differs")
        for name, ts in repo.snapshots("t").items():
            if dict(repo.scan(f"t@{name}")) != self.history[max(t for t in self.history if t <= ts)]:
                self.violations.append(f"{what}: snapshot {name} moved")


def test_mvcc_and_storage_invariants(tmp_path):
    start = time.perf_counter()
    violations, steps = [], Counter()
    for seed in range(40):
        rng = random.Random(seed)
        with Repository.init(tmp_path / f"r{seed}", object_rows=rng.choice((2, 4, 16)), spill_rows=4) as repo:
            repo.set_retention(rng.choice((None, 0, 3)))
            inv = _Invariants(repo, rng)
            for i in range(30):
                action = rng.choices(("commit", "flush", "compact", "snapshot", "drop", "gc"), (8, 2, 1, 1, 1, 1))[0]
                steps[action] += 1
                if action == "commit":
                    inv.commit_step()
                elif action == "flush":
                    before = scan_bytes(repo, ["t"])
                    repo.flush("t")
                    if scan_bytes(repo, ["t"]) != before:
                        inv.violations.append("flush changed the current scan")
                elif action == "compact":
                    repo.compact("t")
                elif action == "snapshot":
                    repo.create_snapshot("t", f"s{i}")
                elif action == "drop" and repo.snapshots("t"):
                    repo.drop_snapshot("t", rng.choice(sorted(repo.snapshots("t"))))
                elif action == "gc":
                    refs = resolvable_refs(repo, "t")
                    before = scan_bytes(repo, refs)
                    steps["reclaimed"] += repo.gc().objects_deleted
                    repo.store.clear_cache()
                    if scan_bytes(repo, refs) != before:
                        inv.violations.append("gc changed a resolvable ref")
                inv.check(action)
            violations += [f"seed {seed}: {v}" for v in inv.violations]
    elapsed = time.perf_counter() - start
    assert steps["reclaimed"] > 0
    record("storage: MVCC and GC invariants", not violations, f"{steps}, bad={violations[:3]} {elapsed:.0f}s")
