from __future__ import annotations

from collections import Counter

import pytest
from conftest import BAG, KV, bag
from hypothesis import given, settings
from hypothesis import strategies as st

from tablevc import Repository, Schema
from tablevc import version_ops
from tablevc.errors import BaseMismatch, SchemaMismatch
from tablevc.harness.histories import build_history
from tablevc.harness.oracles import oracle_diff
from tablevc.version_ops import (
    DiffRow,
    ValueGrouper,
    compute_delta,
    diff_aggregate,
    diff_with_base,
    diff_without_base,
    scan_delta,
)


@pytest.fixture
def branched(kv):
    """``t`` holds (1,a) (2,b) (5,e) at snapshot ``base``, cloned to ``c``."""
    kv.insert("t", [(1, "a"), (2, "b"), (5, "e")])
    kv.create_snapshot("t", "base")
    kv.clone_table("t@base", "c")
    return kv


def deltas(repo, a: str, b: str, base: str = "t@base"):
    mbase = repo.resolve_manifest(base)
    out = []
    for side in (a, b):
        m = repo.resolve_manifest(side)
        out.append(scan_delta(repo.store, compute_delta(m, mbase), mbase))
    return out


def signed(delta) -> list[tuple]:
    return [(r.sign, r.key, r.values) for r in delta]


def apply_delta(repo, base_rows, delta) -> Counter:
    """Apply signed rows to a base multiset, fetching deleted values by rowid."""
    out = Counter(base_rows)
    deleted = version_ops.lookup_rows(repo.store, [r.rowid for r in delta if r.sign < 0])
    for r in delta:
        if r.sign > 0:
            out[r.values] += 1
        else:
            out[deleted[r.rowid]] -= 1
    return +out


# compute_delta --------------------------------------------------------


def test_identical_manifests_have_empty_delta(branched):
    m = branched.resolve_manifest("t@base")
    d = compute_delta(m, m)
    assert d.is_empty and not d.added_data and not d.removed


def test_one_flushed_insert_is_one_added_object(branched):
    branched.insert("t", [(9, "z")])
    branched.flush("t")
    d = compute_delta(branched.resolve_manifest("t"), branched.resolve_manifest("t@base"))
    assert len(d.added_data) == 1 and not d.added_tombstones and not d.removed


def test_compaction_shows_as_removed_objects(branched):
    branched.delete("t", [(1,)])
    branched.compact("t")
    branched.insert("t", [(8, "h")])
    d = compute_delta(branched.resolve_manifest("t"), branched.resolve_manifest("t@base"))
    assert d.removed
    assert len(d.added_data) >= 2


def test_delta_requires_same_schema(repo):
    repo.create_table("p", KV)
    repo.create_table("q", Schema.of([("a", "INT64")]))
    with pytest.raises(SchemaMismatch):
        compute_delta(repo.resolve_manifest("p"), repo.resolve_manifest("q"))


# scan_delta -----------------------------------------------------------


def test_insert_scans_as_plus(branched):
    branched.insert("c", [(3, "c")])
    _, d = deltas(branched, "t", "c")
    assert signed(d) == [(1, (3,), (3, "c"))]


def test_update_scans_as_minus_then_plus(branched):
    branched.update("c", [(2,)], {"b": "x"})
    _, d = deltas(branched, "t", "c")
    assert signed(d) == [(-1, (2,), None), (1, (2,), (2, "x"))]
    assert d.rows[0].rowid == branched.view("t@base").locate([(2,)])[(2,)]


def test_transient_rows_vanish(branched):
    branched.insert("c", [(9, "q")])
    branched.flush("c")
    branched.delete("c", [(9,)])
    _, d = deltas(branched, "t", "c")
    assert signed(d) == []


def test_compaction_alone_yields_moves_only(branched):
    branched.compact("c")
    _, d = deltas(branched, "t", "c")
    assert apply_delta(branched, branched.scan("t@base"), d) == bag(branched.scan("c"))
    minus = {r.key for r in d if r.sign < 0}
    plus = {r.key: r.values for r in d if r.sign > 0}
    assert minus == set(plus)


def test_no_pk_deletes_carry_rowids(repo):
    repo.create_table("n", BAG)
    repo.insert("n", [(1, "a"), (1, "a")])
    repo.create_snapshot("n", "base")
    repo.clone_table("n@base", "m")
    key = repo.view("m").scan_keyed()[0][0]
    repo.delete("m", [key])
    mbase = repo.resolve_manifest("n@base")
    d = scan_delta(repo.store, compute_delta(repo.resolve_manifest("m"), mbase), mbase)
    assert [(r.sign, r.key, r.values) for r in d] == [(-1, key, None)]
    assert d.rows[0].rowid is not None


def test_delta_soundness_over_random_histories(tmp_path):
    for seed in range(60):
        h = build_history(tmp_path / f"h{seed}", seed)
        mbase = h.repo.resolve_manifest(h.base_ref)
        for table in ("T", "TC"):
            m = h.repo.resolve_manifest(table)
            d = scan_delta(h.repo.store, compute_delta(m, mbase), mbase)
            assert apply_delta(h.repo, h.base_rows, d) == bag(h.models[table]), (seed, table)


# diff_aggregate -------------------------------------------------------


def test_identical_changes_cancel(branched):
    branched.delete("t", [(5,)])
    branched.delete("c", [(5,)])
    branched.insert("t", [(7, "h")])
    branched.insert("c", [(7, "h")])
    a, b = deltas(branched, "t", "c")
    assert diff_aggregate(a, b, KV) == []


def test_conflicting_updates_share_one_group(branched):
    branched.update("t", [(2,)], {"b": "x"})
    branched.update("c", [(2,)], {"b": "y"})
    a, b = deltas(branched, "t", "c")
    (group,) = diff_aggregate(a, b, KV, keep_cancelled=True)
    assert group.key == (2,)
    assert [(r.sign, r.values) for r in group.ops[0]] == [(-1, None), (1, (2, "x"))]
    assert [(r.sign, r.values) for r in group.ops[1]] == [(-1, None), (1, (2, "y"))]
    assert [r.values for r in group.survivors[0]] == [(2, "x")]
    assert [r.values for r in group.survivors[1]] == [(2, "y")]


def test_deltas_against_different_bases_rejected(branched):
    branched.insert("t", [(10, "j")])
    branched.create_snapshot("t", "other")
    a, _ = deltas(branched, "t", "c")
    _, b = deltas(branched, "t", "c", base="t@other")
    with pytest.raises(BaseMismatch):
        diff_aggregate(a, b, KV)


def test_wide_values_group_by_digest():
    schema = Schema.of([("doc", "STRING")])
    g = ValueGrouper(schema)
    big = ("x" * 1000,)
    k1, k2 = g.key(big), g.key(("x" * 1000,))
    assert k1 == k2 and k1 != big
    assert g.values_of(k1) == big
    assert g.key(("short",)) == ("short",)


def test_digest_collision_falls_back_to_full_values(monkeypatch):
    class Same:
        def __init__(self, _):
            pass

        def digest(self):
            return b"\x00" * 32

    monkeypatch.setattr(version_ops.hashlib, "sha256", Same)
    g = ValueGrouper(Schema.of([("doc", "BYTES")]))
    first, second = (b"a" * 300,), (b"b" * 300,)
    k1, k2 = g.key(first), g.key(second)
    assert k1 != k2
    assert g.values_of(k1) == first and g.values_of(k2) == second


# snapshot_diff --------------------------------------------------------


def test_diff_with_itself_is_empty(branched):
    assert branched.diff("t", "t") == []
    assert branched.diff("t@base", "c") == []


def test_diff_example_pk(repo):
    repo.create_table("t", KV)
    repo.insert("t", [(1, "a"), (2, "b")])
    repo.create_snapshot("t", "a")
    repo.clone_table("t@a", "u")
    repo.update("u", [(2,)], {"b": "x"})
    repo.insert("u", [(3, "c")])
    expected = [DiffRow(-1, (2, "b")), DiffRow(1, (2, "x")), DiffRow(1, (3, "c"))]
    assert repo.diff("t@a", "u") == expected
    assert repo.diff("t@a", "u", base="t@a") == expected


def test_diff_example_multiplicity(repo):
    repo.create_table("n", BAG)
    repo.insert("n", [(1, "r")] * 2)
    repo.create_table("m", BAG)
    repo.insert("m", [(1, "r")] * 5)
    assert repo.diff("n", "m") == [DiffRow(3, (1, "r"))]
    assert repo.diff("m", "n") == [DiffRow(-3, (1, "r"))]


def test_diff_across_unrelated_tables_uses_fallback(repo):
    repo.create_table("p", KV)
    repo.create_table("q", KV)
    repo.insert("p", [(1, "a"), (2, "b")])
    repo.insert("q", [(2, "b"), (3, "c")])
    assert repo.diff("p", "q") == oracle_diff(repo.scan("p"), repo.scan("q"), KV)


def test_diff_requires_same_schema(repo):
    repo.create_table("p", KV)
    repo.create_table("q", BAG)
    with pytest.raises(SchemaMismatch):
        repo.diff("p", "q")


def test_diff_is_antisymmetric(tmp_path):
    for seed in range(40):
        h = build_history(tmp_path / f"h{seed}", seed)
        forward = h.repo.diff("T", "TC")
        backward = h.repo.diff("TC", "T")
        assert Counter({d.values: d.diff_cnt for d in forward}) == Counter(
            {d.values: -d.diff_cnt for d in backward}
        )


def test_fast_and_fallback_paths_agree_with_oracle(tmp_path):
    for seed in range(80):
        h = build_history(tmp_path / f"h{seed}", seed)
        repo = h.repo
        ma, mb = repo.resolve_manifest("T"), repo.resolve_manifest("TC")
        mbase = repo.resolve_manifest(h.base_ref)
        expected = oracle_diff(h.models["T"], h.models["TC"], h.schema)
        assert diff_with_base(repo.store, h.schema, ma, mb, mbase) == expected, seed
        assert diff_without_base(repo.store, h.schema, ma, mb) == expected, seed


def test_diff_output_is_sorted_by_key(repo):
    repo.create_table("t", KV)
    repo.insert("t", [(k, "a") for k in range(20)])
    repo.create_snapshot("t", "s")
    repo.clone_table("t@s", "u")
    repo.update("u", [(k,) for k in range(0, 20, 3)], {"b": "z"})
    keys = [d.values[0] for d in repo.diff("t", "u")]
    assert keys == sorted(keys)


row_values = st.tuples(st.integers(0, 3), st.sampled_from(["a", "b", None]))


@settings(max_examples=40, deadline=None)
@given(st.lists(row_values, max_size=12), st.lists(row_values, max_size=12))
def test_no_pk_diff_matches_oracle(tmp_path_factory, rows_a, rows_b):
    repo = Repository.init(tmp_path_factory.mktemp("d") / "r", object_rows=3)
    repo.create_table("a", BAG)
    repo.create_table("b", BAG)
    repo.insert("a", rows_a)
    repo.insert("b", rows_b)
    assert repo.diff("a", "b") == oracle_diff(rows_a, rows_b, BAG)
