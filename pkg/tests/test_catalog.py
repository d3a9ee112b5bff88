from __future__ import annotations

import pytest
from conftest import BAG, KV, bag

from tablevc import Repository, Schema
from tablevc.catalog import AtTimestamp, Current, Named, format_ref, parse_ref
from tablevc.errors import (
    DuplicateName,
    DuplicateSnapshotName,
    InvalidSchema,
    OutOfRetention,
    RefSyntaxError,
    SchemaMismatch,
    UnknownSnapshot,
    UnknownTable,
)


def ten(repo: Repository, name: str = "t") -> None:
    repo.create_table(name, KV)
    repo.insert(name, [(k, f"r{k}") for k in range(10)])


@pytest.mark.parametrize(
    "text, ref",
    [
        ("T", Current("T")),
        ("T@sn1", Named("T", "sn1")),
        ("T@ts:42", AtTimestamp("T", 42)),
        ("lineitem_2@before-fix", Named("lineitem_2", "before-fix")),
    ],
)
def test_ref_grammar_round_trips(text, ref):
    assert parse_ref(text) == ref
    assert format_ref(ref) == text == str(ref)


@pytest.mark.parametrize("text", ["", "@x", "T@", "T@ts:", "T@ts:-1", "T@ts:abc", "a b", "T@a@b", "1T"])
def test_bad_refs_rejected(text):
    with pytest.raises(RefSyntaxError):
        parse_ref(text)


def test_create_table_starts_empty(repo):
    repo.create_table("t", KV)
    assert repo.scan("t") == []


def test_names_checked(kv):
    with pytest.raises(RefSyntaxError):
        kv.create_table("bad name", KV)
    with pytest.raises(RefSyntaxError):
        kv.create_snapshot("t", "ts:5")


def test_duplicate_table_rejected(kv):
    with pytest.raises(DuplicateName):
        kv.create_table("t", KV)


@pytest.mark.parametrize(
    "columns, pk",
    [
        ([("a", "INT64")], ["z"]),
        ([("a", "INT64"), ("a", "STRING")], None),
        ([("a", "DECIMAL")], None),
        ([], None),
    ],
)
def test_invalid_schemas(columns, pk):
    with pytest.raises(InvalidSchema):
        Schema.of(columns, pk)


def test_schema_text_form():
    s = Schema.parse("a:INT64, b:string", "a")
    assert s == KV
    assert Schema.from_json(s.to_json()) == s


def test_snapshot_isolates_later_inserts(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    repo.insert("t", [(k, "late") for k in range(10, 15)])
    assert repo.count("t@sn1") == 10
    assert repo.count("t") == 15


def test_duplicate_snapshot_rejected(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    with pytest.raises(DuplicateSnapshotName):
        repo.create_snapshot("t", "sn1")


def test_snapshot_survives_deleting_everything(repo):
    ten(repo)
    kept = repo.scan("t")
    repo.create_snapshot("t", "sn1")
    repo.delete("t", [(k,) for k in range(10)])
    assert repo.scan("t") == []
    assert repo.scan("t@sn1") == kept


def test_named_ref_resolves_to_frozen_manifest(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    frozen = repo.resolve_manifest("t")
    repo.insert("t", [(99, "x")])
    assert repo.resolve_manifest("t@sn1") == frozen


def test_timestamp_ref_sees_exact_prefix_of_commits(repo):
    repo.create_table("t", KV)
    stamps, states = [], []
    for i in range(5):
        repo.insert("t", [(i, f"c{i}")])
        stamps.append(repo.clock)
        states.append(repo.scan("t"))
    for ts, expected in zip(stamps, states):
        assert repo.scan(f"t@ts:{ts}") == expected
    assert repo.scan(f"t@ts:{stamps[2]}") == [(0, "c0"), (1, "c1"), (2, "c2")]


def test_unknown_refs(repo):
    ten(repo)
    with pytest.raises(UnknownSnapshot):
        repo.scan("t@nope")
    with pytest.raises(UnknownSnapshot):
        repo.scan(f"t@ts:{repo.clock + 5}")
    with pytest.raises(UnknownTable):
        repo.scan("missing")


def test_retention_horizon(tmp_path):
    with Repository.init(tmp_path / "r", retention_commits=2) as repo:
        repo.create_table("t", KV)
        for i in range(5):
            repo.insert("t", [(i, "x")])
        with pytest.raises(OutOfRetention):
            repo.scan("t@ts:2")
        assert repo.count(f"t@ts:{repo.clock - 1}") == 4


def test_clone_scans_identically_and_is_independent(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    repo.clone_table("t@sn1", "c")
    assert repo.scan("c") == repo.scan("t@sn1")
    assert repo.schema("c") == repo.schema("t")
    repo.insert("c", [(50, "new")])
    repo.delete("t", [(0,)])
    assert repo.count("t") == 9 and repo.count("c") == 11
    assert (0, "r0") in repo.scan("c")


def test_clone_references_the_same_objects(repo):
    ten(repo)
    repo.flush("t")
    objects_before = set(repo.store.object_ids())
    repo.clone_table("t", "c")
    assert set(repo.store.object_ids()) == objects_before
    assert repo.resolve_manifest("c").object_ids == repo.resolve_manifest("t").object_ids


def test_clone_of_empty_table(repo):
    repo.create_table("t", BAG)
    repo.clone_table("t", "c")
    assert repo.scan("c") == [] and repo.schema("c") == BAG


def test_clone_into_existing_name_rejected(repo):
    ten(repo)
    ten(repo, "u")
    with pytest.raises(DuplicateName):
        repo.clone_table("t", "u")


def test_clone_metadata_independent_of_row_count(tmp_path):
    written = []
    for n in (10, 20_000):
        with Repository.init(tmp_path / f"r{n}", object_rows=512) as repo:
            repo.create_table("t", KV)
            repo.insert("t", [(k, "x") for k in range(n)])
            repo.create_snapshot("t", "s")
            before = repo.metadata_bytes()
            repo.clone_table("t@s", "c")
            written.append(repo.metadata_bytes() - before)
    assert written[1] <= 2 * written[0]


def test_restore_discards_changes(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    repo.insert("t", [(20, "x")])
    repo.update("t", [(3,)], {"b": "changed"})
    repo.restore_table("t", "t@sn1")
    assert repo.scan("t") == repo.scan("t@sn1")
    once = repo.scan("t")
    repo.restore_table("t", "t@sn1")
    assert repo.scan("t") == once


def test_restore_to_current_changes_nothing(repo):
    ten(repo)
    before = repo.scan("t")
    repo.restore_table("t", "t")
    assert repo.scan("t") == before


def test_restore_clone_from_other_table(repo):
    ten(repo)
    repo.clone_table("t", "c")
    repo.delete("t", [(1,), (2,)])
    repo.create_snapshot("t", "sn2")
    repo.restore_table("c", "t@sn2")
    assert bag(repo.scan("c")) == bag(repo.scan("t@sn2"))


def test_restore_requires_same_schema(repo):
    ten(repo)
    repo.create_table("b", BAG)
    with pytest.raises(SchemaMismatch):
        repo.restore_table("t", "b")


def test_common_base_from_lineage(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    repo.clone_table("t@sn1", "c")
    assert repo.find_common_base("t", "c") == repo.resolve_manifest("t@sn1")
    assert repo.find_common_base("c", "t@sn1") == repo.resolve_manifest("t@sn1")


def test_unrelated_tables_have_no_base(repo):
    ten(repo)
    ten(repo, "u")
    assert repo.find_common_base("t", "u") is None


def test_common_base_gone_after_snapshot_dropped_and_collected(tmp_path):
    with Repository.init(tmp_path / "r", object_rows=4, retention_commits=0) as repo:
        ten(repo)
        repo.create_snapshot("t", "sn1")
        repo.clone_table("t@sn1", "c")
        repo.insert("t", [(30, "after")])
        repo.insert("c", [(31, "clone edit")])
        repo.flush("t")
        repo.drop_snapshot("t", "sn1")
        repo.gc()
        assert repo.find_common_base("t", "c") is None


def test_drop_snapshot_then_gc_removes_its_objects(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    repo.delete("t", [(k,) for k in range(10)])
    repo.compact("t")
    repo.set_retention(0)
    repo.gc()
    files = len(repo.store.object_ids())
    repo.drop_snapshot("t", "sn1")
    report = repo.gc()
    assert report.objects_deleted > 0 and report.bytes_reclaimed > 0
    assert len(repo.store.object_ids()) == files - report.objects_deleted


def test_drop_shared_snapshot_frees_nothing(repo):
    ten(repo)
    repo.create_snapshot("t", "sn1")
    repo.set_retention(0)
    repo.drop_snapshot("t", "sn1")
    assert repo.gc().objects_deleted == 0


def test_drop_unknown_targets(repo):
    ten(repo)
    with pytest.raises(UnknownSnapshot):
        repo.drop_snapshot("t", "nope")
    with pytest.raises(UnknownTable):
        repo.drop_table("nope")


def test_catalog_persists(tmp_path):
    with Repository.init(tmp_path / "r") as repo:
        ten(repo)
        repo.create_snapshot("t", "sn1")
        repo.clone_table("t@sn1", "c")
    reopened = Repository.open(tmp_path / "r")
    assert reopened.tables() == ["c", "t"]
    assert reopened.snapshots("t") == {"sn1": reopened.snapshots("t")["sn1"]}
    assert reopened.find_common_base("t", "c") is not None
    assert reopened.count("c") == 10
