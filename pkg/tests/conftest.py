from __future__ import annotations

from collections import Counter

import pytest

from tablevc import Repository, Schema

KV = Schema.of([("a", "INT64"), ("b", "STRING")], ["a"])
BAG = Schema.of([("a", "INT64"), ("b", "STRING")])


@pytest.fixture
def repo(tmp_path):
    r = Repository.init(tmp_path / "repo", object_rows=4, spill_rows=4)
    yield r
    r.close()


@pytest.fixture
def kv(repo):
    repo.create_table("t", KV)
    return repo


def bag(rows) -> Counter:
    return Counter(tuple(r) for r in rows)


# acceptance verdicts, printed once at the end of the session
VERDICTS: list[str] = []


def record(name: str, ok: bool, detail: str = "") -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    VERDICTS.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
