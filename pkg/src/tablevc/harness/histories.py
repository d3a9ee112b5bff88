"""Seeded random branch histories with an in-memory model of each branch.

A history creates table ``T``, fills it, pins snapshot ``base``, clones it to
``TC`` and then interleaves random DML, flushes and compactions on both
tables.  The model tracks each table's row multiset independently of the
engine so diffs and merges can be checked against the oracles.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path

from ..repo import Repository
from ..schema import Schema, row_order_key

PK_SCHEMA = Schema.of([("k", "INT64"), ("v", "STRING"), ("w", "INT64")], ["k"])
NOPK_SCHEMA = Schema.of([("v", "STRING"), ("w", "INT64")])

KEYS = range(8)
LETTERS = "abc"
WEIGHTS = range(3)


@dataclass
class History:
    repo: Repository
    pk: bool
    seed: int
    base_ref: str
    base_rows: list[tuple]
    models: dict[str, list[tuple]] = field(default_factory=dict)
    log: list[str] = field(default_factory=list)

    @property
    def schema(self) -> Schema:
        return PK_SCHEMA if self.pk else NOPK_SCHEMA

    @property
    def pk_indices(self) -> tuple[int, ...] | None:
        return (0,) if self.pk else None

    def model(self, table: str) -> list[tuple]:
        return sorted(self.models[table], key=row_order_key)


class _Branch:
    """Applies one random step to a table and mirrors it in the model."""

    def __init__(self, repo: Repository, name: str, pk: bool, rows: list[tuple], rng: random.Random, log: list[str]):
        self.repo = repo
        self.name = name
        self.pk = pk
        self.rows = list(rows)
        self.rng = rng
        self.log = log

    def _row(self, key: int | None = None) -> tuple:
        v, w = self.rng.choice(LETTERS), self.rng.choice(WEIGHTS)
        return (key, v, w) if self.pk else (v, w)

    def _free_keys(self) -> list[int]:
        used = {r[0] for r in self.rows}
        return [k for k in KEYS if k not in used]

    def insert(self, txn) -> None:
        if self.pk:
            free = self._free_keys()
            if not free:
                return
            new = [self._row(k) for k in self.rng.sample(free, self.rng.randint(1, min(3, len(free))))]
        else:
            new = [self._row() for _ in range(self.rng.randint(1, 3))]
            if self.rows and self.rng.random() < 0.4:
                new.append(self.rng.choice(self.rows))
        txn.insert(new)
        self.rows.extend(new)
        self.log.append(f"{self.name} insert {new}")

    def delete(self, txn) -> None:
        live = txn.scan_keyed()
        if not live:
            return
        if self.pk:
            victims = self.rng.sample(live, self.rng.randint(1, min(2, len(live))))
            txn.delete([k for k, _ in victims])
            for _, v in victims:
                self.rows.remove(v)
            self.log.append(f"{self.name} delete {[v for _, v in victims]}")
        elif self.rng.random() < 0.5:
            key, values = self.rng.choice(live)
            txn.delete([key])
            self.rows.remove(values)
            self.log.append(f"{self.name} delete one {values}")
        else:
            v = self.rng.choice(LETTERS)
            n = txn.delete_where({"v": v})
            before = len(self.rows)
            self.rows = [r for r in self.rows if r[0] != v]
            assert before - len(self.rows) == n
            self.log.append(f"{self.name} delete where v={v}")

    def update(self, txn) -> None:
        live = txn.scan_keyed()
        if not live:
            return
        key, values = self.rng.choice(live)
        col = "w" if self.rng.random() < 0.6 else "v"
        new_val = self.rng.choice(WEIGHTS) if col == "w" else self.rng.choice(LETTERS)
        changes = {col: new_val}
        if self.pk and self.rng.random() < 0.2:
            free = self._free_keys()
            if free:
                changes["k"] = self.rng.choice(free)
        txn.update([key], changes)
        names = self.repo.schema(self.name).names
        new = tuple(changes.get(c, values[i]) for i, c in enumerate(names))
        self.rows.remove(values)
        self.rows.append(new)
        self.log.append(f"{self.name} update {values} -> {new}")

    def transient(self, txn) -> None:
        if self.pk:
            free = self._free_keys()
            if not free:
                return
            row = self._row(self.rng.choice(free))
        else:
            row = self._row()
        txn.insert([row])
        if self.pk:
            txn.delete([(row[0],)])
        else:
            key = max(k for k, v in txn.scan_keyed() if v == row)
            txn.delete([key])
        self.log.append(f"{self.name} transient {row}")

    def step(self) -> None:
        rng = self.rng
        roll = rng.random()
        if roll < 0.08:
            self.repo.compact(self.name)
            self.log.append(f"{self.name} compact")
            return
        if roll < 0.16:
            self.repo.flush(self.name)
            self.log.append(f"{self.name} flush")
            return
        with self.repo.begin(self.name) as txn:
            for _ in range(rng.randint(1, 3)):
                op = rng.choice((self.insert, self.insert, self.delete, self.update, self.transient))
                op(txn)


def build_history(root: str | Path, seed: int, pk: bool | None = None, steps: int | None = None) -> History:
    rng = random.Random(seed)
    if pk is None:
        pk = rng.random() < 0.5
    object_rows = rng.choice((2, 3, 4, 8, 64))
    repo = Repository.init(root, object_rows=object_rows, spill_rows=rng.choice((2, 4, 64)))
    schema = PK_SCHEMA if pk else NOPK_SCHEMA
    repo.create_table("T", schema)
    log: list[str] = []
    t = _Branch(repo, "T", pk, [], rng, log)
    for _ in range(rng.randint(1, 4)):
        with repo.begin("T") as txn:
            t.insert(txn)
            if rng.random() < 0.3:
                t.delete(txn)
    if rng.random() < 0.3:
        repo.compact("T")
    repo.create_snapshot("T", "base")
    base_ts = repo.clock
    base_rows = list(t.rows)
    repo.clone_table("T@base", "TC")
    s = _Branch(repo, "TC", pk, base_rows, rng, log)
    for _ in range(steps if steps is not None else rng.randint(1, 12)):
        rng.choice((t, s)).step()
    base_ref = "T@base" if rng.random() < 0.7 else f"T@ts:{base_ts}"
    return History(repo, pk, seed, base_ref, base_rows, {"T": t.rows, "TC": s.rows}, log)
