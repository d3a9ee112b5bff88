"""Table schemas, value validation and row ordering helpers."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .errors import InvalidSchema, SchemaMismatch

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class ColumnType(str, Enum):
    INT64 = "INT64"
    FLOAT64 = "FLOAT64"
    STRING = "STRING"
    BYTES = "BYTES"
    BOOL = "BOOL"


_PY_TYPES: dict[ColumnType, tuple[type, ...]] = {
    ColumnType.INT64: (int,),
    ColumnType.FLOAT64: (float, int),
    ColumnType.STRING: (str,),
    ColumnType.BYTES: (bytes,),
    ColumnType.BOOL: (bool,),
}


@dataclass(frozen=True)
class Column:
    name: str
    type: ColumnType


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    primary_key: tuple[str, ...] | None = None

    def __post_init__(self):
        cols = tuple(
            c if isinstance(c, Column) else Column(c[0], ColumnType(c[1])) for c in self.columns
        )
        object.__setattr__(self, "columns", cols)
        if not cols:
            raise InvalidSchema("a schema needs at least one column")
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise InvalidSchema(f"duplicate column names in {names}")
        if any(not n or not isinstance(n, str) for n in names):
            raise InvalidSchema("column names must be non-empty strings")
        if self.primary_key is not None:
            pk = tuple(self.primary_key)
            if not pk:
                raise InvalidSchema("primary key must name at least one column")
            missing = [p for p in pk if p not in names]
            if missing:
                raise InvalidSchema(f"primary key column(s) {missing} not in schema")
            if len(set(pk)) != len(pk):
                raise InvalidSchema("primary key repeats a column")
            object.__setattr__(self, "primary_key", pk)

    # construction ------------------------------------------------------

    @classmethod
    def of(cls, columns: Iterable[tuple[str, str | ColumnType]], primary_key: Sequence[str] | None = None) -> "Schema":
        try:
            cols = tuple(Column(n, ColumnType(t)) for n, t in columns)
        except ValueError as exc:
            raise InvalidSchema(str(exc)) from exc
        return cls(cols, tuple(primary_key) if primary_key else None)

    @classmethod
    def parse(cls, text: str, primary_key: str | Sequence[str] | None = None) -> "Schema":
        """Parse ``"a:INT64,b:STRING"``."""
        cols = []
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            name, sep, typ = part.partition(":")
            if not sep:
                raise InvalidSchema(f"column definition {part!r} must look like name:TYPE")
            cols.append((name.strip(), typ.strip().upper()))
        if isinstance(primary_key, str):
            primary_key = [p.strip() for p in primary_key.split(",") if p.strip()]
        return cls.of(cols, primary_key or None)

    def to_json(self) -> dict:
        return {
            "columns": [[c.name, c.type.value] for c in self.columns],
            "primary_key": list(self.primary_key) if self.primary_key else None,
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> "Schema":
        return cls.of(data["columns"], data.get("primary_key"))

    # properties --------------------------------------------------------

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @property
    def has_pk(self) -> bool:
        return self.primary_key is not None

    @property
    def pk_indices(self) -> tuple[int, ...]:
        if not self.primary_key:
            return ()
        names = self.names
        return tuple(names.index(p) for p in self.primary_key)

    @property
    def schema_hash(self) -> int:
        canon = json.dumps(self.to_json(), separators=(",", ":"), sort_keys=True)
        return int.from_bytes(hashlib.sha256(canon.encode()).digest()[:8], "little")

    def compatible(self, other: "Schema") -> bool:
        """Same column names, types, order and primary key definition."""
        return self.columns == other.columns and self.primary_key == other.primary_key

    def require_compatible(self, other: "Schema", what: str = "schemas") -> None:
        if not self.compatible(other):
            raise SchemaMismatch(f"{what} differ: {self.to_json()} vs {other.to_json()}")

    def key_of(self, values: Sequence) -> tuple:
        return tuple(values[i] for i in self.pk_indices)

    def index(self, column: str) -> int:
        try:
            return self.names.index(column)
        except ValueError:
            raise SchemaMismatch(f"no column {column!r}") from None

    # validation --------------------------------------------------------

    def validate_rows(self, rows: Iterable[Sequence]) -> list[tuple]:
        """Check and normalize rows column by column.

        Integers headed for FLOAT64 columns become floats.  NULL is accepted
        everywhere except primary-key columns.  NaN is rejected because it
        breaks multiset equality.
        """
        rows = [tuple(r) for r in rows]
        if not rows:
            return rows
        width = len(self.columns)
        for r in rows:
            if len(r) != width:
                raise SchemaMismatch(f"row {r!r} has {len(r)} values, schema has {width}")
        pk = set(self.pk_indices)
        columns = [list(c) for c in zip(*rows)]
        changed = False
        for idx, (col, cdef) in enumerate(zip(columns, self.columns)):
            seen = set(map(type, col))
            allowed = _PY_TYPES[cdef.type]
            nulls = type(None) in seen
            if nulls:
                if idx in pk:
                    raise SchemaMismatch(f"primary key column {cdef.name!r} may not be NULL")
                seen.discard(type(None))
            bad = [t for t in seen if t not in allowed]
            if bad:
                raise SchemaMismatch(
                    f"column {cdef.name!r} ({cdef.type.value}) got {', '.join(t.__name__ for t in bad)}"
                )
            if cdef.type is ColumnType.INT64 and seen:
                present = [v for v in col if v is not None] if nulls else col
                if min(present) < INT64_MIN or max(present) > INT64_MAX:
                    raise SchemaMismatch(f"column {cdef.name!r} value outside INT64 range")
            elif cdef.type is ColumnType.FLOAT64 and seen:
                if int in seen:
                    col[:] = [float(v) if type(v) is int else v for v in col]
                    changed = True
                present = [v for v in col if v is not None] if nulls else col
                if any(map(math.isnan, present)):
                    raise SchemaMismatch(f"column {cdef.name!r} contains NaN")
        if changed:
            rows = list(zip(*columns))
        return rows


def row_order_key(values: Sequence) -> tuple:
    """Total order over rows that may contain NULLs (NULL sorts first)."""
    return tuple((0, 0) if v is None else (1, v) for v in values)
