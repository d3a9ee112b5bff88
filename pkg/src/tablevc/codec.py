"""Text encodings of rows: CSV (``\\N`` is NULL, BYTES as hex) and JSON."""

from __future__ import annotations

import csv
import io
import json
from typing import IO, Iterable, Iterator, Sequence

from .errors import SchemaMismatch
from .schema import ColumnType, Schema

NULL = r"\N"


def parse_value(text: str, ctype: ColumnType):
    if text == NULL:
        return None
    try:
        if ctype is ColumnType.INT64:
            return int(text)
        if ctype is ColumnType.FLOAT64:
            return float(text)
        if ctype is ColumnType.BOOL:
            low = text.strip().lower()
            if low in ("true", "1", "t"):
                return True
            if low in ("false", "0", "f"):
                return False
            raise ValueError(text)
        if ctype is ColumnType.BYTES:
            return bytes.fromhex(text)
    except ValueError:
        raise SchemaMismatch(f"cannot read {text!r} as {ctype.value}") from None
    return text


def format_value(value) -> str:
    if value is None:
        return NULL
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def json_value(value):
    return value.hex() if isinstance(value, bytes) else value


def read_csv(stream: IO[str], schema: Schema, columns: Sequence[str] | None = None) -> list[tuple]:
    """Rows from CSV with a header naming columns; absent columns become NULL."""
    reader = csv.reader(stream)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        return []
    wanted = list(columns) if columns is not None else list(schema.names)
    unknown = [h for h in header if h not in wanted]
    if unknown:
        raise SchemaMismatch(f"unknown column(s) in CSV header: {unknown}")
    pos = {h: i for i, h in enumerate(header)}
    types = {c.name: c.type for c in schema.columns}
    rows = []
    for line_no, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(header):
            raise SchemaMismatch(f"CSV line {line_no} has {len(rec)} fields, header has {len(header)}")
        rows.append(
            tuple(parse_value(rec[pos[c]], types[c]) if c in pos else None for c in wanted)
        )
    return rows


def write_csv(stream: IO[str], names: Sequence[str], rows: Iterable[Sequence]) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        w.writerow([format_value(v) for v in r])


def jsonl_lines(names: Sequence[str], rows: Iterable[Sequence]) -> Iterator[str]:
    for r in rows:
        yield json.dumps({n: json_value(v) for n, v in zip(names, r)}, separators=(", ", ": "))


def diff_jsonl_lines(names: Sequence[str], diff) -> Iterator[str]:
    for d in diff:
        row = {n: json_value(v) for n, v in zip(names, d.values)}
        yield json.dumps({"diff_cnt": d.diff_cnt, "row": row}, separators=(", ", ": "))


def write_diff_csv(stream: IO[str], names: Sequence[str], diff) -> None:
    write_csv(stream, ["diff_cnt", *names], ([d.diff_cnt, *d.values] for d in diff))


def csv_text(names: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    write_csv(buf, names, rows)
    return buf.getvalue()
