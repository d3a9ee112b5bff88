"""Reference implementations over plain row multisets, with no storage layer."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

from ..schema import Schema
from ..version_ops import DiffRow, sort_diff


class _Abort:
    def __repr__(self) -> str:
        return "ABORT"


ABORT = _Abort()


def oracle_diff(rows_a: Iterable[Sequence], rows_b: Iterable[Sequence], schema: Schema | None = None) -> list[DiffRow]:
    """Tag rows of ``a`` with -1 and rows of ``b`` with +1, group by all columns, sum, drop zeros."""
    counts: Counter = Counter()
    for r in rows_a:
        counts[tuple(r)] -= 1
    for r in rows_b:
        counts[tuple(r)] += 1
    rows = [DiffRow(n, v) for v, n in counts.items() if n]
    if schema is None:
        return sorted(rows, key=lambda d: (_order(d.values), d.diff_cnt))
    return sort_diff(schema, rows)


def _order(values: Sequence) -> tuple:
    return tuple((0, 0) if v is None else (1, v) for v in values)


def _resolve(b, t, s, mode: str):
    """Outcome for one key or value group; returns ABORT on an unresolved conflict."""
    if t == s:
        return t
    if t == b:
        return s
    if s == b:
        return t
    if mode == "skip":
        return t
    if mode == "accept":
        return s
    return ABORT


def oracle_merge(
    base: Iterable[Sequence],
    target: Iterable[Sequence],
    source: Iterable[Sequence],
    mode: str,
    pk: Sequence[int] | None = None,
):
    """Merged multiset of rows (sorted), or ``ABORT``.

    With a primary key (column positions in ``pk``), each key's row is taken
    from whichever side changed it; both sides changing it differently is a
    conflict.  Without one, the same rule applies to each distinct row's
    multiplicity.
    """
    mode = str(getattr(mode, "value", mode)).lower()
    if pk:
        def keyed(rows):
            out = {}
            for r in rows:
                r = tuple(r)
                out[tuple(r[i] for i in pk)] = r
            return out

        b, t, s = keyed(base), keyed(target), keyed(source)
        result = []
        for k in set(b) | set(t) | set(s):
            row = _resolve(b.get(k), t.get(k), s.get(k), mode)
            if row is ABORT:
                return ABORT
            if row is not None:
                result.append(row)
        return sorted(result, key=_order)

    b, t, s = (Counter(tuple(r) for r in rows) for rows in (base, target, source))
    result = []
    for v in set(b) | set(t) | set(s):
        n = _resolve(b[v], t[v], s[v], mode)
        if n is ABORT:
            return ABORT
        result.extend([v] * n)
    return sorted(result, key=_order)


def oracle_merge_counts(n_base: int, n_target: int, n_source: int, mode: str):
    """Merged multiplicity of one row value, or ``ABORT``."""
    return _resolve(n_base, n_target, n_source, str(getattr(mode, "value", mode)).lower())
