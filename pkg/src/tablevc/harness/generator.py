"""Deterministic lineitem-shaped data."""

from __future__ import annotations

import numpy as np

from ..schema import Schema

LINEITEM_COLUMNS = [
    ("l_orderkey", "INT64"),
    ("l_linenumber", "INT64"),
    ("l_partkey", "INT64"),
    ("l_suppkey", "INT64"),
    ("l_quantity", "FLOAT64"),
    ("l_extendedprice", "FLOAT64"),
    ("l_discount", "FLOAT64"),
    ("l_returnflag", "STRING"),
    ("l_shipdate", "STRING"),
    ("l_comment", "STRING"),
]
LINEITEM_PK = ("l_orderkey", "l_linenumber")

_WORDS = np.array(
    "carefully final deposits sleep furiously quickly regular requests haggle blithely "
    "ironic packages boost slyly express accounts nag pending theodolites wake bold".split()
)
_FLAGS = np.array(["A", "N", "R"])


def lineitem_schema(pk: bool = True) -> Schema:
    return Schema.of(LINEITEM_COLUMNS, LINEITEM_PK if pk else None)


def gen_lineitem(scale_rows: int, seed: int = 0) -> list[tuple]:
    """``scale_rows`` rows clustered by (l_orderkey, l_linenumber).

    Orders carry 1 to 7 line items, so the composite key is unique.
    """
    if scale_rows < 1:
        raise ValueError("scale_rows must be at least 1")
    rng = np.random.default_rng(seed)
    lines = rng.integers(1, 8, size=scale_rows // 4 + 8)
    while lines.sum() < scale_rows:
        lines = np.concatenate([lines, rng.integers(1, 8, size=scale_rows // 4 + 8)])
    orderkey = np.repeat(np.arange(1, len(lines) + 1, dtype=np.int64) * 4, lines)[:scale_rows]
    starts = np.cumsum(lines) - lines
    linenumber = (np.arange(lines.sum()) - np.repeat(starts, lines) + 1)[:scale_rows]
    n = scale_rows
    partkey = rng.integers(1, 200_000, size=n)
    suppkey = rng.integers(1, 10_000, size=n)
    quantity = rng.integers(1, 51, size=n).astype(np.float64)
    price = np.round(quantity * rng.uniform(900.0, 2000.0, size=n), 2)
    discount = np.round(rng.integers(0, 11, size=n) / 100.0, 2)
    flags = _FLAGS[rng.integers(0, 3, size=n)]
    days = rng.integers(0, 2526, size=n)
    shipdate = np.datetime_as_string(np.datetime64("1992-01-02") + days.astype("timedelta64[D]"))
    w = rng.integers(0, len(_WORDS), size=(n, 3))
    comment = np.char.add(np.char.add(np.char.add(_WORDS[w[:, 0]], " "), np.char.add(_WORDS[w[:, 1]], " ")), _WORDS[w[:, 2]])
    return list(
        zip(
            orderkey.tolist(),
            linenumber.tolist(),
            partkey.tolist(),
            suppkey.tolist(),
            quantity.tolist(),
            price.tolist(),
            discount.tolist(),
            flags.tolist(),
            shipdate.tolist(),
            comment.tolist(),
        )
    )
