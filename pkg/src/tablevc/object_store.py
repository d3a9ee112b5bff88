"""Immutable data and tombstone objects on the local filesystem.

Each object is one file under ``<repo>/objects``: ``<hex-id>.obj`` for data,
``<hex-id>.tmb`` for tombstones.  Layout, little endian::

    header   b"TVC1" + kind byte (b"D" data, b"T" tombstone)
    payload  data       u64 schema_hash, u32 n, u32 keys_len, keys block,
                        u64 offsets[n + 1], row blob
             tombstone  u32 n, msgpack block of four parallel arrays
                        (commit_ts, key, target object id, target offset)
    footer   u64 row_count, u64 CRC-64/XZ over header + payload

The keys block holds the commit timestamps and sort keys of every row so that
key lookups never decode row values.  The offset table gives each row's byte
range inside the row blob, which makes a physical rowid directly addressable.
Files are written to a temporary name and renamed, so a reader never sees a
partial object.
"""

from __future__ import annotations

import os
import struct
import threading
import time
from array import array
from collections import OrderedDict
from dataclasses import dataclass
from itertools import accumulate
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import msgpack
from fastcrc import crc64

from .errors import CorruptObject, EmptyInput, IoFailure, NotFound, UnsortedInput

MAGIC = b"TVC1"
KIND_DATA = b"D"
KIND_TOMBSTONE = b"T"
_HEADER = len(MAGIC) + 1
_FOOTER = struct.Struct("<QQ")
_DATA_PREFIX = struct.Struct("<QII")
_U32 = struct.Struct("<I")

_SUFFIX = {KIND_DATA: ".obj", KIND_TOMBSTONE: ".tmb"}

ObjectId = str
"""32 hex characters: 48-bit millisecond clock followed by 80 random bits."""


class RowId(NamedTuple):
    object: ObjectId
    offset: int


_id_lock = threading.Lock()
_id_last = [0, 0]
_RAND_BITS = 80


def new_object_id() -> ObjectId:
    """Time-ordered 128-bit id; monotonic within a process."""
    with _id_lock:
        ms = time.time_ns() // 1_000_000
        if ms <= _id_last[0]:
            ms = _id_last[0]
            rand = (_id_last[1] + 1) & ((1 << _RAND_BITS) - 1)
        else:
            rand = int.from_bytes(os.urandom(_RAND_BITS // 8), "big")
        _id_last[0], _id_last[1] = ms, rand
    return f"{ms:012x}{rand:020x}"


def crc64_of(data: bytes) -> int:
    return crc64.xz(data)


@dataclass(frozen=True)
class DataObject:
    id: ObjectId
    schema_hash: int
    commit_ts: tuple[int, ...]
    keys: tuple[tuple, ...]
    values: tuple[tuple, ...]

    @property
    def row_count(self) -> int:
        return len(self.keys)

    @property
    def min_key(self) -> tuple:
        return self.keys[0]

    @property
    def max_key(self) -> tuple:
        return self.keys[-1]

    @property
    def rows(self) -> list[tuple[int, tuple, tuple]]:
        return list(zip(self.commit_ts, self.keys, self.values))


@dataclass(frozen=True)
class TombstoneObject:
    id: ObjectId
    entries: tuple[tuple[int, tuple, RowId], ...]

    @property
    def targets(self) -> frozenset[ObjectId]:
        return frozenset(rid.object for _, _, rid in self.entries)


@dataclass(frozen=True)
class ObjectMeta:
    """What a manifest needs to know about an object without reading it."""

    id: ObjectId
    kind: str  # "data" | "tombstone"
    rows: int
    min_key: tuple
    max_key: tuple
    min_ts: int
    max_ts: int
    nbytes: int
    targets: frozenset[ObjectId] = frozenset()


def _check_sorted(keys: Sequence[tuple], ts: Sequence[int]) -> None:
    for i in range(1, len(keys)):
        prev, cur = keys[i - 1], keys[i]
        if cur < prev or (cur == prev and ts[i] < ts[i - 1]):
            raise UnsortedInput(f"row {i} key {cur!r} sorts before {prev!r}")


class _LRU:
    """Row-count bounded cache of decoded immutable objects."""

    def __init__(self, capacity_rows: int):
        self.capacity = capacity_rows
        self._items: OrderedDict[str, tuple[int, object]] = OrderedDict()
        self._rows = 0
        self._lock = threading.Lock()

    def get(self, key):
        with self._lock:
            hit = self._items.get(key)
            if hit is None:
                return None
            self._items.move_to_end(key)
            return hit[1]

    def put(self, key, value, weight: int) -> None:
        if weight > self.capacity:
            return
        with self._lock:
            if key in self._items:
                return
            self._items[key] = (weight, value)
            self._rows += weight
            while self._rows > self.capacity:
                _, (w, _) = self._items.popitem(last=False)
                self._rows -= w

    def discard(self, key) -> None:
        with self._lock:
            hit = self._items.pop(key, None)
            if hit is not None:
                self._rows -= hit[0]

    def clear(self) -> None:
        with self._lock:
            self._items.clear()
            self._rows = 0


class ObjectStore:
    def __init__(self, root: str | os.PathLike, *, cache_rows: int = 300_000, fsync: bool = False):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.fsync = fsync
        self._objects = _LRU(cache_rows)
        self._keys = _LRU(cache_rows * 4)
        self._tombs = _LRU(cache_rows)
        self.bytes_written = 0

    # paths -------------------------------------------------------------

    def path_of(self, oid: ObjectId, kind: bytes = KIND_DATA) -> Path:
        return self.root / f"{oid}{_SUFFIX[kind]}"

    def object_ids(self) -> list[tuple[ObjectId, str]]:
        out = []
        for p in self.root.iterdir():
            if p.suffix == ".obj":
                out.append((p.stem, "data"))
            elif p.suffix == ".tmb":
                out.append((p.stem, "tombstone"))
        return sorted(out)

    def exists(self, oid: ObjectId) -> bool:
        return self.path_of(oid, KIND_DATA).exists() or self.path_of(oid, KIND_TOMBSTONE).exists()

    def size_of(self, oid: ObjectId) -> int:
        for kind in (KIND_DATA, KIND_TOMBSTONE):
            p = self.path_of(oid, kind)
            if p.exists():
                return p.stat().st_size
        raise NotFound(oid)

    def delete(self, oid: ObjectId) -> int:
        """Remove an object file; returns bytes reclaimed (0 if absent)."""
        freed = 0
        for kind in (KIND_DATA, KIND_TOMBSTONE):
            p = self.path_of(oid, kind)
            try:
                freed += p.stat().st_size
                p.unlink()
            except FileNotFoundError:
                pass
        self._objects.discard(oid)
        self._keys.discard(oid)
        self._tombs.discard(oid)
        return freed

    def clear_cache(self) -> None:
        self._objects.clear()
        self._keys.clear()
        self._tombs.clear()

    # writing -----------------------------------------------------------

    def _write_file(self, oid: ObjectId, kind: bytes, payload: bytes, count: int) -> int:
        body = MAGIC + kind + payload
        blob = body + _FOOTER.pack(count, crc64_of(body))
        final = self.path_of(oid, kind)
        tmp = final.with_name(final.name + ".tmp")
        try:
            with open(tmp, "wb") as fh:
                fh.write(blob)
                if self.fsync:
                    fh.flush()
                    os.fsync(fh.fileno())
            os.replace(tmp, final)
        except OSError as exc:
            try:
                tmp.unlink()
            except OSError:
                pass
            raise IoFailure(f"writing {final}: {exc}") from exc
        self.bytes_written += len(blob)
        return len(blob)

    def put_data(
        self,
        rows: Iterable[tuple[int, tuple, tuple]] | None = None,
        schema_hash: int = 0,
        *,
        columns: tuple[Sequence[int], Sequence[tuple], Sequence[tuple]] | None = None,
    ) -> ObjectMeta:
        """Write one sorted data object.

        Rows may be given as ``(commit_ts, key, values)`` triples or, to skip
        a transpose on hot paths, as three parallel sequences in ``columns``.
        """
        if columns is None:
            rows = list(rows or ())
            if not rows:
                raise EmptyInput("data objects must hold at least one row")
            ts, keys, values = (list(c) for c in zip(*rows))
        else:
            ts, keys, values = (list(c) for c in columns)
            if not keys:
                raise EmptyInput("data objects must hold at least one row")
        keys = [tuple(k) for k in keys]
        _check_sorted(keys, ts)
        packer = msgpack.Packer()
        encoded = [packer.pack(v) for v in values]
        offsets = array("Q", accumulate(map(len, encoded), initial=0))
        keys_block = msgpack.packb([ts, keys])
        n = len(keys)
        payload = b"".join(
            (
                _DATA_PREFIX.pack(schema_hash, n, len(keys_block)),
                keys_block,
                offsets.tobytes(),
                b"".join(encoded),
            )
        )
        oid = new_object_id()
        nbytes = self._write_file(oid, KIND_DATA, payload, n)
        return ObjectMeta(
            id=oid,
            kind="data",
            rows=n,
            min_key=keys[0],
            max_key=keys[-1],
            min_ts=min(ts),
            max_ts=max(ts),
            nbytes=nbytes,
        )

    def write_data_object(self, rows: Iterable[tuple[int, tuple, tuple]], schema_hash: int) -> ObjectId:
        return self.put_data(rows, schema_hash).id

    def put_tombstones(self, entries: Iterable[tuple[int, tuple, RowId]]) -> ObjectMeta:
        entries = list(entries)
        if not entries:
            raise EmptyInput("tombstone objects must hold at least one entry")
        ts = [e[0] for e in entries]
        keys = [tuple(e[1]) for e in entries]
        _check_sorted(keys, ts)
        targets = [bytes.fromhex(e[2][0]) for e in entries]
        offsets = [e[2][1] for e in entries]
        block = msgpack.packb([ts, keys, targets, offsets])
        oid = new_object_id()
        nbytes = self._write_file(oid, KIND_TOMBSTONE, _U32.pack(len(entries)) + block, len(entries))
        return ObjectMeta(
            id=oid,
            kind="tombstone",
            rows=len(entries),
            min_key=keys[0],
            max_key=keys[-1],
            min_ts=min(ts),
            max_ts=max(ts),
            nbytes=nbytes,
            targets=frozenset(e[2][0] for e in entries),
        )

    def write_tombstone_object(self, entries: Iterable[tuple[int, tuple, RowId]]) -> ObjectId:
        return self.put_tombstones(entries).id

    # reading -----------------------------------------------------------

    def _read_verified(self, oid: ObjectId, kind: bytes) -> memoryview:
        path = self.path_of(oid, kind)
        try:
            blob = path.read_bytes()
        except FileNotFoundError:
            raise NotFound(f"object {oid} not found") from None
        except OSError as exc:
            raise IoFailure(f"reading {path}: {exc}") from exc
        if len(blob) < _HEADER + _FOOTER.size or blob[: len(MAGIC)] != MAGIC:
            raise CorruptObject(f"object {oid}: bad header or truncated")
        if blob[len(MAGIC) : _HEADER] != kind:
            raise CorruptObject(f"object {oid}: unexpected kind byte")
        body_end = len(blob) - _FOOTER.size
        _, checksum = _FOOTER.unpack_from(blob, body_end)
        if crc64_of(blob[:body_end]) != checksum:
            raise CorruptObject(f"object {oid}: checksum mismatch")
        return memoryview(blob)[_HEADER:body_end]

    def _data_layout(self, oid: ObjectId):
        payload = self._read_verified(oid, KIND_DATA)
        try:
            schema_hash, n, klen = _DATA_PREFIX.unpack_from(payload, 0)
            kstart = _DATA_PREFIX.size
            ostart = kstart + klen
            rstart = ostart + 8 * (n + 1)
            offsets = payload[ostart:rstart].cast("Q")
            if len(offsets) != n + 1 or rstart + offsets[n] != len(payload):
                raise ValueError("offset table does not match payload size")
        except (struct.error, ValueError, TypeError) as exc:
            raise CorruptObject(f"object {oid}: {exc}") from exc
        return schema_hash, n, payload[kstart:ostart], offsets, payload[rstart:]

    def read_data_object(self, oid: ObjectId) -> DataObject:
        cached = self._objects.get(oid)
        if cached is not None:
            return cached
        schema_hash, n, keys_block, _, rows_blob = self._data_layout(oid)
        ts, keys = msgpack.unpackb(keys_block, use_list=False)
        unpacker = msgpack.Unpacker(None, use_list=False, raw=False, max_buffer_size=0)
        unpacker.feed(rows_blob)
        values = tuple(unpacker)
        if len(values) != n or len(keys) != n:
            raise CorruptObject(f"object {oid}: row count mismatch")
        obj = DataObject(oid, schema_hash, ts, keys, values)
        self._objects.put(oid, obj, n)
        self._keys.put(oid, (ts, keys), n)
        return obj

    def read_keys(self, oid: ObjectId) -> tuple[tuple[int, ...], tuple[tuple, ...]]:
        """Commit timestamps and sort keys of every row, without values."""
        cached = self._keys.get(oid)
        if cached is not None:
            return cached
        obj = self._objects.get(oid)
        if obj is not None:
            return obj.commit_ts, obj.keys
        _, n, keys_block, _, _ = self._data_layout(oid)
        ts, keys = msgpack.unpackb(keys_block, use_list=False)
        self._keys.put(oid, (ts, keys), n)
        return ts, keys

    def read_values_at(self, oid: ObjectId, offsets: Sequence[int]) -> list[tuple]:
        """Decode only the rows at the given positions."""
        obj = self._objects.get(oid)
        if obj is not None:
            return [obj.values[i] for i in offsets]
        _, n, _, table, rows_blob = self._data_layout(oid)
        out = []
        for i in offsets:
            if not 0 <= i < n:
                raise NotFound(f"row {i} outside object {oid} ({n} rows)")
            out.append(msgpack.unpackb(rows_blob[table[i] : table[i + 1]], use_list=False, raw=False))
        return out

    def read_tombstone_object(self, oid: ObjectId) -> TombstoneObject:
        cached = self._tombs.get(oid)
        if cached is not None:
            return cached
        payload = self._read_verified(oid, KIND_TOMBSTONE)
        try:
            (n,) = _U32.unpack_from(payload, 0)
            ts, keys, targets, offsets = msgpack.unpackb(payload[_U32.size :], use_list=False, raw=False)
        except (struct.error, ValueError, msgpack.UnpackException) as exc:
            raise CorruptObject(f"object {oid}: {exc}") from exc
        if not len(ts) == len(keys) == len(targets) == len(offsets) == n:
            raise CorruptObject(f"object {oid}: entry count mismatch")
        entries = tuple(
            (t, k, RowId(o.hex(), off)) for t, k, o, off in zip(ts, keys, targets, offsets)
        )
        tomb = TombstoneObject(oid, entries)
        self._tombs.put(oid, tomb, n)
        return tomb
