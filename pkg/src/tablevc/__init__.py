"""Versioned tables: snapshot, clone, restore, diff and merge over immutable objects."""

from __future__ import annotations

from .catalog import AtTimestamp, Current, Manifest, Named, ObjectRef, SnapshotRef, format_ref, parse_ref
from .errors import (
    BaseMismatch,
    CorruptObject,
    DuplicateName,
    DuplicateSnapshotName,
    InvalidSchema,
    MergeConflictFailure,
    MissingObject,
    NotFound,
    OutOfRetention,
    PkViolation,
    SchemaMismatch,
    TableVCError,
    UnknownSnapshot,
    UnknownTable,
    UserError,
    WriteConflict,
)
from .merge_engine import ConflictRecord, MergeMode, MergeReport
from .object_store import ObjectStore, RowId
from .repo import Repository
from .schema import Column, ColumnType, Schema
from .version_ops import DeltaSet, DiffRow, SignedRow, compute_delta, diff_aggregate, scan_delta, snapshot_diff

__all__ = [
    "AtTimestamp",
    "BaseMismatch",
    "Column",
    "ColumnType",
    "ConflictRecord",
    "CorruptObject",
    "Current",
    "DeltaSet",
    "DiffRow",
    "DuplicateName",
    "DuplicateSnapshotName",
    "InvalidSchema",
    "Manifest",
    "MergeConflictFailure",
    "MergeMode",
    "MergeReport",
    "MissingObject",
    "Named",
    "NotFound",
    "ObjectRef",
    "ObjectStore",
    "OutOfRetention",
    "PkViolation",
    "Repository",
    "RowId",
    "Schema",
    "SchemaMismatch",
    "SignedRow",
    "SnapshotRef",
    "TableVCError",
    "UnknownSnapshot",
    "UnknownTable",
    "UserError",
    "WriteConflict",
    "compute_delta",
    "diff_aggregate",
    "format_ref",
    "parse_ref",
    "scan_delta",
    "snapshot_diff",
]
