"""Exception hierarchy.

Every error raised on purpose derives from :class:`TableVCError`.  The CLI maps
``UserError`` subclasses to exit code 1, :class:`MergeConflictFailure` to 2 and
everything else to 3.
"""

from __future__ import annotations


class TableVCError(Exception):
    """Base class for all engine errors."""


class UserError(TableVCError):
    """Caller supplied something invalid; nothing was changed."""


# object store


class ObjectStoreError(TableVCError):
    pass


class UnsortedInput(ObjectStoreError, UserError):
    pass


class EmptyInput(ObjectStoreError, UserError):
    pass


class NotFound(ObjectStoreError, UserError):
    pass


class CorruptObject(ObjectStoreError):
    pass


class IoFailure(ObjectStoreError):
    pass


class MissingObject(ObjectStoreError):
    """A manifest references an object that is no longer on disk."""


# catalog


class DuplicateName(UserError):
    pass


class InvalidSchema(UserError):
    pass


class UnknownTable(UserError):
    pass


class UnknownSnapshot(UserError):
    pass


class DuplicateSnapshotName(UserError):
    pass


class OutOfRetention(UserError):
    pass


class SchemaMismatch(UserError):
    pass


class BaseMismatch(UserError):
    pass


class RefSyntaxError(UserError):
    pass


# transactions


class TransactionError(TableVCError):
    pass


class WriteConflict(TransactionError):
    """Another transaction committed a change to the same key first."""


class PkViolation(TransactionError, UserError):
    pass


class TransactionClosed(TransactionError, UserError):
    pass


# merge


class NegativeCount(TableVCError):
    pass


class MergeConflictFailure(TableVCError):
    """Raised by ``merge(mode=FAIL)`` when at least one true conflict exists.

    The target table is left untouched; ``report`` lists the conflicts.
    """

    def __init__(self, report):
        self.report = report
        super().__init__(
            f"merge aborted: {report.true_conflicts} true conflict(s)"
        )
