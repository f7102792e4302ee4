"""Exception types shared across the package.

Every error that can cross the HTTP boundary carries a stable ``code``
string (used in wire error bodies) and the status it maps to.
"""

from __future__ import annotations


class GridHubError(Exception):
    """Base class for all errors raised by this package."""

    code = "error"
    http_status = 500


# --- validation / domain errors (HTTP 400) ---

class ValidationError(GridHubError):
    code = "invalid"
    http_status = 400


class InvalidSpec(ValidationError):
    code = "invalid_spec"


class IndexOutOfRange(ValidationError):
    code = "index_out_of_range"


class UnknownTypeId(ValidationError):
    code = "unknown_type_id"


class InvalidRotation(ValidationError):
    code = "invalid_rotation"


class IllegalFloorsOverride(ValidationError):
    code = "illegal_floors_override"


class InvalidGrid(ValidationError):
    code = "invalid_grid"


class InvalidEdit(ValidationError):
    code = "invalid_edit"


class LengthMismatch(ValidationError):
    code = "length_mismatch"


class MalformedEncoding(ValidationError):
    code = "malformed_encoding"


class SpecMismatch(ValidationError):
    code = "spec_mismatch"


class OutOfExtent(ValidationError):
    code = "out_of_extent"


class EmptyText(ValidationError):
    code = "empty_text"


class TextTooLong(ValidationError):
    code = "text_too_long"


class InvalidAnchor(ValidationError):
    code = "invalid_anchor"


class InvalidSun(ValidationError):
    code = "invalid_sun"


class InvalidSpeeds(ValidationError):
    code = "invalid_speeds"


class InvalidSince(ValidationError):
    code = "invalid_since"


# --- lookup errors (HTTP 404) ---

class NotFoundError(GridHubError):
    code = "not_found"
    http_status = 404


class UnknownTable(NotFoundError):
    code = "unknown_table"


class UnknownVersion(NotFoundError):
    code = "unknown_version"


class UnknownComment(NotFoundError):
    code = "unknown_comment"


class UnknownLayer(NotFoundError):
    code = "unknown_layer"


class EmptyHistory(NotFoundError):
    # Unreachable in normal operation: table creation commits genesis.
    code = "empty_history"


# --- coordination errors (HTTP 409) ---

class Conflict(GridHubError):
    """Optimistic-concurrency conflict; carries the current head commit."""

    code = "conflict"
    http_status = 409

    def __init__(self, message: str, head=None):
        super().__init__(message)
        self.head = head


class StaleLayer(Conflict):
    code = "stale_layer"

    def __init__(self, message: str):
        super().__init__(message, head=None)


# --- auth (HTTP 401) ---

class BadToken(GridHubError):
    code = "bad_token"
    http_status = 401


# --- storage / integrity ---

class StorageFailure(GridHubError):
    code = "storage_failure"
    http_status = 500


class ChainBroken(GridHubError):
    """History log fails verification at a specific record.

    ``record_index`` is 1-based, matching commit versions in an
    uncorrupted log.
    """

    code = "chain_broken"
    http_status = 500

    def __init__(self, record_index: int, reason: str):
        super().__init__(f"record {record_index}: {reason}")
        self.record_index = record_index
        self.reason = reason
