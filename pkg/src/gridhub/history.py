"""Append-only, hash-chained version history for one table.

Each commit is one line in ``<table>.log``: the canonical encoding of the
commit record (see :mod:`gridhub.encoding` for the key order).  The chain
links are:

* ``version``      strictly sequential from 1;
* ``parent_hash``  the predecessor's ``commit_hash`` (all-zero for v1);
* ``grid_hash``    SHA-256 of the canonical grid encoding;
* ``commit_hash``  SHA-256 over parent_hash, version, author, source,
                   timestamp_ms and the full grid (canonically framed), so
                   every stored byte of a record is covered by some check.

A record is durable once its newline hits the log; an unterminated final
line is treated as a torn write.  ``verify_chain`` is strict about that
(reports the record as broken); ``replay`` favors availability and
discards the torn tail with a warning, because the producer re-pushes its
frame anyway.
"""

from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .encoding import (
    COMMIT_SOURCES,
    ZERO_HASH,
    _hex64,
    _int,
    _obj,
    _str,
    canonical_bytes,
    grid_from_wire,
    grid_to_wire,
    parse_text,
    state_hash,
)
from .errors import (
    ChainBroken,
    EmptyHistory,
    MalformedEncoding,
    StorageFailure,
    UnknownVersion,
    ValidationError,
)
from .model import GridState, TableSpec, validate_state


@dataclass(frozen=True)
class Commit:
    """One immutable version of a table's grid."""

    version: int
    parent_hash: str
    grid_hash: str
    commit_hash: str
    author: str
    source: str
    timestamp_ms: int
    grid: GridState


def compute_commit_hash(
    parent_hash: str,
    version: int,
    author: str,
    source: str,
    timestamp_ms: int,
    grid: GridState,
) -> str:
    preimage = canonical_bytes(
        {
            "parent_hash": parent_hash,
            "version": version,
            "author": author,
            "source": source,
            "timestamp_ms": timestamp_ms,
            "grid": grid_to_wire(grid),
        }
    )
    return hashlib.sha256(preimage).hexdigest()


def commit_to_wire(c: Commit) -> dict:
    return {
        "version": c.version,
        "parent_hash": c.parent_hash,
        "grid_hash": c.grid_hash,
        "commit_hash": c.commit_hash,
        "author": c.author,
        "source": c.source,
        "timestamp_ms": c.timestamp_ms,
        "grid": grid_to_wire(c.grid),
    }


def commit_from_wire(v: Any) -> Commit:
    o = _obj(
        v,
        (
            "version",
            "parent_hash",
            "grid_hash",
            "commit_hash",
            "author",
            "source",
            "timestamp_ms",
            "grid",
        ),
    )
    version = _int(o["version"], "version")
    if version < 1:
        raise MalformedEncoding(f"version must be >= 1, got {version}")
    author = _str(o["author"], "author")
    if not author or len(author) > 64:
        raise MalformedEncoding("author must be 1..64 chars")
    source = _str(o["source"], "source")
    if source not in COMMIT_SOURCES:
        raise MalformedEncoding(f"source must be one of {COMMIT_SOURCES}")
    timestamp_ms = _int(o["timestamp_ms"], "timestamp_ms")
    if timestamp_ms < 0:
        raise MalformedEncoding("timestamp_ms must be non-negative")
    return Commit(
        version=version,
        parent_hash=_hex64(o["parent_hash"], "parent_hash"),
        grid_hash=_hex64(o["grid_hash"], "grid_hash"),
        commit_hash=_hex64(o["commit_hash"], "commit_hash"),
        author=author,
        source=source,
        timestamp_ms=timestamp_ms,
        grid=grid_from_wire(o["grid"]),
    )


def encode_commit(c: Commit) -> bytes:
    return canonical_bytes(commit_to_wire(c))


# --- log file framing ------------------------------------------------------

def read_log_records(path: str | Path) -> tuple[list[bytes], bool]:
    """Split a log file into record lines.

    Returns ``(records, terminated)`` where ``terminated`` is False when
    the final record lacks its newline (torn write or corruption).
    """
    blob = Path(path).read_bytes()
    if not blob:
        return [], True
    terminated = blob.endswith(b"\n")
    records = blob.split(b"\n")
    if records and records[-1] == b"":
        records.pop()
    return records, terminated


def check_record(
    k: int, line: bytes, prev: Commit | None, spec: TableSpec
) -> Commit:
    """Verify record ``k`` (1-based) against its predecessor; return the
    decoded commit or raise :class:`ChainBroken`."""
    try:
        commit = commit_from_wire(parse_text(line))
        validate_state(spec, commit.grid)
    except ValidationError as e:
        raise ChainBroken(k, str(e)) from None
    expected_version = 1 if prev is None else prev.version + 1
    if commit.version != expected_version:
        raise ChainBroken(k, f"version {commit.version}, expected {expected_version}")
    expected_parent = ZERO_HASH if prev is None else prev.commit_hash
    if commit.parent_hash != expected_parent:
        raise ChainBroken(k, "parent_hash does not match predecessor")
    if commit.grid_hash != state_hash(commit.grid):
        raise ChainBroken(k, "grid_hash does not match grid contents")
    recomputed = compute_commit_hash(
        commit.parent_hash,
        commit.version,
        commit.author,
        commit.source,
        commit.timestamp_ms,
        commit.grid,
    )
    if commit.commit_hash != recomputed:
        raise ChainBroken(k, "commit_hash does not verify")
    if prev is not None and commit.timestamp_ms < prev.timestamp_ms:
        raise ChainBroken(k, "timestamp decreased along the chain")
    return commit


@dataclass
class VerifyResult:
    ok: bool
    record_count: int
    broken_at: int | None = None
    reason: str | None = None


def verify_chain(
    records: Iterable[bytes], spec: TableSpec, terminated: bool = True
) -> VerifyResult:
    """Check every record's version sequence, parent link, grid hash and
    commit hash.  Result-valued; never raises on bad input."""
    prev: Commit | None = None
    count = 0
    records = list(records)
    for i, line in enumerate(records, start=1):
        if i == len(records) and not terminated:
            return VerifyResult(
                ok=False, record_count=count, broken_at=i, reason="unterminated final record"
            )
        try:
            prev = check_record(i, line, prev, spec)
        except ChainBroken as e:
            return VerifyResult(
                ok=False, record_count=count, broken_at=e.record_index, reason=e.reason
            )
        count += 1
    return VerifyResult(ok=True, record_count=count)


def replay(
    records: Iterable[bytes], spec: TableSpec, terminated: bool = True
) -> tuple[list[Commit], list[str]]:
    """Rebuild the commit chain from log records in file order.

    Raises :class:`ChainBroken` on any verification failure, except a
    torn final record (unterminated line) which is discarded with a
    warning and recovery proceeds with the verified prefix.
    """
    commits: list[Commit] = []
    warnings: list[str] = []
    records = list(records)
    prev: Commit | None = None
    for i, line in enumerate(records, start=1):
        if i == len(records) and not terminated:
            warnings.append(f"discarded torn final record {i}")
            break
        prev = check_record(i, line, prev, spec)
        commits.append(prev)
    return commits, warnings


class TableHistory:
    """The serialized write path and committed snapshots of one table.

    All mutation goes through :meth:`commit` under an internal lock;
    readers get immutable :class:`Commit` values and never block writers.
    """

    def __init__(self, spec: TableSpec, log_path: str | Path):
        self.spec = spec
        self.log_path = Path(log_path)
        self.commits: list[Commit] = []
        self.read_only = False
        self._lock = threading.Lock()
        self._fh = None

    @classmethod
    def open(cls, spec: TableSpec, log_path: str | Path) -> tuple["TableHistory", list[str]]:
        """Load (or start) the history at ``log_path``; replays and
        verifies any existing records."""
        h = cls(spec, log_path)
        warnings: list[str] = []
        if h.log_path.exists():
            records, terminated = read_log_records(h.log_path)
            commits, warnings = replay(records, spec, terminated)
            h.commits = commits
            if warnings:
                # drop the torn bytes so the next append starts a clean line
                with h.log_path.open("wb") as f:
                    for c in commits:
                        f.write(encode_commit(c) + b"\n")
        return h, warnings

    def _file(self):
        if self._fh is None:
            self._fh = self.log_path.open("ab")
        return self._fh

    @property
    def head(self) -> Commit:
        if not self.commits:
            raise EmptyHistory(f"table {self.spec.name!r} has no commits")
        return self.commits[-1]

    def head_or_none(self) -> Commit | None:
        return self.commits[-1] if self.commits else None

    def get(self, version: int) -> Commit:
        if type(version) is not int or not 1 <= version <= len(self.commits):
            raise UnknownVersion(
                f"table {self.spec.name!r} has no version {version!r}"
            )
        return self.commits[version - 1]

    def commit(self, grid: GridState, author: str, source: str, now_ms: int) -> Commit:
        """Append a new commit unless ``grid`` equals the head's grid, in
        which case the existing head is returned unchanged (idempotent
        absorption of re-scanned frames).  Durable before return."""
        validate_state(self.spec, grid)
        if not author or len(author) > 64:
            raise ValidationError(f"author must be 1..64 chars, got {author!r}")
        if source not in COMMIT_SOURCES:
            raise ValidationError(f"source must be one of {COMMIT_SOURCES}")
        gh = state_hash(grid)
        with self._lock:
            head = self.head_or_none()
            if head is not None and head.grid_hash == gh:
                return head
            if self.read_only:
                raise StorageFailure(
                    f"table {self.spec.name!r} is read-only after a storage failure"
                )
            version = 1 if head is None else head.version + 1
            parent = ZERO_HASH if head is None else head.commit_hash
            ts = now_ms if head is None else max(now_ms, head.timestamp_ms)
            commit = Commit(
                version=version,
                parent_hash=parent,
                grid_hash=gh,
                commit_hash=compute_commit_hash(parent, version, author, source, ts, grid),
                author=author,
                source=source,
                timestamp_ms=ts,
                grid=grid,
            )
            try:
                f = self._file()
                f.write(encode_commit(commit) + b"\n")
                f.flush()
            except OSError as e:
                self.read_only = True
                raise StorageFailure(f"cannot append to {self.log_path}: {e}") from e
            self.commits.append(commit)
            return commit

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None
