"""Server-side table state: specs, commit history, comments, reactions,
layers, and the per-table event log that drives live streams.

Each table owns four files under the data directory:

    <name>.spec          one canonical TableSpec line
    <name>.log           hash-chained commit records
    <name>.comments.log  comment and reaction records, tagged by kind
    <name>.events.log    every emitted Event, the resume source for
                         since-based stream subscriptions

Every mutation appends to its domain log first and to the event log
second, both under the table's single writer lock.  A crash can
therefore lose at most trailing event records, never invent them; on
startup the event log is reconciled by appending deterministic events
for any domain records that lack one.

Event payloads (canonical key orders):
    commit    {"commit": <commit>, "diff": <diff vs previous version>}
    comment   <comment>
    reaction  <reaction>
    layer     <layer>
The stream-only snapshot event (never stored) reuses the commit payload
shape with an empty diff.
"""

from __future__ import annotations

import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from .analysis import Layer, check_layer_shape, layer_from_wire, layer_to_wire
from .encoding import (
    canonical_bytes,
    decode_spec,
    encode_spec,
    diff_to_wire,
    parse_text,
    _int,
    _obj,
    _str,
)
from .errors import (
    ChainBroken,
    Conflict,
    InvalidSince,
    MalformedEncoding,
    StaleLayer,
    StorageFailure,
    UnknownComment,
    UnknownLayer,
    UnknownTable,
    UnknownVersion,
    ValidationError,
)
from .feedback import (
    Anchor,
    Comment,
    Reaction,
    comment_from_wire,
    comment_heatmap,
    comment_to_wire,
    reaction_from_wire,
    reaction_to_wire,
    top_comments,
    validate_anchor,
    validate_author,
    validate_text,
)
from .history import (
    Commit,
    TableHistory,
    commit_to_wire,
    encode_commit,
    read_log_records,
)
from .model import (
    NAME_RE,
    CellEdit,
    GridState,
    TableSpec,
    apply_edits,
    diff,
    new_grid,
)

EVENT_KINDS = ("commit", "comment", "reaction", "layer")
SUB_QUEUE_LIMIT = 4096
MAX_COMMIT_RANGE = 500


def now_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    payload: Any  # wire-shaped values, ready for canonical_bytes


def event_to_wire(ev: Event) -> dict:
    return {"seq": ev.seq, "kind": ev.kind, "payload": ev.payload}


def event_from_wire(v: Any, stored: bool = True) -> Event:
    o = _obj(v, ("seq", "kind", "payload"))
    seq = _int(o["seq"], "seq")
    kind = _str(o["kind"], "kind")
    if seq < 1:
        raise MalformedEncoding("seq must be >= 1")
    allowed = EVENT_KINDS if stored else EVENT_KINDS + ("snapshot",)
    if kind not in allowed:
        raise MalformedEncoding(f"kind must be one of {allowed}")
    return Event(seq=seq, kind=kind, payload=o["payload"])


def encode_event(ev: Event) -> bytes:
    return canonical_bytes(event_to_wire(ev))


class _Subscriber:
    __slots__ = ("queue", "dead")

    def __init__(self):
        self.queue: queue.Queue = queue.Queue(SUB_QUEUE_LIMIT)
        self.dead = False


@dataclass
class Subscription:
    """A live feed handed to one stream connection: the backlog to send
    first, then events arriving on the queue.  A subscriber that falls
    more than SUB_QUEUE_LIMIT events behind is marked dead and must
    reconnect with ``since`` to resume."""

    backlog: list[Event]
    sub: _Subscriber = field(repr=False)

    @property
    def queue(self) -> queue.Queue:
        return self.sub.queue

    @property
    def dead(self) -> bool:
        return self.sub.dead


def _read_tagged_log(path: Path) -> tuple[list[tuple[str, Any]], list[str]]:
    """Reads a comments log: returns (kind, wire-object) pairs and
    recovery warnings.  A torn final line is discarded; interior damage
    raises."""
    if not path.exists():
        return [], []
    records, terminated = read_log_records(path)
    out: list[tuple[str, Any]] = []
    warnings: list[str] = []
    for i, line in enumerate(records, start=1):
        if i == len(records) and not terminated:
            warnings.append(f"{path.name}: discarded torn final record {i}")
            break
        o = _obj(parse_text(line), ("kind",), ("comment", "reaction"))
        kind = _str(o["kind"], "kind")
        if kind == "comment" and "comment" in o:
            out.append(("comment", comment_from_wire(o["comment"])))
        elif kind == "reaction" and "reaction" in o:
            out.append(("reaction", reaction_from_wire(o["reaction"])))
        else:
            raise MalformedEncoding(f"{path.name}: record {i} has kind/body mismatch")
    return out, warnings


def _read_event_log(path: Path) -> tuple[list[Event], list[str]]:
    if not path.exists():
        return [], []
    records, terminated = read_log_records(path)
    events: list[Event] = []
    warnings: list[str] = []
    for i, line in enumerate(records, start=1):
        if i == len(records) and not terminated:
            warnings.append(f"{path.name}: discarded torn final record {i}")
            break
        ev = event_from_wire(parse_text(line))
        if ev.seq != len(events) + 1:
            raise MalformedEncoding(
                f"{path.name}: record {i} has seq {ev.seq}, expected {len(events) + 1}"
            )
        events.append(ev)
    return events, warnings


class TableStore:
    """All state and the single writer funnel for one table."""

    def __init__(self, spec: TableSpec, data_dir: Path, clock: Callable[[], int]):
        self.spec = spec
        self.data_dir = data_dir
        self.clock = clock
        self.history: TableHistory = TableHistory(spec, data_dir / f"{spec.name}.log")
        self.comments: list[Comment] = []
        self.reactions: dict[int, set[str]] = {}
        self.reaction_order: list[Reaction] = []
        self.layers: dict[str, Layer] = {}
        self.events: list[Event] = []
        self._lock = threading.Lock()
        self._subs: list[_Subscriber] = []
        self._events_fh = None

    # --- startup ----------------------------------------------------------

    @property
    def comments_path(self) -> Path:
        return self.data_dir / f"{self.spec.name}.comments.log"

    @property
    def events_path(self) -> Path:
        return self.data_dir / f"{self.spec.name}.events.log"

    @classmethod
    def open(cls, spec: TableSpec, data_dir: Path, clock: Callable[[], int]) -> tuple["TableStore", list[str]]:
        store = cls(spec, data_dir, clock)
        warnings = store._load()
        return store, warnings

    def _load(self) -> list[str]:
        self.history, warnings = TableHistory.open(self.spec, self.history.log_path)
        tagged, w2 = _read_tagged_log(self.comments_path)
        warnings += w2
        if w2:
            self._rewrite_comments_log(tagged)
        for kind, obj in tagged:
            if kind == "comment":
                if obj.id != len(self.comments) + 1:
                    raise MalformedEncoding(
                        f"{self.comments_path.name}: comment ids not dense at {obj.id}"
                    )
                self.comments.append(obj)
            else:
                if not 1 <= obj.comment_id <= len(self.comments):
                    raise MalformedEncoding(
                        f"{self.comments_path.name}: reaction for unknown comment "
                        f"{obj.comment_id}"
                    )
                authors = self.reactions.setdefault(obj.comment_id, set())
                if obj.author not in authors:
                    authors.add(obj.author)
                    self.reaction_order.append(obj)
        events_log_existed = self.events_path.exists()
        self.events, w3 = _read_event_log(self.events_path)
        warnings += w3
        if w3:
            self._rewrite_events_log()
        if self.history.head_or_none() is None:
            # crash between spec write and genesis, or a brand new table
            self._commit_locked(new_grid(self.spec), "system", "table")
        recovered = self._reconcile_events()
        if events_log_existed:
            # a log that exists but lags the domain records points at a torn
            # shutdown; a wholly absent one is a cold rebuild (fresh import)
            warnings += recovered
        self._rebuild_layers()
        return warnings

    def _rewrite_comments_log(self, tagged: list[tuple[str, Any]]) -> None:
        with self.comments_path.open("wb") as f:
            for kind, obj in tagged:
                f.write(self._comment_record(kind, obj) + b"\n")

    def _rewrite_events_log(self) -> None:
        with self.events_path.open("wb") as f:
            for ev in self.events:
                f.write(encode_event(ev) + b"\n")
        self._events_fh = None

    def _reconcile_events(self) -> list[str]:
        """Append events for domain records the event log is missing.
        The write order (domain first, event second) means the event log
        can only ever lag, normally by at most one record."""
        have_commits = set()
        have_comments = set()
        have_reactions = set()
        for ev in self.events:
            if ev.kind == "commit":
                have_commits.add(ev.payload["commit"]["version"])
            elif ev.kind == "comment":
                have_comments.add(ev.payload["id"])
            elif ev.kind == "reaction":
                have_reactions.add((ev.payload["comment_id"], ev.payload["author"]))
        warnings = []
        for c in self.history.commits:
            if c.version not in have_commits:
                self._emit("commit", self._commit_payload(c))
                warnings.append(f"recovered missing commit event for version {c.version}")
        for cm in self.comments:
            if cm.id not in have_comments:
                self._emit("comment", comment_to_wire(cm))
                warnings.append(f"recovered missing comment event for id {cm.id}")
        for r in self.reaction_order:
            if (r.comment_id, r.author) not in have_reactions:
                self._emit("reaction", reaction_to_wire(r))
                warnings.append(
                    f"recovered missing reaction event for comment {r.comment_id}"
                )
        return warnings

    def _rebuild_layers(self) -> None:
        for ev in self.events:
            if ev.kind != "layer":
                continue
            layer = layer_from_wire(ev.payload)
            held = self.layers.get(layer.name)
            if held is None or layer.produced_from_version >= held.produced_from_version:
                self.layers[layer.name] = layer

    # --- event plumbing ---------------------------------------------------

    def _commit_payload(self, c: Commit) -> dict:
        if c.version == 1:
            prev = new_grid(self.spec)
        else:
            prev = self.history.get(c.version - 1).grid
        return {"commit": commit_to_wire(c), "diff": diff_to_wire(diff(prev, c.grid))}

    def _emit(self, kind: str, payload: Any) -> Event:
        ev = Event(len(self.events) + 1, kind, payload)
        try:
            if self._events_fh is None:
                self._events_fh = self.events_path.open("ab")
            self._events_fh.write(encode_event(ev) + b"\n")
            self._events_fh.flush()
        except OSError as e:
            raise StorageFailure(f"cannot append event: {e}") from e
        self.events.append(ev)
        dead = [s for s in self._subs if s.dead or not self._offer(s, ev)]
        for s in dead:
            s.dead = True
            self._subs.remove(s)
        return ev

    @staticmethod
    def _offer(sub: _Subscriber, ev: Event) -> bool:
        try:
            sub.queue.put_nowait(ev)
            return True
        except queue.Full:
            return False

    def subscribe(self, since: int | None = None) -> Subscription:
        with self._lock:
            cur = len(self.events)
            if since is None:
                head = self.history.head
                backlog = [
                    Event(cur, "snapshot", {"commit": commit_to_wire(head), "diff": []})
                ]
            else:
                if type(since) is not int or since < 0 or since > cur:
                    raise InvalidSince(
                        f"since must be in [0, {cur}], got {since!r}"
                    )
                backlog = list(self.events[since:cur])
            sub = _Subscriber()
            self._subs.append(sub)
            return Subscription(backlog=backlog, sub=sub)

    def unsubscribe(self, subscription: Subscription) -> None:
        with self._lock:
            subscription.sub.dead = True
            if subscription.sub in self._subs:
                self._subs.remove(subscription.sub)

    # --- grid writes ------------------------------------------------------

    def post_full_grid(
        self, grid: GridState, author: str, source: str, base_version: int | None = None
    ) -> tuple[Commit, bool]:
        """Full-frame write.  Without base_version this is the scanner
        path: last writer wins.  With base_version it is optimistic
        concurrency like an edit list."""
        with self._lock:
            self._check_base(base_version)
            return self._commit_locked(grid, author, source)

    def post_edits(
        self, edits: list[CellEdit], author: str, source: str, base_version: int
    ) -> tuple[Commit, bool]:
        with self._lock:
            if base_version is None:
                raise ValidationError("edit lists require base_version")
            self._check_base(base_version)
            grid = apply_edits(self.spec, self.history.head.grid, edits)
            return self._commit_locked(grid, author, source)

    def _check_base(self, base_version: int | None) -> None:
        if base_version is None:
            return
        head = self.history.head
        if type(base_version) is not int:
            raise ValidationError(f"base_version must be an integer, got {base_version!r}")
        if base_version != head.version:
            raise Conflict(
                f"base_version {base_version} is stale, head is {head.version}",
                head=head,
            )

    def _commit_locked(self, grid: GridState, author: str, source: str) -> tuple[Commit, bool]:
        before = self.history.head_or_none()
        commit = self.history.commit(grid, author, source, self.clock())
        created = before is None or commit.version != before.version
        if created:
            self._emit("commit", self._commit_payload(commit))
        return commit, created

    # --- reads ------------------------------------------------------------

    def head(self) -> Commit:
        return self.history.head

    def get_commit(self, version: int) -> Commit:
        return self.history.get(version)

    def get_commit_range(self, frm: int, to: int) -> list[Commit]:
        if type(frm) is not int or type(to) is not int or frm < 1 or to < frm:
            raise ValidationError(f"need 1 <= from <= to, got from={frm!r} to={to!r}")
        if to - frm + 1 > MAX_COMMIT_RANGE:
            raise ValidationError(
                f"range of {to - frm + 1} exceeds {MAX_COMMIT_RANGE} commits per request"
            )
        head = self.history.head
        if to > head.version:
            raise UnknownVersion(f"table {self.spec.name!r} has no version {to}")
        return [self.history.get(v) for v in range(frm, to + 1)]

    # --- comments and reactions -------------------------------------------

    @staticmethod
    def _comment_record(kind: str, obj: Any) -> bytes:
        if kind == "comment":
            return canonical_bytes({"kind": "comment", "comment": comment_to_wire(obj)})
        return canonical_bytes({"kind": "reaction", "reaction": reaction_to_wire(obj)})

    def _append_comment_record(self, kind: str, obj: Any) -> None:
        try:
            with self.comments_path.open("ab") as f:
                f.write(self._comment_record(kind, obj) + b"\n")
                f.flush()
        except OSError as e:
            raise StorageFailure(f"cannot append comment record: {e}") from e

    def add_comment(self, anchor: Anchor, text: Any, author: Any) -> Comment:
        author = validate_author(author)
        text = validate_text(text)
        anchor = validate_anchor(self.spec, anchor)
        with self._lock:
            comment = Comment(
                id=len(self.comments) + 1,
                anchor=anchor,
                text=text,
                author=author,
                created_at_ms=self.clock(),
                version_at_creation=self.history.head.version,
            )
            self._append_comment_record("comment", comment)
            self.comments.append(comment)
            self._emit("comment", comment_to_wire(comment))
            return comment

    def react(self, comment_id: int, author: Any) -> tuple[int, bool]:
        """Returns (like count, whether this call was the first from this
        author).  Duplicates change nothing and emit nothing."""
        author = validate_author(author)
        with self._lock:
            if type(comment_id) is not int or not 1 <= comment_id <= len(self.comments):
                raise UnknownComment(f"no comment {comment_id!r}")
            authors = self.reactions.setdefault(comment_id, set())
            if author in authors:
                return len(authors), False
            reaction = Reaction(comment_id=comment_id, author=author)
            self._append_comment_record("reaction", reaction)
            authors.add(author)
            self.reaction_order.append(reaction)
            self._emit("reaction", reaction_to_wire(reaction))
            return len(authors), True

    def like_count(self, comment_id: int) -> int:
        return len(self.reactions.get(comment_id, ()))

    def top_comments(self, k: int | None = None) -> list[tuple[Comment, int]]:
        with self._lock:
            if k is None:
                k = len(self.comments)
            return top_comments(list(self.comments), self.like_count, k)

    def heatmap(self) -> Layer:
        with self._lock:
            return comment_heatmap(list(self.comments), self.spec, self.history.head.version)

    # --- layers -----------------------------------------------------------

    def put_layer(self, layer: Layer) -> Layer:
        if not NAME_RE.fullmatch(layer.name):
            raise ValidationError(f"layer name {layer.name!r} is not a valid name")
        check_layer_shape(layer, self.spec)
        with self._lock:
            head_version = self.history.head.version
            if layer.produced_from_version > head_version:
                raise ValidationError(
                    f"layer claims version {layer.produced_from_version}, "
                    f"head is {head_version}"
                )
            held = self.layers.get(layer.name)
            if held is not None and layer.produced_from_version < held.produced_from_version:
                raise StaleLayer(
                    f"layer {layer.name!r} from version {layer.produced_from_version} "
                    f"is older than stored version {held.produced_from_version}"
                )
            self.layers[layer.name] = layer
            self._emit("layer", layer_to_wire(layer))
            return layer

    def get_layer(self, name: str) -> Layer:
        with self._lock:
            if name not in self.layers:
                raise UnknownLayer(f"table {self.spec.name!r} has no layer {name!r}")
            return self.layers[name]

    def list_layers(self) -> list[str]:
        with self._lock:
            return sorted(self.layers)

    # --- export -----------------------------------------------------------

    def export_bytes(self) -> bytes:
        """The spec line followed by every commit record, re-encoded
        canonically; byte-identical across export/import cycles.
        Comments and layers are derived-or-social data and stay local."""
        with self._lock:
            parts = [encode_spec(self.spec) + b"\n"]
            parts += [encode_commit(c) + b"\n" for c in self.history.commits]
            return b"".join(parts)

    def close(self) -> None:
        self.history.close()
        if self._events_fh is not None:
            self._events_fh.close()
            self._events_fh = None


def import_export_bytes(data_dir: Path, data: bytes) -> tuple[str, int]:
    """Installs an exported table into a data directory (files only; the
    registry must be re-opened to serve it).  Returns (name, commit
    count).  Refuses names that already exist."""
    if not data.endswith(b"\n"):
        raise MalformedEncoding("export must end with a newline")
    lines = data.split(b"\n")[:-1]
    if not lines:
        raise MalformedEncoding("export is empty")
    spec = decode_spec(lines[0])
    records = lines[1:]
    if not records:
        raise MalformedEncoding("export has no commits")
    from .history import verify_chain

    res = verify_chain(records, spec, terminated=True)
    if not res.ok:
        raise ChainBroken(res.broken_at, res.reason)
    spec_path = data_dir / f"{spec.name}.spec"
    if spec_path.exists():
        raise Conflict(f"table {spec.name!r} already exists in {data_dir}")
    (data_dir / f"{spec.name}.log").write_bytes(b"".join(r + b"\n" for r in records))
    spec_path.write_bytes(encode_spec(spec) + b"\n")
    return spec.name, len(records)


class TableRegistry:
    """Every table the server knows, keyed by name."""

    def __init__(self, data_dir: str | Path, clock: Callable[[], int] = now_ms):
        self.data_dir = Path(data_dir)
        self.clock = clock
        self.tables: dict[str, TableStore] = {}
        self._lock = threading.Lock()

    def open_existing(self) -> list[str]:
        """Loads every persisted table; returns recovery warnings.
        Raises on unrecoverable damage (broken chains, bad specs)."""
        warnings: list[str] = []
        self.data_dir.mkdir(parents=True, exist_ok=True)
        for spec_path in sorted(self.data_dir.glob("*.spec")):
            spec = decode_spec(spec_path.read_bytes().strip())
            if spec_path.stem != spec.name:
                raise MalformedEncoding(
                    f"{spec_path.name} holds spec for table {spec.name!r}"
                )
            try:
                store, w = TableStore.open(spec, self.data_dir, self.clock)
            except ChainBroken as e:
                e.table = spec.name
                raise
            warnings += [f"{spec.name}: {msg}" for msg in w]
            self.tables[spec.name] = store
        return warnings

    def create(self, spec: TableSpec) -> TableStore:
        with self._lock:
            spec_path = self.data_dir / f"{spec.name}.spec"
            if spec.name in self.tables or spec_path.exists():
                raise Conflict(f"table {spec.name!r} already exists")
            try:
                spec_path.write_bytes(encode_spec(spec) + b"\n")
            except OSError as e:
                raise StorageFailure(f"cannot write spec: {e}") from e
            store, _ = TableStore.open(spec, self.data_dir, self.clock)
            self.tables[spec.name] = store
            return store

    def get(self, name: str) -> TableStore:
        try:
            return self.tables[name]
        except KeyError:
            raise UnknownTable(f"no table {name!r}") from None

    def list_summaries(self) -> list[dict]:
        from .encoding import spec_to_wire

        with self._lock:
            stores = [self.tables[name] for name in sorted(self.tables)]
        return [
            {
                "name": store.spec.name,
                "head_version": store.head().version,
                "spec": spec_to_wire(store.spec),
            }
            for store in stores
        ]

    def close(self) -> None:
        for store in self.tables.values():
            store.close()
        self.tables.clear()
