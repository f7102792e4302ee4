"""HTTP front end for a table registry.

Thread-per-connection server built on the standard library.  All request
and response bodies are canonical JSON.  Response object key orders:

    table summary   {"name", "head_version", "spec"}
    grid write      {"commit", "created"}
    reaction        {"comment_id", "like_count"}
    ranked comment  {"comment", "like_count"}
    error           {"error", "message"} plus "head" on version conflicts

Routes:

    GET  /api/tables                          list table summaries
    POST /api/tables                          create table (body: table spec)
    GET  /api/tables/{t}/head                 head commit, ETag: "<version>"
    POST /api/tables/{t}/grid                 full grid or edit list
    GET  /api/tables/{t}/commits/{v}          one commit
    GET  /api/tables/{t}/commits?from=&to=    inclusive range, bounded
    GET  /api/tables/{t}/stream?since=        server-sent events
    POST /api/tables/{t}/layers               store derived layer (token)
    GET  /api/tables/{t}/layers/{name}        fetch derived layer
    POST /api/tables/{t}/comments             create comment
    POST /api/tables/{t}/comments/{id}/reactions   like (idempotent)
    GET  /api/tables/{t}/comments?top=k       ranked comments
    GET  /api/tables/{t}/comments/heatmap     per-cell comment counts

The grid write body is {"author", "source"?, "base_version"?, "grid"} or
{"author", "source"?, "base_version", "edits"}.  Full grids without
base_version are last-writer-wins; everything else is check-and-set
against the head version and conflicts return 409 with the current head
embedded so the client can rebase.

The event stream replays from seq since+1, or opens with a snapshot
event when since is absent.  Heartbeat comment lines keep idle
connections alive; a subscriber that falls more than the queue bound
behind is dropped and must reconnect with since.
"""

from __future__ import annotations

import hmac
import logging
import queue
import re
import socket
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlsplit

from .analysis import layer_from_wire, layer_to_wire
from .encoding import (
    canonical_bytes,
    edits_from_wire,
    grid_from_wire,
    parse_text,
    spec_from_wire,
    spec_to_wire,
    _obj,
    _str,
)
from .errors import BadToken, Conflict, GridHubError, ValidationError
from .feedback import anchor_from_wire, comment_to_wire
from .history import commit_to_wire
from .store import TableRegistry, event_to_wire

log = logging.getLogger(__name__)

MAX_BODY_BYTES = 16 * 1024 * 1024
DEFAULT_HEARTBEAT_S = 15.0

_NAME = r"([a-z0-9_-]{1,64})"
_ROUTES = [
    ("GET", re.compile(r"^/api/tables$"), "list_tables"),
    ("POST", re.compile(r"^/api/tables$"), "create_table"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/head$"), "get_head"),
    ("POST", re.compile(rf"^/api/tables/{_NAME}/grid$"), "post_grid"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/commits/([0-9]+)$"), "get_commit"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/commits$"), "get_commit_range"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/stream$"), "stream"),
    ("POST", re.compile(rf"^/api/tables/{_NAME}/layers$"), "post_layer"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/layers/{_NAME}$"), "get_layer"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/comments/heatmap$"), "get_heatmap"),
    ("POST", re.compile(rf"^/api/tables/{_NAME}/comments$"), "post_comment"),
    ("GET", re.compile(rf"^/api/tables/{_NAME}/comments$"), "get_comments"),
    (
        "POST",
        re.compile(rf"^/api/tables/{_NAME}/comments/([0-9]+)/reactions$"),
        "post_reaction",
    ),
]


class _HTTPServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True
    app: "GridHubServer"

    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self._conns: set = set()
        self._conns_lock = threading.Lock()

    def track(self, conn) -> None:
        with self._conns_lock:
            self._conns.add(conn)

    def untrack(self, conn) -> None:
        with self._conns_lock:
            self._conns.discard(conn)

    def sever_connections(self) -> None:
        # keep-alive handler threads block reading the next request and would
        # outlive shutdown(); closing their sockets unblocks and ends them
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                conn.close()
            except OSError:
                pass


class GridHubServer:
    """Binds a registry to a listening socket.

    Port 0 picks a free port; the bound address is available as .url
    once constructed.  start() serves in a daemon thread, serve_forever()
    serves in the calling thread.  close() stops accepting, wakes
    streaming responses, and closes the registry.
    """

    def __init__(
        self,
        registry: TableRegistry,
        host: str = "127.0.0.1",
        port: int = 0,
        worker_token: str | None = None,
        heartbeat_s: float = DEFAULT_HEARTBEAT_S,
    ):
        self.registry = registry
        self.worker_token = worker_token
        self.heartbeat_s = heartbeat_s
        self.closing = threading.Event()
        self._loop_entered = threading.Event()
        self.httpd = _HTTPServer((host, port), _Handler)
        self.httpd.app = self
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> None:
        self._thread = threading.Thread(
            target=self.serve_forever, name="gridhub-http", daemon=True
        )
        self._thread.start()

    def serve_forever(self) -> None:
        self._loop_entered.set()
        try:
            # short poll so shutdown() returns promptly
            self.httpd.serve_forever(poll_interval=0.05)
        except (OSError, ValueError):
            # close() racing the loop entry closes the socket under us
            if not self.closing.is_set():
                raise

    def close(self) -> None:
        self.closing.set()
        if self._loop_entered.is_set():
            # shutdown() blocks until the serve loop acknowledges, so it
            # must not be called when the loop never ran
            self.httpd.shutdown()
        self.httpd.sever_connections()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self.registry.close()


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    # Responses go out as a headers write then a body write; without
    # TCP_NODELAY the second segment waits out the client's delayed ACK
    # (about 40 ms per request).  Also keeps event frames prompt.
    disable_nagle_algorithm = True
    server: _HTTPServer

    def setup(self) -> None:
        super().setup()
        self.server.track(self.connection)

    def finish(self) -> None:
        self.server.untrack(self.connection)
        super().finish()

    @property
    def app(self) -> GridHubServer:
        return self.server.app

    def log_message(self, fmt: str, *args) -> None:
        log.debug("%s %s", self.address_string(), fmt % args)

    # --- plumbing ---------------------------------------------------------

    def _send(self, status: int, body: bytes, headers: list[tuple[str, str]] = ()) -> None:
        self._drain_request_body()
        self.send_response(status)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Expose-Headers", "ETag")
        for name, value in headers:
            self.send_header(name, value)
        if status == 304:
            self.end_headers()
            return
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _send_obj(self, status: int, obj, headers: list[tuple[str, str]] = ()) -> None:
        self._send(status, canonical_bytes(obj) + b"\n", headers)

    def _send_error_obj(self, err: GridHubError) -> None:
        body = {"error": err.code, "message": str(err)}
        if isinstance(err, Conflict) and err.head is not None:
            body["head"] = commit_to_wire(err.head)
        self._send_obj(err.http_status, body)

    def _read_body(self):
        length = self.headers.get("Content-Length")
        if length is None or not length.isdigit():
            raise ValidationError("request body with Content-Length required")
        n = int(length)
        if n > MAX_BODY_BYTES:
            raise ValidationError(f"body exceeds {MAX_BODY_BYTES} bytes")
        raw = self.rfile.read(n)
        self._body_consumed = True
        return parse_text(raw)

    def _drain_request_body(self) -> None:
        # A handler may answer before reading its request body (bad
        # token, unknown table).  Unread body bytes would be parsed as
        # the next request on this keep-alive connection, so consume
        # them, or drop the connection when that would be expensive.
        if getattr(self, "_body_consumed", True):
            return
        self._body_consumed = True
        length = self.headers.get("Content-Length")
        n = int(length) if length and length.isdigit() else 0
        if n <= 0 or n > MAX_BODY_BYTES:
            self.close_connection = True
            return
        try:
            self.rfile.read(n)
        except OSError:
            self.close_connection = True

    def _query(self) -> dict[str, str]:
        q = parse_qs(urlsplit(self.path).query, keep_blank_values=True)
        return {k: v[-1] for k, v in q.items()}

    @staticmethod
    def _qint(params: dict[str, str], key: str) -> int:
        raw = params.get(key)
        if raw is None or not re.fullmatch(r"-?[0-9]+", raw):
            raise ValidationError(f"query parameter {key!r} must be an integer")
        return int(raw)

    def _dispatch(self, method: str) -> None:
        self._body_consumed = method != "POST"
        path = urlsplit(self.path).path
        for verb, pattern, name in _ROUTES:
            m = pattern.match(path)
            if m and verb == method:
                try:
                    getattr(self, "h_" + name)(*m.groups())
                except GridHubError as e:
                    self._send_error_obj(e)
                except (BrokenPipeError, ConnectionResetError):
                    self.close_connection = True
                except Exception:
                    log.exception("unhandled error serving %s %s", method, path)
                    self._send_obj(
                        500, {"error": "internal", "message": "internal server error"}
                    )
                return
        if any(p.match(path) for _, p, _ in _ROUTES):
            self._send_obj(
                405, {"error": "method_not_allowed", "message": f"{method} not allowed"}
            )
            return
        self._send_obj(404, {"error": "unknown_path", "message": f"no route for {path}"})

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_OPTIONS(self) -> None:
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.send_header(
            "Access-Control-Allow-Headers",
            "Content-Type, X-Worker-Token, If-None-Match, Last-Event-ID",
        )
        self.send_header("Access-Control-Max-Age", "86400")
        self.send_header("Content-Length", "0")
        self.end_headers()

    # --- tables -----------------------------------------------------------

    def h_list_tables(self) -> None:
        self._send_obj(200, self.app.registry.list_summaries())

    def h_create_table(self) -> None:
        spec = spec_from_wire(self._read_body())
        store = self.app.registry.create(spec)
        summary = {
            "name": spec.name,
            "head_version": store.head().version,
            "spec": spec_to_wire(spec),
        }
        self._send_obj(201, summary)

    # --- grid history -----------------------------------------------------

    def h_get_head(self, table: str) -> None:
        store = self.app.registry.get(table)
        head = store.head()
        etag = f'"{head.version}"'
        inm = self.headers.get("If-None-Match")
        if inm is not None:
            candidates = [t.strip() for t in inm.split(",")]
            if "*" in candidates or etag in candidates:
                self._send(304, b"", [("ETag", etag)])
                return
        self._send_obj(200, commit_to_wire(head), [("ETag", etag)])

    def h_post_grid(self, table: str) -> None:
        store = self.app.registry.get(table)
        o = _obj(
            self._read_body(),
            required=("author",),
            optional=("source", "base_version", "grid", "edits"),
        )
        author = _str(o["author"], "author")
        base = o.get("base_version")
        if ("grid" in o) == ("edits" in o):
            raise ValidationError("body must carry exactly one of grid or edits")
        if "grid" in o:
            source = o.get("source", "table")
            grid = grid_from_wire(o["grid"])
            commit, created = store.post_full_grid(grid, author, source, base)
        else:
            source = o.get("source", "ui")
            if base is None:
                raise ValidationError("edit lists require base_version")
            edits = edits_from_wire(o["edits"])
            commit, created = store.post_edits(edits, author, source, base)
        self._send_obj(200, {"commit": commit_to_wire(commit), "created": created})

    def h_get_commit(self, table: str, version: str) -> None:
        store = self.app.registry.get(table)
        self._send_obj(200, commit_to_wire(store.get_commit(int(version))))

    def h_get_commit_range(self, table: str) -> None:
        store = self.app.registry.get(table)
        params = self._query()
        frm = self._qint(params, "from")
        to = self._qint(params, "to")
        commits = store.get_commit_range(frm, to)
        self._send_obj(200, [commit_to_wire(c) for c in commits])

    # --- event stream -----------------------------------------------------

    def h_stream(self, table: str) -> None:
        store = self.app.registry.get(table)
        params = self._query()
        since: int | None = None
        if "since" in params:
            since = self._qint(params, "since")
        else:
            last_id = self.headers.get("Last-Event-ID")
            if last_id is not None and re.fullmatch(r"[0-9]+", last_id):
                since = int(last_id)
        subscription = store.subscribe(since)
        try:
            self.send_response(200)
            self.send_header("Access-Control-Allow-Origin", "*")
            self.send_header("Content-Type", "text/event-stream; charset=utf-8")
            self.send_header("Cache-Control", "no-store")
            # one chunk per frame, so buffered readers get whole frames
            # promptly instead of blocking on a fixed-size read
            self.send_header("Transfer-Encoding", "chunked")
            self.send_header("Connection", "close")
            self.end_headers()
            self.close_connection = True
            for ev in subscription.backlog:
                self._write_sse(ev)
            heartbeat = self.app.heartbeat_s
            while not self.app.closing.is_set():
                if subscription.dead:
                    break
                try:
                    ev = subscription.queue.get(timeout=heartbeat)
                except queue.Empty:
                    self._write_chunk(b": hb\n\n")
                    continue
                self._write_sse(ev)
            self._write_chunk(b"")
        except (BrokenPipeError, ConnectionResetError, OSError):
            pass
        finally:
            store.unsubscribe(subscription)
            self.close_connection = True

    def _write_chunk(self, data: bytes) -> None:
        self.wfile.write(b"%x\r\n%s\r\n" % (len(data), data))
        self.wfile.flush()

    def _write_sse(self, ev) -> None:
        data = canonical_bytes(event_to_wire(ev))
        frame = b"id: %d\nevent: %s\ndata: %s\n\n" % (
            ev.seq,
            ev.kind.encode("ascii"),
            data,
        )
        self._write_chunk(frame)

    # --- layers -----------------------------------------------------------

    def h_post_layer(self, table: str) -> None:
        token = self.app.worker_token
        presented = self.headers.get("X-Worker-Token", "")
        if not token:
            raise BadToken("no worker token is configured")
        if not hmac.compare_digest(presented.encode(), token.encode()):
            raise BadToken("bad worker token")
        store = self.app.registry.get(table)
        layer = layer_from_wire(self._read_body())
        stored = store.put_layer(layer)
        self._send_obj(200, layer_to_wire(stored))

    def h_get_layer(self, table: str, name: str) -> None:
        store = self.app.registry.get(table)
        self._send_obj(200, layer_to_wire(store.get_layer(name)))

    # --- comments ---------------------------------------------------------

    def h_post_comment(self, table: str) -> None:
        store = self.app.registry.get(table)
        o = _obj(self._read_body(), required=("anchor", "text", "author"))
        anchor = anchor_from_wire(o["anchor"])
        comment = store.add_comment(anchor, o["text"], o["author"])
        self._send_obj(201, comment_to_wire(comment))

    def h_post_reaction(self, table: str, comment_id: str) -> None:
        store = self.app.registry.get(table)
        o = _obj(self._read_body(), required=("author",))
        count, _first = store.react(int(comment_id), o["author"])
        self._send_obj(200, {"comment_id": int(comment_id), "like_count": count})

    def h_get_comments(self, table: str) -> None:
        store = self.app.registry.get(table)
        params = self._query()
        k = self._qint(params, "top") if "top" in params else None
        ranked = store.top_comments(k)
        body = [
            {"comment": comment_to_wire(c), "like_count": n} for c, n in ranked
        ]
        self._send_obj(200, body)

    def h_get_heatmap(self, table: str) -> None:
        store = self.app.registry.get(table)
        self._send_obj(200, layer_to_wire(store.heatmap()))
