"""HTTP client for the table server.

Wraps the JSON API in typed calls and exposes the event stream as an
iterator.  Non-2xx responses raise ApiError carrying the server's error
code; a 409 also carries the current head commit so callers can rebase
and retry.
"""

from __future__ import annotations

from typing import Any, Iterator

import requests

from .analysis import Layer, layer_from_wire, layer_to_wire
from .encoding import edit_to_wire, grid_to_wire, parse_text, spec_to_wire
from .feedback import Anchor, Comment, anchor_to_wire, comment_from_wire
from .history import Commit, commit_from_wire
from .model import CellEdit, GridState, TableSpec
from .store import Event, event_from_wire

DEFAULT_TIMEOUT_S = 10.0
# Read timeout while streaming; must exceed the server heartbeat interval
# or idle streams would be dropped between heartbeats.
STREAM_READ_TIMEOUT_S = 75.0


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, head: Commit | None = None):
        super().__init__(f"{status} {code}: {message}")
        self.status = status
        self.code = code
        self.message = message
        self.head = head


class StreamClosed(Exception):
    """The event stream connection ended; reconnect with since to resume."""


def _raise_for_error(resp: requests.Response) -> None:
    if 200 <= resp.status_code < 300 or resp.status_code == 304:
        return
    code, message, head = "unknown", resp.text.strip(), None
    try:
        body = parse_text(resp.content)
        if isinstance(body, dict):
            code = body.get("error", code)
            message = body.get("message", message)
            if "head" in body:
                head = commit_from_wire(body["head"])
    except Exception:
        pass
    raise ApiError(resp.status_code, code, message, head)


class TableClient:
    def __init__(self, base_url: str, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.base_url = base_url.rstrip("/")
        self.timeout_s = timeout_s
        self.session = requests.Session()
        self._streams: set[requests.Response] = set()

    def close(self) -> None:
        # Aborting open streams unblocks any thread inside stream_raw.
        for resp in list(self._streams):
            try:
                resp.close()
            except Exception:
                pass
        self.session.close()

    def __enter__(self) -> "TableClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _url(self, path: str) -> str:
        return f"{self.base_url}{path}"

    def _get(self, path: str, **kw) -> requests.Response:
        resp = self.session.get(self._url(path), timeout=self.timeout_s, **kw)
        _raise_for_error(resp)
        return resp

    def _post(self, path: str, body: Any, headers: dict | None = None) -> requests.Response:
        resp = self.session.post(
            self._url(path), json=body, headers=headers, timeout=self.timeout_s
        )
        _raise_for_error(resp)
        return resp

    # --- tables -----------------------------------------------------------

    def list_tables(self) -> list[dict]:
        return self._get("/api/tables").json()

    def create_table(self, spec: TableSpec) -> dict:
        return self._post("/api/tables", spec_to_wire(spec)).json()

    # --- grid history -----------------------------------------------------

    def head(self, table: str) -> Commit:
        return commit_from_wire(self._get(f"/api/tables/{table}/head").json())

    def head_if_changed(
        self, table: str, etag: str | None
    ) -> tuple[Commit | None, str | None]:
        """Conditional fetch.  Returns (None, etag) when unchanged."""
        headers = {"If-None-Match": etag} if etag is not None else {}
        resp = self._get(f"/api/tables/{table}/head", headers=headers)
        new_etag = resp.headers.get("ETag")
        if resp.status_code == 304:
            return None, new_etag
        return commit_from_wire(resp.json()), new_etag

    def post_grid(
        self,
        table: str,
        grid: GridState,
        author: str,
        source: str | None = None,
        base_version: int | None = None,
    ) -> tuple[Commit, bool]:
        body: dict[str, Any] = {"author": author, "grid": grid_to_wire(grid)}
        if source is not None:
            body["source"] = source
        if base_version is not None:
            body["base_version"] = base_version
        o = self._post(f"/api/tables/{table}/grid", body).json()
        return commit_from_wire(o["commit"]), bool(o["created"])

    def post_edits(
        self,
        table: str,
        edits: list[CellEdit],
        author: str,
        base_version: int,
        source: str | None = None,
    ) -> tuple[Commit, bool]:
        body: dict[str, Any] = {
            "author": author,
            "base_version": base_version,
            "edits": [edit_to_wire(e) for e in edits],
        }
        if source is not None:
            body["source"] = source
        o = self._post(f"/api/tables/{table}/grid", body).json()
        return commit_from_wire(o["commit"]), bool(o["created"])

    def get_commit(self, table: str, version: int) -> Commit:
        return commit_from_wire(self._get(f"/api/tables/{table}/commits/{version}").json())

    def get_commits(self, table: str, frm: int, to: int) -> list[Commit]:
        resp = self._get(f"/api/tables/{table}/commits", params={"from": frm, "to": to})
        return [commit_from_wire(w) for w in resp.json()]

    # --- layers -----------------------------------------------------------

    def put_layer(self, table: str, layer: Layer, token: str) -> Layer:
        resp = self._post(
            f"/api/tables/{table}/layers",
            layer_to_wire(layer),
            headers={"X-Worker-Token": token},
        )
        return layer_from_wire(resp.json())

    def get_layer(self, table: str, name: str) -> Layer:
        return layer_from_wire(self._get(f"/api/tables/{table}/layers/{name}").json())

    # --- comments ---------------------------------------------------------

    def add_comment(self, table: str, anchor: Anchor, text: str, author: str) -> Comment:
        body = {"anchor": anchor_to_wire(anchor), "text": text, "author": author}
        return comment_from_wire(self._post(f"/api/tables/{table}/comments", body).json())

    def like(self, table: str, comment_id: int, author: str) -> int:
        o = self._post(
            f"/api/tables/{table}/comments/{comment_id}/reactions", {"author": author}
        ).json()
        return o["like_count"]

    def top_comments(self, table: str, k: int | None = None) -> list[tuple[Comment, int]]:
        params = {} if k is None else {"top": k}
        resp = self._get(f"/api/tables/{table}/comments", params=params)
        return [(comment_from_wire(o["comment"]), o["like_count"]) for o in resp.json()]

    def heatmap(self, table: str) -> Layer:
        return layer_from_wire(self._get(f"/api/tables/{table}/comments/heatmap").json())

    # --- event stream -----------------------------------------------------

    def stream_raw(self, table: str, since: int | None = None) -> Iterator[Event]:
        """One connection's worth of events; raises StreamClosed when the
        server or network ends it.  Snapshot events appear only when
        since is absent."""
        params = {} if since is None else {"since": since}
        resp = self.session.get(
            self._url(f"/api/tables/{table}/stream"),
            params=params,
            stream=True,
            timeout=(self.timeout_s, STREAM_READ_TIMEOUT_S),
        )
        _raise_for_error(resp)
        self._streams.add(resp)
        try:
            for _ev_id, _kind, data in _sse_frames(_stream_lines(resp)):
                yield event_from_wire(parse_text(data), stored=False)
        except (requests.RequestException, OSError, ValueError) as e:
            raise StreamClosed(str(e)) from None
        finally:
            self._streams.discard(resp)
            resp.close()
        raise StreamClosed("server closed the stream")

    def stream(self, table: str, since: int | None = None) -> Iterator[Event]:
        """Continuous event iterator that reconnects on stream loss and
        resumes from the last delivered seq, deduplicating overlap."""
        last = since
        while True:
            try:
                for ev in self.stream_raw(table, last):
                    if ev.kind != "snapshot" and last is not None and ev.seq <= last:
                        continue
                    yield ev
                    last = ev.seq
            except StreamClosed:
                continue


def _stream_lines(resp) -> Iterator[bytes]:
    """Splits the response into lines as data arrives.  The server sends
    each frame as one transfer chunk, so iter_content yields promptly."""
    buf = b""
    for piece in resp.iter_content(chunk_size=8192):
        buf += piece
        while b"\n" in buf:
            line, buf = buf.split(b"\n", 1)
            yield line.rstrip(b"\r")
    if buf:
        yield buf


def _sse_frames(lines: Iterator[bytes]) -> Iterator[tuple[str | None, str | None, str]]:
    ev_id: str | None = None
    kind: str | None = None
    data: list[str] = []
    for raw in lines:
        line = raw.decode("utf-8")
        if line == "":
            if data:
                yield ev_id, kind, "\n".join(data)
            ev_id, kind, data = None, None, []
            continue
        if line.startswith(":"):
            continue
        field, _, value = line.partition(":")
        if value.startswith(" "):
            value = value[1:]
        if field == "data":
            data.append(value)
        elif field == "event":
            kind = value
        elif field == "id":
            ev_id = value
