"""Geo-anchored comments, idempotent likes, deterministic ranking, and
the comment-density heatmap layer.

Comments anchor to a place, either a grid cell or a lat/lon point, and
are stamped with the table version that was current when they were
posted.  Nothing here mutates: storage and event emission live in
:mod:`gridhub.store`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

from .analysis import Layer
from .encoding import _float, _int, _num, _obj, _str, canonical_bytes
from .errors import (
    EmptyText,
    InvalidAnchor,
    MalformedEncoding,
    OutOfExtent,
    TextTooLong,
    ValidationError,
)
from .model import TableSpec, geo_to_cell

MAX_TEXT_CHARS = 500
MAX_AUTHOR_CHARS = 64


@dataclass(frozen=True)
class CellAnchor:
    col: int
    row: int


@dataclass(frozen=True)
class GeoAnchor:
    lat: float
    lon: float


Anchor = CellAnchor | GeoAnchor


@dataclass(frozen=True)
class Comment:
    id: int
    anchor: Anchor
    text: str
    author: str
    created_at_ms: int
    version_at_creation: int


@dataclass(frozen=True)
class Reaction:
    comment_id: int
    author: str


def validate_author(author: Any) -> str:
    if not isinstance(author, str) or not author or len(author) > MAX_AUTHOR_CHARS:
        raise ValidationError(
            f"author must be 1..{MAX_AUTHOR_CHARS} chars, got {author!r}"
        )
    return author


def validate_text(text: Any) -> str:
    """Returns the trimmed text; emptiness and length apply after trimming."""
    if not isinstance(text, str):
        raise EmptyText("comment text must be a string")
    trimmed = text.strip()
    if not trimmed:
        raise EmptyText("comment text is empty")
    if len(trimmed) > MAX_TEXT_CHARS:
        raise TextTooLong(
            f"comment text is {len(trimmed)} chars, limit {MAX_TEXT_CHARS}"
        )
    return trimmed


def validate_anchor(spec: TableSpec, anchor: Anchor) -> Anchor:
    if isinstance(anchor, CellAnchor):
        ok = (
            type(anchor.col) is int and type(anchor.row) is int
            and 0 <= anchor.col < spec.ncols and 0 <= anchor.row < spec.nrows
        )
        if not ok:
            raise InvalidAnchor(
                f"cell anchor ({anchor.col!r}, {anchor.row!r}) outside "
                f"{spec.ncols}x{spec.nrows} grid"
            )
        return anchor
    if isinstance(anchor, GeoAnchor):
        lat, lon = anchor.lat, anchor.lon
        ok = (
            isinstance(lat, (int, float)) and isinstance(lon, (int, float))
            and not isinstance(lat, bool) and not isinstance(lon, bool)
            and math.isfinite(lat) and math.isfinite(lon)
        )
        if not ok:
            raise InvalidAnchor(f"geo anchor ({lat!r}, {lon!r}) is not finite")
        # out-of-extent points are allowed: they are listable but never
        # counted by the heatmap
        return GeoAnchor(float(lat), float(lon))
    raise InvalidAnchor(f"unknown anchor {anchor!r}")


# --- wire form -------------------------------------------------------------

def anchor_to_wire(anchor: Anchor) -> dict:
    if isinstance(anchor, CellAnchor):
        return {"col": anchor.col, "row": anchor.row}
    return {"lat": _num(anchor.lat), "lon": _num(anchor.lon)}


def anchor_from_wire(v: Any) -> Anchor:
    if not isinstance(v, dict):
        raise MalformedEncoding("anchor must be an object")
    if set(v) == {"col", "row"}:
        return CellAnchor(_int(v["col"], "col"), _int(v["row"], "row"))
    if set(v) == {"lat", "lon"}:
        return GeoAnchor(_float(v["lat"], "lat"), _float(v["lon"], "lon"))
    raise MalformedEncoding("anchor must have keys {col,row} or {lat,lon}")


def comment_to_wire(c: Comment) -> dict:
    return {
        "id": c.id,
        "anchor": anchor_to_wire(c.anchor),
        "text": c.text,
        "author": c.author,
        "created_at_ms": c.created_at_ms,
        "version_at_creation": c.version_at_creation,
    }


def comment_from_wire(v: Any) -> Comment:
    o = _obj(v, ("id", "anchor", "text", "author", "created_at_ms", "version_at_creation"))
    cid = _int(o["id"], "id")
    created = _int(o["created_at_ms"], "created_at_ms")
    version = _int(o["version_at_creation"], "version_at_creation")
    if cid < 1 or created < 0 or version < 1:
        raise MalformedEncoding("comment id/timestamps out of range")
    return Comment(
        id=cid,
        anchor=anchor_from_wire(o["anchor"]),
        text=_str(o["text"], "text"),
        author=_str(o["author"], "author"),
        created_at_ms=created,
        version_at_creation=version,
    )


def encode_comment(c: Comment) -> bytes:
    return canonical_bytes(comment_to_wire(c))


def reaction_to_wire(r: Reaction) -> dict:
    return {"comment_id": r.comment_id, "author": r.author}


def reaction_from_wire(v: Any) -> Reaction:
    o = _obj(v, ("comment_id", "author"))
    cid = _int(o["comment_id"], "comment_id")
    if cid < 1:
        raise MalformedEncoding("comment_id must be >= 1")
    return Reaction(comment_id=cid, author=_str(o["author"], "author"))


# --- aggregation -----------------------------------------------------------

def top_comments(
    comments: list[Comment], like_count: Callable[[int], int], k: int
) -> list[tuple[Comment, int]]:
    """The k most liked comments: like count descending, then creation
    time ascending, then id ascending.  Total order, so the result is
    identical no matter how comments and likes arrived."""
    if type(k) is not int or k < 0:
        raise ValidationError(f"k must be a non-negative integer, got {k!r}")
    ranked = sorted(
        ((c, like_count(c.id)) for c in comments),
        key=lambda pair: (-pair[1], pair[0].created_at_ms, pair[0].id),
    )
    return ranked[:k]


def comment_heatmap(
    comments: list[Comment], spec: TableSpec, head_version: int
) -> Layer:
    """Per-cell comment counts.  Cell anchors count directly; geo anchors
    are mapped through the table's geo frame, and points outside the
    extent are left out rather than snapped to an edge."""
    counts = [0.0] * spec.cell_count
    for c in comments:
        if isinstance(c.anchor, CellAnchor):
            col, row = c.anchor.col, c.anchor.row
        else:
            try:
                col, row = geo_to_cell(spec, c.anchor.lat, c.anchor.lon)
            except OutOfExtent:
                continue
        counts[row * spec.ncols + col] += 1.0
    return Layer(
        "comment_heatmap", "scalar_grid", tuple(counts), head_version, "feedback"
    )
