"""Canonical textual encoding of every object that crosses a process
boundary: grids, commits, comments, reactions, layers, events.

The encoding is UTF-8 JSON restricted so that equal values always produce
byte-identical output:

* object keys appear in a fixed, documented order (listed per type below);
* no insignificant whitespace (``,`` and ``:`` separators only);
* integers in base 10; floats as Python's shortest round-trip ``repr``;
* ``-0.0`` is normalized to ``0.0``; non-finite numbers are rejected;
* metrics maps (the only open-keyed maps) are encoded with sorted keys.

Key orders:
    cell        type_id, rotation[, floors]      (floors only when overridden)
    cell type   id, name, color, category, default_floors
    table spec  name, ncols, nrows, cell_size_m, floor_height_m,
                origin_lat, origin_lon, rotation_deg, registry
    grid        bare array of cells, row-major
    commit      version, parent_hash, grid_hash, commit_hash, author,
                source, timestamp_ms, grid
    diff entry  index, before, after
    comment     id, anchor, text, author, created_at_ms, version_at_creation
    anchor      {col, row} for cell anchors, {lat, lon} for geo anchors
    reaction    comment_id, author
    layer       name, kind, values, produced_from_version, producer
    event       seq, kind, payload

Decoding is strict: unknown or missing keys, wrong value types, malformed
hex digests, or out-of-range enums raise :class:`MalformedEncoding`.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from typing import Any

from .errors import MalformedEncoding, SpecMismatch
from .model import Cell, CellDiff, CellEdit, CellType, GridState, TableSpec, validate_state

HEX64_RE = re.compile(r"^[0-9a-f]{64}$")
ZERO_HASH = "0" * 64
COMMIT_SOURCES = ("table", "ui", "worker", "cli")
LAYER_KINDS = ("scalar_grid", "mask_grid", "metrics")


def canonical_bytes(obj: Any) -> bytes:
    """Serialize an already-ordered plain structure to canonical bytes."""
    return json.dumps(
        obj, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def parse_text(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as e:
            raise MalformedEncoding(f"not valid UTF-8: {e}") from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise MalformedEncoding(f"not well-formed: {e}") from None


# --- strict value readers --------------------------------------------------

def _obj(v: Any, required: tuple[str, ...], optional: tuple[str, ...] = ()) -> dict:
    if not isinstance(v, dict):
        raise MalformedEncoding(f"expected object, got {type(v).__name__}")
    keys = set(v)
    missing = set(required) - keys
    extra = keys - set(required) - set(optional)
    if missing or extra:
        raise MalformedEncoding(
            f"bad keys: missing {sorted(missing)}, unexpected {sorted(extra)}"
        )
    return v


def _int(v: Any, what: str) -> int:
    if type(v) is not int:
        raise MalformedEncoding(f"{what} must be an integer, got {v!r}")
    return v


def _float(v: Any, what: str) -> float:
    if type(v) is bool or not isinstance(v, (int, float)):
        raise MalformedEncoding(f"{what} must be a number, got {v!r}")
    f = float(v)
    if not math.isfinite(f):
        raise MalformedEncoding(f"{what} must be finite")
    return f


def _str(v: Any, what: str) -> str:
    if not isinstance(v, str):
        raise MalformedEncoding(f"{what} must be a string, got {v!r}")
    return v


def _hex64(v: Any, what: str) -> str:
    if not isinstance(v, str) or not HEX64_RE.match(v):
        raise MalformedEncoding(f"{what} must be 64 lowercase hex chars")
    return v


def _num(f: float) -> float:
    # canonical: -0.0 encodes as 0.0
    return 0.0 if f == 0.0 else f


# --- cells and grids -------------------------------------------------------

def cell_to_wire(cell: Cell) -> dict:
    w: dict[str, Any] = {"type_id": cell.type_id, "rotation": cell.rotation}
    if cell.floors is not None:
        w["floors"] = cell.floors
    return w


def cell_from_wire(v: Any) -> Cell:
    o = _obj(v, ("type_id", "rotation"), ("floors",))
    floors = o.get("floors")
    if floors is not None:
        floors = _int(floors, "floors")
    return Cell(
        type_id=_int(o["type_id"], "type_id"),
        rotation=_int(o["rotation"], "rotation"),
        floors=floors,
    )


def grid_to_wire(state: GridState) -> list:
    return [cell_to_wire(c) for c in state.cells]


def grid_from_wire(v: Any) -> GridState:
    if not isinstance(v, list):
        raise MalformedEncoding("grid must be an array of cells")
    return GridState(cells=tuple(cell_from_wire(c) for c in v))


def canonical_encode(state: GridState) -> bytes:
    """Canonical byte encoding of a grid; the hashing preimage and the
    wire/file representation of grid contents."""
    return canonical_bytes(grid_to_wire(state))


def canonical_decode(data: bytes | str, spec: TableSpec) -> GridState:
    state = grid_from_wire(parse_text(data))
    if len(state.cells) != spec.cell_count:
        raise SpecMismatch(
            f"decoded {len(state.cells)} cells, spec wants {spec.cell_count}"
        )
    validate_state(spec, state)
    return state


def state_hash(state: GridState) -> str:
    """SHA-256 of the canonical grid encoding, as lowercase hex."""
    return hashlib.sha256(canonical_encode(state)).hexdigest()


# --- table specs -----------------------------------------------------------

def cell_type_to_wire(ct: CellType) -> dict:
    return {
        "id": ct.id,
        "name": ct.name,
        "color": list(ct.color),
        "category": ct.category,
        "default_floors": ct.default_floors,
    }


def cell_type_from_wire(v: Any) -> CellType:
    o = _obj(v, ("id", "name", "color", "category", "default_floors"))
    color = o["color"]
    if not isinstance(color, list) or len(color) != 3:
        raise MalformedEncoding("color must be a 3-element array")
    return CellType(
        id=_int(o["id"], "id"),
        name=_str(o["name"], "name"),
        color=tuple(_int(c, "color component") for c in color),
        category=_str(o["category"], "category"),
        default_floors=_int(o["default_floors"], "default_floors"),
    )


def spec_to_wire(spec: TableSpec) -> dict:
    return {
        "name": spec.name,
        "ncols": spec.ncols,
        "nrows": spec.nrows,
        "cell_size_m": _num(spec.cell_size_m),
        "floor_height_m": _num(spec.floor_height_m),
        "origin_lat": _num(spec.origin_lat),
        "origin_lon": _num(spec.origin_lon),
        "rotation_deg": _num(spec.rotation_deg),
        "registry": [cell_type_to_wire(ct) for ct in spec.registry],
    }


def spec_from_wire(v: Any) -> TableSpec:
    o = _obj(
        v,
        (
            "name",
            "ncols",
            "nrows",
            "cell_size_m",
            "floor_height_m",
            "origin_lat",
            "origin_lon",
            "rotation_deg",
            "registry",
        ),
    )
    registry = o["registry"]
    if not isinstance(registry, list):
        raise MalformedEncoding("registry must be an array")
    # TableSpec.__post_init__ enforces the domain invariants
    return TableSpec(
        name=_str(o["name"], "name"),
        ncols=_int(o["ncols"], "ncols"),
        nrows=_int(o["nrows"], "nrows"),
        cell_size_m=_float(o["cell_size_m"], "cell_size_m"),
        floor_height_m=_float(o["floor_height_m"], "floor_height_m"),
        origin_lat=_float(o["origin_lat"], "origin_lat"),
        origin_lon=_float(o["origin_lon"], "origin_lon"),
        rotation_deg=_float(o["rotation_deg"], "rotation_deg"),
        registry=tuple(cell_type_from_wire(ct) for ct in registry),
    )


def encode_spec(spec: TableSpec) -> bytes:
    return canonical_bytes(spec_to_wire(spec))


def decode_spec(data: bytes | str) -> TableSpec:
    return spec_from_wire(parse_text(data))


# --- diffs -----------------------------------------------------------------

def diff_to_wire(entries: list[CellDiff]) -> list:
    return [
        {"index": d.index, "before": cell_to_wire(d.before), "after": cell_to_wire(d.after)}
        for d in entries
    ]


def diff_from_wire(v: Any) -> list[CellDiff]:
    if not isinstance(v, list):
        raise MalformedEncoding("diff must be an array")
    out = []
    for entry in v:
        o = _obj(entry, ("index", "before", "after"))
        out.append(
            CellDiff(
                index=_int(o["index"], "index"),
                before=cell_from_wire(o["before"]),
                after=cell_from_wire(o["after"]),
            )
        )
    return out


# --- edits -----------------------------------------------------------------

def edit_to_wire(edit: CellEdit) -> dict:
    return {"index": edit.index, "cell": cell_to_wire(edit.cell)}


def edit_from_wire(v: Any) -> CellEdit:
    o = _obj(v, ("index", "cell"))
    return CellEdit(index=_int(o["index"], "index"), cell=cell_from_wire(o["cell"]))


def edits_from_wire(v: Any) -> list[CellEdit]:
    if not isinstance(v, list):
        raise MalformedEncoding("edits must be an array")
    return [edit_from_wire(entry) for entry in v]
