"""Domain model for tables and grid states.

A table is described once by an immutable :class:`TableSpec` (dimensions,
cell size, geo anchor, cell-type registry).  The evolving design is a
:class:`GridState`: a dense row-major tuple of :class:`Cell` values.  All
values here are immutable and all operations are pure functions, so they
are safe to share across threads.

Grid coordinates: ``col`` grows eastward, ``row`` grows northward (at
rotation 0).  ``index = row * ncols + col``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

from .errors import (
    IllegalFloorsOverride,
    IndexOutOfRange,
    InvalidGrid,
    InvalidRotation,
    InvalidSpec,
    LengthMismatch,
    OutOfExtent,
    UnknownTypeId,
)

CATEGORIES = ("empty", "building", "road", "park", "water")
ROTATIONS = (0, 90, 180, 270)
NAME_RE = re.compile(r"^[a-z0-9_-]{1,64}$")
MAX_SIDE = 256
MAX_CELLS = 65536
EARTH_RADIUS_M = 6371000.0


@dataclass(frozen=True)
class CellType:
    """One entry in a table's cell-type palette."""

    id: int
    name: str
    color: tuple[int, int, int]
    category: str
    default_floors: int = 0


@dataclass(frozen=True)
class Cell:
    """One grid cell: a type reference, a piece rotation, and an optional
    floors override (``None`` means: use the type's default_floors)."""

    type_id: int
    rotation: int = 0
    floors: int | None = None


@dataclass(frozen=True)
class CellEdit:
    index: int
    cell: Cell


@dataclass(frozen=True)
class CellDiff:
    index: int
    before: Cell
    after: Cell


@dataclass(frozen=True)
class GridState:
    """Dense row-major grid contents; the unit of synchronization."""

    cells: tuple[Cell, ...]

    def __len__(self) -> int:
        return len(self.cells)


def _check_registry(registry: tuple[CellType, ...]) -> None:
    if not registry:
        raise InvalidSpec("registry must not be empty")
    for i, ct in enumerate(registry):
        if type(ct.id) is not int or ct.id != i:
            raise InvalidSpec(f"registry ids must be contiguous from 0, got {ct.id} at position {i}")
        if not isinstance(ct.name, str) or not ct.name or len(ct.name) > 64:
            raise InvalidSpec(f"bad cell type name at id {i}")
        if ct.category not in CATEGORIES:
            raise InvalidSpec(f"unknown category {ct.category!r} at id {i}")
        if (
            len(ct.color) != 3
            or any(type(v) is not int or not 0 <= v <= 255 for v in ct.color)
        ):
            raise InvalidSpec(f"color must be an RGB triple of 0..255 ints at id {i}")
        if type(ct.default_floors) is not int or ct.default_floors < 0:
            raise InvalidSpec(f"default_floors must be a non-negative int at id {i}")
        if ct.category != "building" and ct.default_floors != 0:
            raise InvalidSpec(f"default_floors must be 0 for non-building type id {i}")
    if registry[0].category != "empty" or registry[0].default_floors != 0:
        raise InvalidSpec("type id 0 is reserved for the empty type")


@dataclass(frozen=True)
class TableSpec:
    """Immutable description of a table. Validated on construction."""

    name: str
    ncols: int
    nrows: int
    cell_size_m: float
    origin_lat: float
    origin_lon: float
    registry: tuple[CellType, ...]
    floor_height_m: float = 3.0
    rotation_deg: float = 0.0

    def __post_init__(self):
        # normalize so equal specs always encode to identical bytes
        object.__setattr__(self, "registry", tuple(self.registry))
        for attr in ("cell_size_m", "floor_height_m", "origin_lat", "origin_lon", "rotation_deg"):
            v = getattr(self, attr)
            if isinstance(v, (int, float)) and type(v) is not bool:
                object.__setattr__(self, attr, float(v))
        if not isinstance(self.name, str) or not NAME_RE.match(self.name):
            raise InvalidSpec(f"table name must match [a-z0-9_-]{{1,64}}, got {self.name!r}")
        for attr in ("ncols", "nrows"):
            v = getattr(self, attr)
            if type(v) is not int or not 1 <= v <= MAX_SIDE:
                raise InvalidSpec(f"{attr} must be an int in 1..{MAX_SIDE}, got {v!r}")
        if self.ncols * self.nrows > MAX_CELLS:
            raise InvalidSpec(f"ncols*nrows must be <= {MAX_CELLS}")
        for attr in ("cell_size_m", "floor_height_m"):
            v = getattr(self, attr)
            if type(v) is not float or not math.isfinite(v) or v <= 0:
                raise InvalidSpec(f"{attr} must be a positive finite number")
        if type(self.origin_lat) is not float or not -90.0 <= self.origin_lat <= 90.0:
            raise InvalidSpec("origin_lat must be in [-90, 90]")
        if type(self.origin_lon) is not float or not -180.0 <= self.origin_lon <= 180.0:
            raise InvalidSpec("origin_lon must be in [-180, 180]")
        if type(self.rotation_deg) is not float or not 0.0 <= self.rotation_deg < 360.0:
            raise InvalidSpec("rotation_deg must be in [0, 360)")
        _check_registry(self.registry)

    @property
    def cell_count(self) -> int:
        return self.ncols * self.nrows

    def cell_type(self, type_id: int) -> CellType:
        return self.registry[type_id]


def validate_cell(spec: TableSpec, cell: Cell) -> None:
    """Raise if ``cell`` is not valid against the table's registry."""
    if type(cell.type_id) is not int or not 0 <= cell.type_id < len(spec.registry):
        raise UnknownTypeId(f"type_id {cell.type_id!r} not in registry")
    if cell.rotation not in ROTATIONS:
        raise InvalidRotation(f"rotation must be one of {ROTATIONS}, got {cell.rotation!r}")
    if cell.floors is not None:
        if type(cell.floors) is not int or cell.floors < 0:
            raise IllegalFloorsOverride(f"floors must be a non-negative int, got {cell.floors!r}")
        if spec.registry[cell.type_id].category != "building":
            raise IllegalFloorsOverride(
                f"floors override on non-building type {cell.type_id}"
            )


def validate_state(spec: TableSpec, state: GridState) -> None:
    if len(state.cells) != spec.cell_count:
        raise InvalidGrid(
            f"grid has {len(state.cells)} cells, spec wants {spec.cell_count}"
        )
    for cell in state.cells:
        validate_cell(spec, cell)


EMPTY_CELL = Cell(type_id=0, rotation=0, floors=None)


def new_grid(spec: TableSpec) -> GridState:
    """All-empty grid for a table: every cell is type 0, rotation 0."""
    return GridState(cells=(EMPTY_CELL,) * spec.cell_count)


def apply_edits(spec: TableSpec, state: GridState, edits: list[CellEdit]) -> GridState:
    """Return a new state with ``edits`` applied in list order.

    Later edits to the same index win.  The input state is unmodified.
    All edits are validated before any is applied.
    """
    n = len(state.cells)
    for e in edits:
        if type(e.index) is not int or not 0 <= e.index < n:
            raise IndexOutOfRange(f"edit index {e.index!r} out of [0, {n})")
        validate_cell(spec, e.cell)
    if not edits:
        return state
    cells = list(state.cells)
    for e in edits:
        cells[e.index] = e.cell
    return GridState(cells=tuple(cells))


def diff(a: GridState, b: GridState) -> list[CellDiff]:
    """Cell-level difference between two same-length states, in ascending
    index order.  Applying the ``after`` projection to ``a`` yields ``b``."""
    if len(a.cells) != len(b.cells):
        raise LengthMismatch(f"grid lengths differ: {len(a.cells)} vs {len(b.cells)}")
    return [
        CellDiff(index=i, before=ca, after=cb)
        for i, (ca, cb) in enumerate(zip(a.cells, b.cells))
        if ca != cb
    ]


def diff_to_edits(entries: list[CellDiff]) -> list[CellEdit]:
    return [CellEdit(index=d.index, cell=d.after) for d in entries]


def effective_floors(spec: TableSpec, cell: Cell) -> int:
    """Floors override if present, else the type's default."""
    if cell.floors is not None:
        return cell.floors
    return spec.registry[cell.type_id].default_floors


# --- geo mapping -----------------------------------------------------------
#
# Local tangent-plane model: the grid origin corner sits at
# (origin_lat, origin_lon); cell centers are offset (col+0.5, row+0.5)
# cell sizes east/north, then rotated rotation_deg counterclockwise in the
# east/north plane, then converted to degrees on a spherical earth.


def _rotate(east: float, north: float, deg: float) -> tuple[float, float]:
    th = math.radians(deg)
    c, s = math.cos(th), math.sin(th)
    return east * c - north * s, east * s + north * c


def cell_to_geo(spec: TableSpec, col: int, row: int) -> tuple[float, float]:
    """Latitude/longitude of the center of cell (col, row)."""
    if not (0 <= col < spec.ncols and 0 <= row < spec.nrows):
        raise IndexOutOfRange(f"cell ({col}, {row}) out of grid")
    east, north = _rotate(
        (col + 0.5) * spec.cell_size_m, (row + 0.5) * spec.cell_size_m, spec.rotation_deg
    )
    lat = spec.origin_lat + math.degrees(north / EARTH_RADIUS_M)
    lon = spec.origin_lon + math.degrees(
        east / (EARTH_RADIUS_M * math.cos(math.radians(spec.origin_lat)))
    )
    return lat, lon


def geo_to_cell(spec: TableSpec, lat: float, lon: float) -> tuple[int, int]:
    """Inverse of :func:`cell_to_geo` followed by floor.

    Raises :class:`OutOfExtent` for points outside the grid footprint.
    """
    north = math.radians(lat - spec.origin_lat) * EARTH_RADIUS_M
    east = (
        math.radians(lon - spec.origin_lon)
        * EARTH_RADIUS_M
        * math.cos(math.radians(spec.origin_lat))
    )
    east, north = _rotate(east, north, -spec.rotation_deg)
    col = math.floor(east / spec.cell_size_m)
    row = math.floor(north / spec.cell_size_m)
    if not (0 <= col < spec.ncols and 0 <= row < spec.nrows):
        raise OutOfExtent(f"point ({lat}, {lon}) outside table {spec.name!r}")
    return col, row
