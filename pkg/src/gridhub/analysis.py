"""Derived data layers computed from a committed grid: building heights,
sun shadows, built density, land-use diversity, and grid travel times.

All functions are pure and stateless.  Grid-valued layers are row-major
and match the table dimensions exactly; metric layers are small key/value
maps.  The long-running service loop that feeds these from a live table
lives in :mod:`gridhub.worker`.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Any

from .encoding import LAYER_KINDS, _float, _int, _num, _obj, _str, canonical_bytes
from .errors import (
    IndexOutOfRange,
    InvalidSpeeds,
    InvalidSun,
    MalformedEncoding,
    ValidationError,
)
from .model import Cell, GridState, TableSpec, effective_floors

UNREACHABLE = -1.0


@dataclass(frozen=True)
class SunPosition:
    """Sun direction: azimuth is the compass direction the sun shines
    FROM (0 = north, 90 = east); elevation is the angle above the
    horizon.  Elevation 0 is rejected (it would cast infinite shadows)."""

    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        az, el = self.azimuth_deg, self.elevation_deg
        if not isinstance(az, (int, float)) or not 0.0 <= az < 360.0:
            raise InvalidSun(f"azimuth_deg must be in [0, 360), got {az!r}")
        if not isinstance(el, (int, float)) or not 0.0 < el <= 90.0:
            raise InvalidSun(f"elevation_deg must be in (0, 90], got {el!r}")
        object.__setattr__(self, "azimuth_deg", float(az))
        object.__setattr__(self, "elevation_deg", float(el))


@dataclass(frozen=True)
class Layer:
    """Analysis output tied to the table version it was computed from."""

    name: str
    kind: str  # scalar_grid | mask_grid | metrics
    values: tuple | dict
    produced_from_version: int
    producer: str


def layer_to_wire(layer: Layer) -> dict:
    if layer.kind == "metrics":
        values: Any = {k: _num(float(layer.values[k])) for k in sorted(layer.values)}
    elif layer.kind == "mask_grid":
        values = [bool(v) for v in layer.values]
    else:
        values = [_num(float(v)) for v in layer.values]
    return {
        "name": layer.name,
        "kind": layer.kind,
        "values": values,
        "produced_from_version": layer.produced_from_version,
        "producer": layer.producer,
    }


def layer_from_wire(v: Any) -> Layer:
    o = _obj(v, ("name", "kind", "values", "produced_from_version", "producer"))
    kind = _str(o["kind"], "kind")
    if kind not in LAYER_KINDS:
        raise MalformedEncoding(f"kind must be one of {LAYER_KINDS}")
    raw = o["values"]
    values: tuple | dict
    if kind == "metrics":
        if not isinstance(raw, dict):
            raise MalformedEncoding("metrics values must be an object")
        values = {_str(k, "metric key"): _float(x, "metric value") for k, x in raw.items()}
    elif kind == "mask_grid":
        if not isinstance(raw, list) or any(type(x) is not bool for x in raw):
            raise MalformedEncoding("mask_grid values must be an array of booleans")
        values = tuple(raw)
    else:
        if not isinstance(raw, list):
            raise MalformedEncoding("scalar_grid values must be an array of numbers")
        values = tuple(_float(x, "scalar value") for x in raw)
    version = _int(o["produced_from_version"], "produced_from_version")
    if version < 0:
        raise MalformedEncoding("produced_from_version must be >= 0")
    return Layer(
        name=_str(o["name"], "name"),
        kind=kind,
        values=values,
        produced_from_version=version,
        producer=_str(o["producer"], "producer"),
    )


def encode_layer(layer: Layer) -> bytes:
    return canonical_bytes(layer_to_wire(layer))


def check_layer_shape(layer: Layer, spec: TableSpec) -> None:
    if layer.kind in ("scalar_grid", "mask_grid") and len(layer.values) != spec.cell_count:
        raise ValidationError(
            f"layer {layer.name!r} has {len(layer.values)} values, "
            f"table has {spec.cell_count} cells"
        )


# --- heights and shadows ---------------------------------------------------

def building_heights(
    state: GridState, spec: TableSpec, version: int = 0, producer: str = "analysis"
) -> Layer:
    """Per-cell building height in meters: effective floors times the
    table's floor height; zero for non-building cells."""
    values = []
    for cell in state.cells:
        if spec.registry[cell.type_id].category == "building":
            values.append(effective_floors(spec, cell) * spec.floor_height_m)
        else:
            values.append(0.0)
    return Layer("heights", "scalar_grid", tuple(values), version, producer)


def _ray_cells(cx: float, cy: float, dx: float, dy: float, ncols: int, nrows: int):
    """Every cell the ray from (cx, cy) toward (dx, dy) passes through,
    with the entry distance (in cell units), nearest first.  Exact grid
    traversal, so the result does not depend on any sampling step."""
    col, row = int(math.floor(cx)), int(math.floor(cy))
    if dx > 0:
        step_x, tmax_x, tdelta_x = 1, (col + 1 - cx) / dx, 1.0 / dx
    elif dx < 0:
        step_x, tmax_x, tdelta_x = -1, (col - cx) / dx, -1.0 / dx
    else:
        step_x, tmax_x, tdelta_x = 0, math.inf, math.inf
    if dy > 0:
        step_y, tmax_y, tdelta_y = 1, (row + 1 - cy) / dy, 1.0 / dy
    elif dy < 0:
        step_y, tmax_y, tdelta_y = -1, (row - cy) / dy, -1.0 / dy
    else:
        step_y, tmax_y, tdelta_y = 0, math.inf, math.inf
    while True:
        if tmax_x < tmax_y:
            t = tmax_x
            tmax_x += tdelta_x
            col += step_x
        else:
            t = tmax_y
            tmax_y += tdelta_y
            row += step_y
        if not (0 <= col < ncols and 0 <= row < nrows):
            return
        yield col, row, t


def shadow_mask(
    heights: Layer,
    spec: TableSpec,
    sun: SunPosition,
    version: int = 0,
    producer: str = "analysis",
) -> Layer:
    """Boolean shade mask for a height field under the given sun.

    A cell is shaded when some other cell along the ray from its center
    toward the sun is tall enough to block it: with d the center-to-center
    ground distance, shaded iff height(blocker) >= d*tan(elevation) +
    height(cell).  A cell never shades itself.  The march stops at the
    grid edge or once no remaining cell could be tall enough.
    """
    check_layer_shape(heights, spec)
    ncols, nrows, s = spec.ncols, spec.nrows, spec.cell_size_m
    h = heights.values
    tan_e = math.tan(math.radians(sun.elevation_deg))
    max_h = max(h) if h else 0.0
    dx = math.sin(math.radians(sun.azimuth_deg))
    dy = math.cos(math.radians(sun.azimuth_deg))
    mask = []
    for row in range(nrows):
        for col in range(ncols):
            hc = h[row * ncols + col]
            shaded = False
            for bc, br, t_entry in _ray_cells(col + 0.5, row + 0.5, dx, dy, ncols, nrows):
                # the blocker's center is within one cell of the entry point
                if (t_entry - 1.0) * s * tan_e > max_h:
                    break
                if (bc, br) == (col, row):
                    continue
                d = s * math.hypot(bc - col, br - row)
                if h[br * ncols + bc] >= d * tan_e + hc:
                    shaded = True
                    break
            mask.append(shaded)
    return Layer("shadow", "mask_grid", tuple(mask), version, producer)


# --- aggregate metrics -----------------------------------------------------

def density(
    state: GridState, spec: TableSpec, version: int = 0, producer: str = "analysis"
) -> Layer:
    """Floor-area ratio and built-cell fraction over the whole table."""
    total = spec.cell_count
    floors = 0
    built = 0
    for cell in state.cells:
        if spec.registry[cell.type_id].category == "building":
            built += 1
            floors += effective_floors(spec, cell)
    values = {"far": floors / total, "built_cell_fraction": built / total}
    return Layer("density", "metrics", values, version, producer)


def diversity(
    state: GridState, spec: TableSpec, version: int = 0, producer: str = "analysis"
) -> Layer:
    """Shannon entropy (nats) of the type distribution over non-empty
    cells; zero when no cell is occupied."""
    counts: dict[int, int] = {}
    for cell in state.cells:
        if spec.registry[cell.type_id].category != "empty":
            counts[cell.type_id] = counts.get(cell.type_id, 0) + 1
    n = sum(counts.values())
    if n == 0:
        entropy = 0.0
    else:
        entropy = -sum((c / n) * math.log(c / n) for c in counts.values())
    return Layer("diversity", "metrics", {"shannon_nats": entropy}, version, producer)


# --- travel times ----------------------------------------------------------

def _check_speeds(road_speed_mps: float, walk_speed_mps: float) -> None:
    ok = (
        isinstance(road_speed_mps, (int, float))
        and isinstance(walk_speed_mps, (int, float))
        and 0 < walk_speed_mps <= road_speed_mps
    )
    if not ok:
        raise InvalidSpeeds(
            f"need 0 < walk_speed <= road_speed, got walk={walk_speed_mps!r} "
            f"road={road_speed_mps!r}"
        )


def _enter_costs(state: GridState, spec: TableSpec, road: float, walk: float) -> list[float | None]:
    """Cost of entering each cell; None marks impassable water."""
    costs: list[float | None] = []
    for cell in state.cells:
        cat = spec.registry[cell.type_id].category
        if cat == "water":
            costs.append(None)
        elif cat == "road":
            costs.append(spec.cell_size_m / road)
        else:
            costs.append(spec.cell_size_m / walk)
    return costs


def _neighbors(i: int, ncols: int, nrows: int):
    col, row = i % ncols, i // ncols
    if col > 0:
        yield i - 1
    if col < ncols - 1:
        yield i + 1
    if row > 0:
        yield i - ncols
    if row < nrows - 1:
        yield i + ncols


def trip_duration(
    state: GridState,
    spec: TableSpec,
    from_cell: tuple[int, int],
    to_cell: tuple[int, int],
    road_speed_mps: float,
    walk_speed_mps: float,
) -> float | None:
    """Cheapest 4-neighbor travel time in seconds, where entering a cell
    costs cell_size over the road or walk speed and water cannot be
    entered.  Returns None when the destination is unreachable."""
    _check_speeds(road_speed_mps, walk_speed_mps)
    ncols, nrows = spec.ncols, spec.nrows
    for col, row in (from_cell, to_cell):
        if not (0 <= col < ncols and 0 <= row < nrows):
            raise IndexOutOfRange(f"cell ({col}, {row}) out of grid")
    src = from_cell[1] * ncols + from_cell[0]
    dst = to_cell[1] * ncols + to_cell[0]
    if src == dst:
        return 0.0
    enter = _enter_costs(state, spec, road_speed_mps, walk_speed_mps)
    dist: dict[int, float] = {src: 0.0}
    pq: list[tuple[float, int]] = [(0.0, src)]
    while pq:
        d, i = heapq.heappop(pq)
        if i == dst:
            return d
        if d > dist.get(i, math.inf):
            continue
        for j in _neighbors(i, ncols, nrows):
            cost = enter[j]
            if cost is None:
                continue
            nd = d + cost
            if nd < dist.get(j, math.inf):
                dist[j] = nd
                heapq.heappush(pq, (nd, j))
    return None


def accessibility(
    state: GridState,
    spec: TableSpec,
    target_category: str,
    road_speed_mps: float,
    walk_speed_mps: float,
    version: int = 0,
    producer: str = "analysis",
) -> Layer:
    """Per-cell seconds to the nearest cell of ``target_category``
    (multi-source version of :func:`trip_duration`).  Target cells are 0;
    unreachable cells carry the sentinel -1."""
    _check_speeds(road_speed_mps, walk_speed_mps)
    ncols, nrows = spec.ncols, spec.nrows
    n = spec.cell_count
    enter = _enter_costs(state, spec, road_speed_mps, walk_speed_mps)
    targets = [
        i for i, cell in enumerate(state.cells)
        if spec.registry[cell.type_id].category == target_category
    ]
    best = [math.inf] * n
    pq: list[tuple[float, int]] = []
    for t in targets:
        best[t] = 0.0
        heapq.heappush(pq, (0.0, t))
    # walk the trip graph backwards: expanding x relaxes its neighbors
    # with the cost of entering x (the forward step into x)
    while pq:
        d, i = heapq.heappop(pq)
        if d > best[i]:
            continue
        cost = enter[i]
        if cost is None:
            continue  # water cannot be entered, so nothing routes through it
        for j in _neighbors(i, ncols, nrows):
            nd = d + cost
            if nd < best[j]:
                best[j] = nd
                heapq.heappush(pq, (nd, j))
    values = tuple(UNREACHABLE if math.isinf(v) else v for v in best)
    return Layer(
        f"access_{target_category}", "scalar_grid", values, version, producer
    )
