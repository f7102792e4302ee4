"""Shared city-model tables: an authoritative grid server with versioned
history, live event streams, geo-anchored discussion, and pluggable
analysis workers that publish derived layers."""

from .analysis import (
    Layer,
    SunPosition,
    accessibility,
    building_heights,
    density,
    diversity,
    shadow_mask,
    trip_duration,
)
from .encoding import (
    canonical_decode,
    canonical_encode,
    decode_spec,
    encode_spec,
    state_hash,
)
from .errors import Conflict, GridHubError, NotFoundError, ValidationError
from .history import Commit, TableHistory, verify_chain
from .model import (
    Cell,
    CellEdit,
    CellType,
    GridState,
    TableSpec,
    apply_edits,
    cell_to_geo,
    diff,
    effective_floors,
    geo_to_cell,
    new_grid,
)

__all__ = [
    "Cell",
    "CellEdit",
    "CellType",
    "Commit",
    "Conflict",
    "GridHubError",
    "GridState",
    "Layer",
    "NotFoundError",
    "SunPosition",
    "TableHistory",
    "TableSpec",
    "ValidationError",
    "accessibility",
    "apply_edits",
    "building_heights",
    "canonical_decode",
    "canonical_encode",
    "cell_to_geo",
    "decode_spec",
    "density",
    "diff",
    "diversity",
    "effective_floors",
    "encode_spec",
    "geo_to_cell",
    "new_grid",
    "shadow_mask",
    "state_hash",
    "trip_duration",
    "verify_chain",
]

__version__ = "0.1.0"
