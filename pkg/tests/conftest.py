import random

import pytest

from gridhub.model import Cell, CellType, GridState, TableSpec

REGISTRY = (
    CellType(0, "empty", (0, 0, 0), "empty"),
    CellType(1, "low_rise", (220, 170, 60), "building", 2),
    CellType(2, "tower", (200, 40, 40), "building", 12),
    CellType(3, "street", (90, 90, 90), "road"),
    CellType(4, "green", (40, 160, 70), "park"),
    CellType(5, "canal", (40, 90, 200), "water"),
)


def make_spec(name="t1", ncols=8, nrows=6, cell_size_m=10.0, **kw) -> TableSpec:
    defaults = dict(
        origin_lat=52.3676,
        origin_lon=4.9041,
        registry=REGISTRY,
        floor_height_m=3.0,
        rotation_deg=0.0,
    )
    defaults.update(kw)
    return TableSpec(name, ncols, nrows, cell_size_m, **defaults)


def random_state(spec: TableSpec, rng: random.Random) -> GridState:
    cells = []
    for _ in range(spec.cell_count):
        t = rng.choice(spec.registry)
        rotation = rng.choice((0, 90, 180, 270))
        floors = None
        if t.category == "building" and rng.random() < 0.3:
            floors = rng.randrange(0, 30)
        cells.append(Cell(t.id, rotation, floors))
    return GridState(tuple(cells))


@pytest.fixture
def spec() -> TableSpec:
    return make_spec()


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240901)
