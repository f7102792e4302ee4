"""Analysis worker: follows a table's commit stream and publishes
derived layers back through the public API.

The worker is a separate process from the server and speaks only HTTP,
so any third-party implementation could replace it.  One worker serves
one table; run more workers for more tables.

Loop shape: subscribe to the stream, and for every commit compute all
layers from that commit's grid and post them with produced_from_version
set to the commit's version.  Before computing, a conditional head fetch
detects a backlog; when newer commits are already pending the worker
computes from the newest head instead and version-guards the stale
events away, so intermediate versions never cost a recompute.  Network
failures back off exponentially (capped) and never kill the process.
"""

from __future__ import annotations

import logging
import threading
import time

import requests

from .analysis import (
    Layer,
    SunPosition,
    accessibility,
    building_heights,
    density,
    diversity,
    shadow_mask,
)
from .client import ApiError, StreamClosed, TableClient
from .encoding import spec_from_wire
from .history import Commit, commit_from_wire
from .model import GridState, TableSpec

log = logging.getLogger(__name__)

DEFAULT_ROAD_SPEED_MPS = 5.0
DEFAULT_WALK_SPEED_MPS = 1.25
DEFAULT_ACCESS_CATEGORIES = ("park", "road")
BACKOFF_START_S = 0.5
BACKOFF_CAP_S = 30.0


def compute_layers(
    spec: TableSpec,
    grid: GridState,
    version: int,
    sun: SunPosition,
    access_categories: tuple[str, ...] = DEFAULT_ACCESS_CATEGORIES,
    road_speed_mps: float = DEFAULT_ROAD_SPEED_MPS,
    walk_speed_mps: float = DEFAULT_WALK_SPEED_MPS,
) -> list[Layer]:
    """Every layer the worker publishes for one grid, in publish order."""
    heights = building_heights(grid, spec, version, producer="worker")
    layers = [
        heights,
        shadow_mask(heights, spec, sun, version, producer="worker"),
        density(grid, spec, version, producer="worker"),
        diversity(grid, spec, version, producer="worker"),
    ]
    for category in access_categories:
        layers.append(
            accessibility(
                grid, spec, category, road_speed_mps, walk_speed_mps,
                version, producer="worker",
            )
        )
    return layers


class Worker:
    def __init__(
        self,
        server_url: str,
        table: str,
        token: str,
        sun: SunPosition,
        access_categories: tuple[str, ...] = DEFAULT_ACCESS_CATEGORIES,
        road_speed_mps: float = DEFAULT_ROAD_SPEED_MPS,
        walk_speed_mps: float = DEFAULT_WALK_SPEED_MPS,
        backoff_cap_s: float = BACKOFF_CAP_S,
    ):
        self.client = TableClient(server_url)
        self.table = table
        self.token = token
        self.sun = sun
        self.access_categories = access_categories
        self.road_speed_mps = road_speed_mps
        self.walk_speed_mps = walk_speed_mps
        self.backoff_cap_s = backoff_cap_s
        self.published_version = 0
        self._stop = threading.Event()

    def stop(self) -> None:
        self._stop.set()
        self.client.close()

    def _fetch_spec(self) -> TableSpec:
        for entry in self.client.list_tables():
            if entry["name"] == self.table:
                return spec_from_wire(entry["spec"])
        raise ApiError(404, "unknown_table", f"no table named {self.table!r}")

    def _publish(self, spec: TableSpec, commit: Commit) -> None:
        layers = compute_layers(
            spec,
            commit.grid,
            commit.version,
            self.sun,
            self.access_categories,
            self.road_speed_mps,
            self.walk_speed_mps,
        )
        for layer in layers:
            try:
                self.client.put_layer(self.table, layer, self.token)
            except ApiError as e:
                # Another worker already stored a newer result; fine.
                if e.code == "stale_layer":
                    continue
                raise
        self.published_version = commit.version
        log.info("published %d layers for %s v%d", len(layers), self.table, commit.version)

    def _handle_commit(self, spec: TableSpec, commit: Commit) -> None:
        if commit.version <= self.published_version:
            return
        # Cheap backlog probe: 304 means this event is the head, otherwise
        # jump straight to the newest version and let the version guard
        # swallow the stale events behind it.
        newer, _etag = self.client.head_if_changed(self.table, f'"{commit.version}"')
        if newer is not None and newer.version > commit.version:
            commit = newer
        if commit.version <= self.published_version:
            return
        self._publish(spec, commit)

    def run(self) -> None:
        """Service loop; returns only after stop()."""
        since: int | None = None
        backoff = BACKOFF_START_S
        while not self._stop.is_set():
            try:
                spec = self._fetch_spec()
                for ev in self.client.stream_raw(self.table, since):
                    backoff = BACKOFF_START_S
                    since = ev.seq
                    if ev.kind in ("snapshot", "commit"):
                        self._handle_commit(spec, commit_from_wire(ev.payload["commit"]))
                    if self._stop.is_set():
                        break
            except (ApiError, StreamClosed, requests.RequestException, OSError) as e:
                if self._stop.is_set():
                    break
                log.warning("worker retry in %.1fs: %s", backoff, e)
                if self._stop.wait(backoff):
                    break
                backoff = min(backoff * 2, self.backoff_cap_s)
            except Exception:
                # stop() closes the client under a live request, which can
                # surface odd exception types; anything else is logged and
                # retried because this loop must outlive transient faults
                if self._stop.is_set():
                    break
                log.exception("worker retry in %.1fs after unexpected error", backoff)
                if self._stop.wait(backoff):
                    break
                backoff = min(backoff * 2, self.backoff_cap_s)


def worker_run(
    server_url: str,
    table: str,
    token: str,
    sun: SunPosition,
    access_categories: tuple[str, ...] = DEFAULT_ACCESS_CATEGORIES,
    road_speed_mps: float = DEFAULT_ROAD_SPEED_MPS,
    walk_speed_mps: float = DEFAULT_WALK_SPEED_MPS,
) -> None:
    Worker(
        server_url, table, token, sun, access_categories,
        road_speed_mps, walk_speed_mps,
    ).run()
