"""Greenhouse layout: tables (rows) carrying plant containers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    lo: tuple
    hi: tuple

    def contains(self, p, margin: float = 0.0) -> np.ndarray:
        p = np.atleast_2d(np.asarray(p, dtype=float))
        lo = np.asarray(self.lo) - margin
        hi = np.asarray(self.hi) + margin
        return np.all((p >= lo) & (p <= hi), axis=1)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.hi) - np.asarray(self.lo)


@dataclass(frozen=True)
class RowLayout:
    """One table with its plants. ``direction`` is the row's horizontal axis."""

    table: Box
    plants: tuple  # plant (foliage) bounding boxes
    pots: tuple
    direction: tuple = (1.0, 0.0)
    row_id: int = 0

    @property
    def plant_centers(self) -> np.ndarray:
        return np.array([b.center for b in self.plants])

    def obstacle_boxes(self):
        boxes = [self.table, *self.pots, *self.plants]
        return np.array([b.lo for b in boxes], dtype=float), np.array([b.hi for b in boxes], dtype=float)

    def bounding_volume(self) -> Box:
        lo, hi = self.obstacle_boxes()
        return Box(tuple(lo.min(axis=0)), tuple(hi.max(axis=0)))

    def plant_boxes(self):
        return np.array([b.lo for b in self.plants], dtype=float), np.array([b.hi for b in self.plants], dtype=float)


@dataclass(frozen=True)
class GreenhouseLayout:
    rows: tuple
    workstation: tuple = (0.0, 0.0, 0.0)

    @property
    def n_plants(self) -> int:
        return sum(len(r.plants) for r in self.rows)

    def plant_index(self):
        """List of (row index, plant index within row) in global plant order."""
        return [(i, j) for i, r in enumerate(self.rows) for j in range(len(r.plants))]

    def plant_boxes(self):
        lo = [b.lo for r in self.rows for b in r.plants]
        hi = [b.hi for r in self.rows for b in r.plants]
        return np.array(lo, dtype=float).reshape(-1, 3), np.array(hi, dtype=float).reshape(-1, 3)

    def plant_centers(self) -> np.ndarray:
        return np.array([b.center for r in self.rows for b in r.plants]).reshape(-1, 3)


@dataclass(frozen=True)
class LayoutParams:
    n_tables: int = 8
    plants_per_table: int = 4
    table_length: float = 2.0
    table_width: float = 0.5
    table_height: float = 0.75
    pot_size: tuple = (0.2, 0.2, 0.2)
    plant_size: tuple = (0.4, 0.4, 0.5)
    row_spacing: float = 3.0
    # tables are split into two blocks either side of the central workstation
    block_gap: float = 3.0
    workstation: tuple = (0.0, 0.0, 0.0)


def make_row(origin_xy, params: LayoutParams, row_id: int = 0) -> RowLayout:
    """Table along +x starting at ``origin_xy`` (its -x, centre-line end)."""
    x0, yc = origin_xy
    L, W, H = params.table_length, params.table_width, params.table_height
    table = Box((x0, yc - W / 2, 0.0), (x0 + L, yc + W / 2, H))
    pitch = L / params.plants_per_table
    pots, plants = [], []
    px, py, pz = params.pot_size
    fx, fy, fz = params.plant_size
    for k in range(params.plants_per_table):
        cx = x0 + pitch * (k + 0.5)
        pots.append(Box((cx - px / 2, yc - py / 2, H), (cx + px / 2, yc + py / 2, H + pz)))
        plants.append(Box((cx - fx / 2, yc - fy / 2, H + pz), (cx + fx / 2, yc + fy / 2, H + pz + fz)))
    return RowLayout(table, tuple(plants), tuple(pots), (1.0, 0.0), row_id)


def default_layout(params: LayoutParams | None = None) -> GreenhouseLayout:
    """Eight tables of four plant containers around a central workstation."""
    params = params or LayoutParams()
    per_block = params.n_tables // 2
    ys = (np.arange(per_block) - (per_block - 1) / 2) * params.row_spacing
    rows = []
    wx = params.workstation[0]
    for side in (-1, 1):
        x0 = wx + params.block_gap / 2 if side > 0 else wx - params.block_gap / 2 - params.table_length
        for y in ys:
            rows.append(make_row((x0, params.workstation[1] + y), params, len(rows)))
    if params.n_tables % 2:
        y = ys[-1] + params.row_spacing if len(ys) else 0.0
        rows.append(make_row((wx - params.table_length / 2, params.workstation[1] + y), params, len(rows)))
    return GreenhouseLayout(tuple(rows), tuple(params.workstation))


def single_row_layout(params: LayoutParams | None = None) -> GreenhouseLayout:
    params = params or LayoutParams()
    return GreenhouseLayout((make_row((0.0, 0.0), params, 0),), (0.0, -3.0, 0.0))
