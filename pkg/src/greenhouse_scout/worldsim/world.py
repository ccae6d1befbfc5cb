"""Procedural greenhouse plants: stems, planar leaves and spherical peppers."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .layout import GreenhouseLayout
from .raycast import KINDS, Scene


class WorldConfigError(ValueError):
    pass


@dataclass(frozen=True)
class WorldParams:
    pepper_radius: float = 0.04
    min_pepper_spacing: float = 0.14  # centre-to-centre, within a plant
    leaves_per_plant: tuple = (6, 10)
    leaf_radius: tuple = (0.04, 0.065)
    stem_radius: float = 0.012
    ripe_fraction: float = 1.0
    placement_attempts: int = 2000


@dataclass(frozen=True)
class Plant:
    row: int
    index: int  # global plant index
    box_lo: np.ndarray
    box_hi: np.ndarray
    stem_base: np.ndarray
    stem_height: float
    leaf_centers: np.ndarray
    leaf_normals: np.ndarray
    leaf_radii: np.ndarray
    pepper_centers: np.ndarray
    pepper_radii: np.ndarray
    pepper_ripe: np.ndarray
    pepper_side: np.ndarray  # +1 left (+y of the row normal), -1 right

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.box_lo + self.box_hi)

    @property
    def n_peppers(self) -> int:
        return len(self.pepper_radii)

    @property
    def n_ripe(self) -> int:
        return int(np.count_nonzero(self.pepper_ripe))


@dataclass(frozen=True, eq=False)
class World:
    layout: GreenhouseLayout
    plants: tuple
    params: WorldParams
    seed: int | None = None

    @property
    def n_peppers(self) -> int:
        return sum(p.n_peppers for p in self.plants)

    @property
    def n_ripe(self) -> int:
        return sum(p.n_ripe for p in self.plants)

    def ripe_per_row(self) -> np.ndarray:
        out = np.zeros(len(self.layout.rows), dtype=int)
        for p in self.plants:
            out[p.row] += p.n_ripe
        return out

    def ripe_per_plant(self) -> np.ndarray:
        return np.array([p.n_ripe for p in self.plants], dtype=int)

    @cached_property
    def peppers(self):
        """(centers, radii, ripe, plant index) over all peppers in global order."""
        c = [p.pepper_centers for p in self.plants]
        r = [p.pepper_radii for p in self.plants]
        ripe = [p.pepper_ripe for p in self.plants]
        owner = [np.full(p.n_peppers, p.index) for p in self.plants]
        if not self.plants:
            return np.zeros((0, 3)), np.zeros(0), np.zeros(0, bool), np.zeros(0, int)
        return (np.vstack(c).reshape(-1, 3), np.concatenate(r), np.concatenate(ripe).astype(bool),
                np.concatenate(owner).astype(int))

    @cached_property
    def scene(self) -> Scene:
        """Primitive arrays; pepper k of :attr:`peppers` is sphere primitive k."""
        pc, pr, _, _ = self.peppers
        n_pep = len(pr)
        box_lo, box_hi, box_kind, box_owner = [], [], [], []
        for i, row in enumerate(self.layout.rows):
            box_lo.append(row.table.lo)
            box_hi.append(row.table.hi)
            box_kind.append(KINDS.index("table"))
            box_owner.append(i)
            for pot in row.pots:
                box_lo.append(pot.lo)
                box_hi.append(pot.hi)
                box_kind.append(KINDS.index("pot"))
                box_owner.append(i)
        dc = [p.leaf_centers for p in self.plants]
        dn = [p.leaf_normals for p in self.plants]
        dr = [p.leaf_radii for p in self.plants]
        do = [np.full(len(p.leaf_radii), p.index) for p in self.plants]
        stems = [p for p in self.plants if p.stem_height > 0]
        cat3 = lambda xs: np.vstack(xs).reshape(-1, 3) if xs else np.zeros((0, 3))
        cat1 = lambda xs, dt=float: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt)
        return Scene(
            pc, pr, np.full(n_pep, KINDS.index("pepper")), np.arange(n_pep),
            np.array(box_lo, dtype=float).reshape(-1, 3), np.array(box_hi, dtype=float).reshape(-1, 3),
            np.array(box_kind, dtype=int), np.array(box_owner, dtype=int),
            cat3(dc), cat3(dn), cat1(dr), cat1(do, int),
            np.array([p.stem_base for p in stems], dtype=float).reshape(-1, 3),
            np.array([p.stem_height for p in stems], dtype=float),
            np.full(len(stems), self.params.stem_radius),
            np.array([p.index for p in stems], dtype=int),
        )


def _place_peppers(rng, lo, hi, counts, radius, spacing, attempts):
    """Uniform rejection sampling of non-overlapping centres.

    ``counts`` is (left, right); left peppers sit in the +y half of the box.
    """
    mid_y = 0.5 * (lo[1] + hi[1])
    centers, sides = [], []
    for side, n in ((1, counts[0]), (-1, counts[1])):
        blo = np.array(lo, dtype=float) + radius
        bhi = np.array(hi, dtype=float) - radius
        if side > 0:
            blo[1] = max(blo[1], mid_y)
        else:
            bhi[1] = min(bhi[1], mid_y)
        placed = 0
        for _ in range(attempts):
            if placed == n:
                break
            c = rng.uniform(blo, bhi)
            if all(np.linalg.norm(c - q) >= spacing for q in centers):
                centers.append(c)
                sides.append(side)
                placed += 1
        if placed < n:
            raise WorldConfigError(f"could not place {n} peppers with spacing {spacing} m")
    return np.array(centers).reshape(-1, 3), np.array(sides, dtype=int)


def _random_leaves(rng, lo, hi, n, rrange, avoid, avoid_r):
    centers, normals, radii = [], [], []
    tries = 0
    while len(centers) < n and tries < 50 * max(n, 1):
        tries += 1
        c = rng.uniform(lo, hi)
        r = rng.uniform(*rrange)
        if len(avoid) and np.min(np.linalg.norm(avoid - c, axis=1)) < r + avoid_r:
            continue
        nrm = rng.normal(size=3)
        nrm[2] = abs(nrm[2]) + 1.0  # mostly facing up
        centers.append(c)
        normals.append(nrm / np.linalg.norm(nrm))
        radii.append(r)
    return np.array(centers).reshape(-1, 3), np.array(normals).reshape(-1, 3), np.array(radii)


def generate_world(layout: GreenhouseLayout, fruiting_count: int = 20, peppers_per_side=(1, 5),
                   seed: int = 0, params: WorldParams | None = None) -> World:
    """Random plants for ``layout``; a pure function of its arguments.

    Exactly ``fruiting_count`` plants bear fruit; each gets independent
    uniform integer counts in ``peppers_per_side`` for its two sides.
    """
    params = params or WorldParams()
    lo_n, hi_n = peppers_per_side
    if hi_n < lo_n or lo_n < 0:
        raise WorldConfigError(f"empty pepper count range {peppers_per_side}")
    n_plants = layout.n_plants
    if not 0 <= fruiting_count <= n_plants:
        raise WorldConfigError(f"fruiting_count {fruiting_count} not in [0, {n_plants}]")
    rng = np.random.default_rng(seed)
    fruiting = set(rng.choice(n_plants, size=fruiting_count, replace=False).tolist())
    plants = []
    g = 0
    for ri, row in enumerate(layout.rows):
        for box, pot in zip(row.plants, row.pots):
            lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
            if g in fruiting:
                counts = rng.integers(lo_n, hi_n + 1, size=2)
                pc, side = _place_peppers(rng, lo, hi, counts, params.pepper_radius,
                                          params.min_pepper_spacing, params.placement_attempts)
            else:
                pc, side = np.zeros((0, 3)), np.zeros(0, dtype=int)
            ripe = rng.random(len(pc)) < params.ripe_fraction
            n_leaves = int(rng.integers(params.leaves_per_plant[0], params.leaves_per_plant[1] + 1))
            lc, ln, lr = _random_leaves(rng, lo, hi, n_leaves, params.leaf_radius, pc,
                                        params.pepper_radius + 0.005)
            cx, cy = 0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1])
            stem_base = np.array([cx, cy, pot.hi[2]])
            plants.append(Plant(
                ri, g, lo, hi, stem_base, float(hi[2] - pot.hi[2]) * 0.9,
                lc, ln, lr, pc, np.full(len(pc), params.pepper_radius), ripe, side,
            ))
            g += 1
    return World(layout, tuple(plants), params, seed)


def world_from_peppers(layout: GreenhouseLayout, centers, radius: float = 0.04, leaves=None) -> World:
    """Hand-built world with the given pepper centres assigned to their plant boxes."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 3)
    params = WorldParams(pepper_radius=radius)
    plo, phi = layout.plant_boxes()
    owner = np.full(len(centers), -1)
    for k, c in enumerate(centers):
        inside = np.flatnonzero(np.all((c >= plo) & (c <= phi), axis=1))
        owner[k] = inside[0] if len(inside) else int(np.argmin(np.linalg.norm(0.5 * (plo + phi) - c, axis=1)))
    plants = []
    g = 0
    for ri, row in enumerate(layout.rows):
        for box, pot in zip(row.plants, row.pots):
            lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
            mine = owner == g
            lc, ln, lr = (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)) if leaves is None else leaves.get(g, (np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0)))
            plants.append(Plant(
                ri, g, lo, hi, np.array([0.5 * (lo[0] + hi[0]), 0.5 * (lo[1] + hi[1]), pot.hi[2]]),
                0.0, np.asarray(lc, float).reshape(-1, 3), np.asarray(ln, float).reshape(-1, 3),
                np.asarray(lr, float), centers[mine], np.full(int(mine.sum()), radius),
                np.ones(int(mine.sum()), bool), np.where(centers[mine][:, 1] >= 0.5 * (lo[1] + hi[1]), 1, -1),
            ))
            g += 1
    return World(layout, tuple(plants), params, None)
