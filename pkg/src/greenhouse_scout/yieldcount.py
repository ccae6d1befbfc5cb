"""Fruit counting from multi-view 3-D detections.

Chain per greenhouse row: split by row volume, random subsampling,
noise augmentation to a fixed-size set, layout filtering, OPTICS ordering
and DBSCAN-equivalent cluster extraction. One cluster is one fruit.
"""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .worldsim.layout import GreenhouseLayout, RowLayout


@dataclass(frozen=True)
class CountingParams:
    eps: float = 0.04
    base_min_detections: int = 2
    augment_target: int = 500
    sigma: float = 0.01
    expected_yield_upper: int = 10  # fruit per plant
    subsample_per_fruit: int = 8
    row_margin: float | None = None  # defaults to eps
    truncate_sigmas: float = 4.0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.augment_target < 1 or self.base_min_detections < 1:
            raise ValueError("augment_target and base_min_detections must be >= 1")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")


def as_points(dets) -> np.ndarray:
    """(N, 3) array from Detection objects or anything array-like."""
    if isinstance(dets, np.ndarray):
        return dets.reshape(-1, 3).astype(float)
    dets = list(dets)
    if dets and hasattr(dets[0], "point"):
        return np.array([d.point for d in dets], dtype=float).reshape(-1, 3)
    return np.asarray(dets, dtype=float).reshape(-1, 3)


def _rows_of(layout):
    if isinstance(layout, RowLayout):
        return (layout,)
    return tuple(layout.rows)


def split_by_row(dets, layout: GreenhouseLayout, margin: float = 0.04) -> list:
    """Per-row lists of detections; detections outside every expanded row volume are dropped."""
    rows = _rows_of(layout)
    if not rows:
        raise ValueError("layout has no rows")
    pts = as_points(dets)
    seq = dets if not isinstance(dets, np.ndarray) else list(pts)
    out = [[] for _ in rows]
    taken = np.zeros(len(pts), dtype=bool)
    for i, row in enumerate(rows):
        inside = row.bounding_volume().contains(pts, margin) & ~taken if len(pts) else np.zeros(0, bool)
        taken |= inside
        out[i] = [seq[k] for k in np.flatnonzero(inside)]
    return out


def subsample(dets, params: CountingParams, expected_fruit_upper: int, rng: np.random.Generator) -> list:
    """Uniform random subset capped at subsample_per_fruit * expected_fruit_upper, original order kept."""
    dets = list(dets)
    cap = params.subsample_per_fruit * int(expected_fruit_upper)
    if len(dets) <= cap:
        return dets
    keep = np.sort(rng.choice(len(dets), size=cap, replace=False))
    return [dets[k] for k in keep]


@dataclass
class AugmentedSet:
    points: np.ndarray
    synthetic: np.ndarray  # bool per point
    n_init: int

    def __len__(self):
        return len(self.points)


def augment(dets, params: CountingParams, rng: np.random.Generator) -> AugmentedSet:
    """Pad to ``augment_target`` points with Gaussian jitter around random originals.

    Jitter vectors longer than ``truncate_sigmas * sigma`` are redrawn.
    """
    pts = as_points(dets)
    n = len(pts)
    if n == 0:
        raise ValueError("cannot augment an empty detection set")
    if n > params.augment_target:
        raise ValueError(f"{n} detections exceed augment_target {params.augment_target}")
    k = params.augment_target - n
    src = rng.integers(0, n, size=k)
    noise = rng.normal(0.0, params.sigma, size=(k, 3))
    limit = params.truncate_sigmas * params.sigma
    bad = np.linalg.norm(noise, axis=1) > limit
    while bad.any():
        noise[bad] = rng.normal(0.0, params.sigma, size=(int(bad.sum()), 3))
        bad = np.linalg.norm(noise, axis=1) > limit
    out = np.vstack([pts, pts[src] + noise])
    syn = np.concatenate([np.zeros(n, bool), np.ones(k, bool)])
    return AugmentedSet(out, syn, n)


def effective_min_pts(n_init: int, params: CountingParams) -> int:
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    return params.base_min_detections * math.ceil(params.augment_target / n_init)


def filter_by_layout(aset: AugmentedSet, layout, margin: float = 0.0) -> AugmentedSet:
    """Keep only points inside some plant bounding volume."""
    lo, hi = layout.plant_boxes()
    p = aset.points
    if len(p) == 0 or len(lo) == 0:
        keep = np.zeros(len(p), dtype=bool)
    else:
        keep = np.any(np.all((p[:, None, :] >= lo[None] - margin) & (p[:, None, :] <= hi[None] + margin), axis=2),
                      axis=1)
    syn = aset.synthetic[keep]
    return AugmentedSet(p[keep], syn, int(np.count_nonzero(~syn)))


@dataclass
class Ordering:
    order: np.ndarray
    reachability: np.ndarray  # indexed by point; inf = undefined
    core_distance: np.ndarray  # indexed by point; inf = undefined
    eps: float
    min_pts: int

    def reachability_plot(self) -> np.ndarray:
        """(position, point index, reachability) rows in processing order."""
        return np.column_stack([np.arange(len(self.order)), self.order, self.reachability[self.order]])


def optics_order(points, eps: float, min_pts: int) -> Ordering:
    """OPTICS ordering with a heap-based seed list.

    The core distance counts the point itself, so with ``min_pts = 2`` a point
    is core when one other point lies within ``eps``. Equal reachabilities are
    popped lowest index first.
    """
    if min_pts < 1:
        raise ValueError("min_pts must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    reach = np.full(n, np.inf)
    core = np.full(n, np.inf)
    order = np.empty(n, dtype=int)
    if n == 0:
        return Ordering(order, reach, core, eps, min_pts)
    tree = cKDTree(pts)
    if min_pts == 1:
        core = np.zeros(n)
    elif min_pts <= n:
        kth = tree.query(pts, k=min_pts)[0][:, -1]
        core = np.where(kth <= eps, kth, np.inf)
    neigh = tree.query_ball_point(pts, eps)
    done = np.zeros(n, dtype=bool)
    pos = 0

    def update(p, heap):
        nb = np.asarray(neigh[p], dtype=int)
        nb = nb[~done[nb]]
        if len(nb) == 0:
            return
        r = np.maximum(core[p], np.linalg.norm(pts[nb] - pts[p], axis=1))
        better = r < reach[nb]
        for q, rq in zip(nb[better], r[better]):
            reach[q] = rq
            heapq.heappush(heap, (rq, int(q)))

    for start in range(n):
        if done[start]:
            continue
        done[start] = True
        order[pos] = start
        pos += 1
        if not np.isfinite(core[start]):
            continue
        heap: list = []
        update(start, heap)
        while heap:
            rq, q = heapq.heappop(heap)
            if done[q] or rq > reach[q]:
                continue  # stale entry
            done[q] = True
            order[pos] = q
            pos += 1
            if np.isfinite(core[q]):
                update(q, heap)
    return Ordering(order, reach, core, eps, min_pts)


@dataclass
class Cluster:
    center: np.ndarray
    members: np.ndarray
    core: np.ndarray


@dataclass
class ClusterResult:
    clusters: list
    undefined: np.ndarray
    labels: np.ndarray  # -1 = undefined

    @property
    def centers(self) -> np.ndarray:
        return np.array([c.center for c in self.clusters]).reshape(-1, 3)


def extract_clusters(ordering: Ordering, points, eps: float | None = None) -> ClusterResult:
    """DBSCAN-equivalent clusters read off the reachability plot at ``eps``.

    A point whose reachability exceeds eps starts a new cluster if it is core
    and is undefined otherwise. Non-core (border) points are then attached to
    the cluster of their nearest core point within eps, ties to the lower
    index, which makes the partition independent of processing order.
    """
    eps = ordering.eps if eps is None else eps
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, -1)
    is_core = ordering.core_distance <= eps
    cid = -1
    for p in ordering.order:
        if ordering.reachability[p] > eps:
            if is_core[p]:
                cid += 1
                labels[p] = cid
        else:
            labels[p] = cid
    border = np.flatnonzero(~is_core)
    core_idx = np.flatnonzero(is_core)
    labels[border] = -1
    if len(border) and len(core_idx):
        d, j = cKDTree(pts[core_idx]).query(pts[border], k=1, distance_upper_bound=eps * (1 + 1e-12))
        for b, dist in zip(border, d):
            if not np.isfinite(dist):
                continue
            dd = np.linalg.norm(pts[core_idx] - pts[b], axis=1)
            near = core_idx[dd == dd.min()]
            labels[b] = labels[near.min()]
    clusters = []
    for c in range(cid + 1):
        mem = np.flatnonzero(labels == c)
        if len(mem) == 0:
            continue
        clusters.append(Cluster(pts[mem].mean(axis=0), mem, mem[is_core[mem]]))
    dense = np.full(n, -1)
    for i, c in enumerate(clusters):
        dense[c.members] = i
    return ClusterResult(clusters, np.flatnonzero(dense < 0), dense)


def dbscan_bruteforce(points, eps: float, min_pts: int) -> np.ndarray:
    """O(n^2) DBSCAN labels with the same border rule as :func:`extract_clusters`.

    Clusters are numbered by their lowest core index.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    n = len(pts)
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    adj = D <= eps
    is_core = adj.sum(axis=1) >= min_pts
    labels = np.full(n, -1)
    c = 0
    for s in range(n):
        if not is_core[s] or labels[s] >= 0:
            continue
        stack = [s]
        labels[s] = c
        while stack:
            p = stack.pop()
            for q in np.flatnonzero(adj[p] & is_core):
                if labels[q] < 0:
                    labels[q] = c
                    stack.append(q)
        c += 1
    core_idx = np.flatnonzero(is_core)
    for b in np.flatnonzero(~is_core):
        if len(core_idx) == 0:
            break
        dd = D[b, core_idx]
        if dd.min() <= eps:
            labels[b] = labels[core_idx[dd == dd.min()].min()]
    return labels


def same_partition(a, b) -> bool:
    """Label vectors describe the same partition (noise = -1 must match exactly)."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or np.any((a < 0) != (b < 0)):
        return False
    m = a >= 0
    pairs = set(zip(a[m].tolist(), b[m].tolist()))
    return len(pairs) == len(set(a[m].tolist())) == len(set(b[m].tolist()))


@dataclass
class RowCount:
    row_id: int
    count: int
    centers: np.ndarray
    n_detections: int
    n_init: int
    min_pts: int
    undefined: int
    ordering: Ordering | None = field(default=None, repr=False)
    points: np.ndarray | None = field(default=None, repr=False)
    labels: np.ndarray | None = field(default=None, repr=False)

    def record(self) -> dict:
        return {
            "row_id": int(self.row_id),
            "n_detections": int(self.n_detections),
            "n_init": int(self.n_init),
            "min_pts": int(self.min_pts),
            "count": int(self.count),
            "undefined": int(self.undefined),
            "centers": [[float(v) for v in c] for c in self.centers],
        }


def count_row(dets, layout, params: CountingParams, rng: np.random.Generator, row_id: int = 0) -> RowCount:
    """Estimated fruit count and cluster centres for one row's detections.

    ``layout`` is the row (or any layout whose plant volumes apply).
    """
    dets = list(dets) if not isinstance(dets, np.ndarray) else list(as_points(dets))
    n_plants = sum(len(r.plants) for r in _rows_of(layout))
    empty = RowCount(row_id, 0, np.zeros((0, 3)), len(dets), 0, 0, 0)
    if not dets:
        return empty
    kept = subsample(dets, params, params.expected_yield_upper * max(n_plants, 1), rng)
    if len(kept) > params.augment_target:
        idx = np.sort(rng.choice(len(kept), size=params.augment_target, replace=False))
        kept = [kept[k] for k in idx]
    aset = filter_by_layout(augment(kept, params, rng), layout)
    if aset.n_init == 0:
        return RowCount(row_id, 0, np.zeros((0, 3)), len(dets), 0, 0, len(aset))
    mp = effective_min_pts(aset.n_init, params)
    ordering = optics_order(aset.points, params.eps, mp)
    res = extract_clusters(ordering, aset.points, params.eps)
    return RowCount(row_id, len(res.clusters), res.centers, len(dets), aset.n_init, mp, len(res.undefined),
                    ordering, aset.points, res.labels)


@dataclass
class CountReport:
    rows: list
    truth_per_row: list | None = None

    @property
    def total(self) -> int:
        return int(sum(r.count for r in self.rows))

    @property
    def truth_total(self):
        return None if self.truth_per_row is None else int(sum(self.truth_per_row))

    def relative_error(self):
        t = self.truth_total
        if not t:
            return None
        return abs(self.total - t) / t

    def to_dict(self) -> dict:
        d = {"rows": [r.record() for r in self.rows], "total": self.total}
        if self.truth_per_row is not None:
            d["truth_per_row"] = [int(v) for v in self.truth_per_row]
            d["truth_total"] = self.truth_total
            d["absolute_error"] = abs(self.total - self.truth_total)
            d["relative_error"] = self.relative_error()
        return d

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def read_json(cls, path) -> "CountReport":
        from .io import ParseError

        try:
            with open(path) as fh:
                d = json.load(fh)
            rows = [RowCount(r["row_id"], r["count"], np.asarray(r["centers"], float).reshape(-1, 3),
                             r["n_detections"], r["n_init"], r["min_pts"], r["undefined"]) for r in d["rows"]]
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"{path}: bad or missing field ({e})") from e
        return cls(rows, d.get("truth_per_row"))


def row_seed(seed: int, row: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(row)]))


def count_yield(dets, layout: GreenhouseLayout, params: CountingParams, seed: int = 0,
                truth_per_row=None) -> CountReport:
    """Split detections by row and count each row with an independent stream."""
    margin = params.eps if params.row_margin is None else params.row_margin
    per_row = split_by_row(dets, layout, margin)
    rows = [count_row(d, row, params, row_seed(seed, i), i) for i, (d, row) in enumerate(zip(per_row, layout.rows))]
    return CountReport(rows, None if truth_per_row is None else list(truth_per_row))


def per_plant_counts(report: CountReport, layout: GreenhouseLayout) -> np.ndarray:
    """Cluster centres binned to the nearest plant volume (global plant order)."""
    centers = layout.plant_centers()
    out = np.zeros(len(centers), dtype=int)
    for r in report.rows:
        for c in r.centers:
            out[int(np.argmin(np.linalg.norm(centers - c, axis=1)))] += 1
    return out


def write_reachability_csv(rc: RowCount, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "index", "reachability", "label", "x", "y", "z"])
        if rc.ordering is None:
            return
        for pos, idx in enumerate(rc.ordering.order):
            r = rc.ordering.reachability[idx]
            w.writerow([pos, int(idx), repr(float(r)) if np.isfinite(r) else "inf", int(rc.labels[idx]),
                        *(repr(float(v)) for v in rc.points[idx])])
