import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from greenhouse_scout.io import ParseError
from greenhouse_scout.worldsim import default_layout, single_row_layout
from greenhouse_scout.yieldcount import (AugmentedSet, CountingParams, CountReport, augment, count_row, count_yield,
                                         dbscan_bruteforce, effective_min_pts, extract_clusters, filter_by_layout,
                                         optics_order, per_plant_counts, row_seed, same_partition, split_by_row,
                                         subsample, write_reachability_csv)

P = CountingParams()
LAYOUT = default_layout()
ROW = single_row_layout().rows[0]


def place_peppers(rng, box, k, spacing=0.14, r=0.04):
    lo, hi = np.asarray(box.lo) + r, np.asarray(box.hi) - r
    out = []
    while len(out) < k:
        c = rng.uniform(lo, hi)
        if all(np.linalg.norm(c - o) >= spacing for o in out):
            out.append(c)
    return np.array(out)


def synthetic_row_detections(rng, row, per_plant, views=(5, 15), sigma=0.01, n_fp=20):
    """Repeated noisy surface observations of peppers plus table false positives."""
    truth, dets = [], []
    for box, k in zip(row.plants, per_plant):
        cs = place_peppers(rng, box, k)
        truth += list(cs)
        for c in cs:
            side = np.sign(c[1] - box.center[1]) or 1.0
            surf = c + np.array([0.0, side * 0.025, 0.0])
            for _ in range(rng.integers(views[0], views[1] + 1)):
                dets.append(surf + rng.normal(0, sigma, 3))
    t = row.table
    for _ in range(n_fp):
        dets.append([rng.uniform(t.lo[0], t.hi[0]), rng.uniform(t.lo[1], t.hi[1]), t.hi[2]])
    dets = np.array(dets)
    return dets[rng.permutation(len(dets))], np.array(truth)


class TestSplitSubsample:
    def test_row_assignment(self):
        c0 = LAYOUT.rows[0].plant_centers[1]
        out = split_by_row(np.array([c0, c0 + [0, 0, 1.5]]), LAYOUT)
        assert len(out[0]) == 1 and sum(len(o) for o in out) == 1

    def test_partition_bruteforce(self, rng):
        pts = rng.uniform([-6, -6, 0], [6, 6, 2.5], (3000, 3))
        out = split_by_row(pts, LAYOUT, 0.04)
        owner = {}
        for i, lst in enumerate(out):
            for p in lst:
                key = tuple(p)
                assert key not in owner
                owner[key] = i
        for p in pts:
            hits = [i for i, r in enumerate(LAYOUT.rows) if r.bounding_volume().contains(p[None], 0.04)[0]]
            assert (tuple(p) in owner) == bool(hits)
            if hits:
                assert owner[tuple(p)] in hits

    def test_subsample_below_cap(self, rng):
        dets = list(rng.normal(size=(10, 3)))
        assert subsample(dets, P, 40, rng) == dets

    def test_subsample_cap(self, rng):
        dets = list(rng.normal(size=(1000, 3)))
        out = subsample(dets, P, 40, rng)
        assert len(out) == 320
        pos = [next(i for i, d in enumerate(dets) if d is o) for o in out]
        assert pos == sorted(pos)

    def test_subsample_deterministic(self):
        dets = list(np.arange(3000).reshape(-1, 3).astype(float))
        a = subsample(dets, P, 40, np.random.default_rng(4))
        b = subsample(dets, P, 40, np.random.default_rng(4))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_retained_per_fruit_at_full_yield(self):
        # a row at the expected upper yield: 4 plants x 10 fruit
        rates = []
        for seed in range(10):
            rng = np.random.default_rng(seed)
            dets, truth = synthetic_row_detections(rng, ROW, [10] * 4, views=(10, 30), n_fp=0)
            kept = subsample(list(dets), P, P.expected_yield_upper * 4, rng)
            rates.append(len(kept) / len(truth))
        assert 5 <= np.mean(rates) <= 10


class TestAugment:
    def test_at_target_noop(self, rng):
        pts = rng.normal(size=(500, 3))
        a = augment(pts, P, rng)
        assert np.array_equal(a.points, pts) and not a.synthetic.any() and a.n_init == 500

    def test_single_original(self, rng):
        a = augment(np.array([[1.0, 2.0, 3.0]]), P, rng)
        assert len(a) == 500 and a.synthetic.sum() == 499
        assert np.all(np.linalg.norm(a.points - [1, 2, 3], axis=1) <= 4 * P.sigma)

    def test_hundred(self, rng):
        pts = rng.normal(size=(100, 3))
        a = augment(pts, P, rng)
        assert a.n_init == 100 and len(a) == 500
        assert np.array_equal(a.points[:100], pts)
        d = np.linalg.norm(a.points[100:, None] - pts[None], axis=2).min(axis=1)
        assert np.all(d <= 4 * P.sigma)

    def test_errors(self, rng):
        with pytest.raises(ValueError):
            augment(np.zeros((0, 3)), P, rng)
        with pytest.raises(ValueError):
            augment(np.zeros((501, 3)), P, rng)


class TestMinPtsAndFilter:
    @pytest.mark.parametrize("n,want", [(500, 2), (100, 10), (3, 334)])
    def test_effective_min_pts(self, n, want):
        assert effective_min_pts(n, P) == want

    def test_filter(self):
        lay = single_row_layout()
        plant = lay.rows[0].plant_centers[0]
        table_pt = [0.1, 0.0, lay.rows[0].table.hi[2]]
        a = AugmentedSet(np.array([plant, table_pt, plant + 0.01]), np.array([False, False, True]), 2)
        f = filter_by_layout(a, lay)
        assert len(f) == 2 and f.n_init == 1
        g = filter_by_layout(f, lay)
        assert np.array_equal(g.points, f.points) and g.n_init == f.n_init

    def test_filter_everything(self):
        a = AugmentedSet(np.array([[50.0, 50, 50]]), np.array([False]), 1)
        f = filter_by_layout(a, single_row_layout())
        assert len(f) == 0 and f.n_init == 0


class TestOptics:
    def test_two_points(self):
        o = optics_order(np.array([[0, 0, 0], [0.01, 0, 0]]), 0.04, 2)
        assert np.allclose(o.core_distance, 0.01)
        assert list(o.order) == [0, 1] and o.reachability[1] == pytest.approx(0.01)
        assert np.isinf(o.reachability[0])

    def test_single_point(self):
        o = optics_order(np.zeros((1, 3)), 0.04, 2)
        assert list(o.order) == [0] and np.isinf(o.reachability[0])

    @given(st.integers(1, 120), st.integers(2, 8), st.integers(0, 10_000))
    @settings(max_examples=80)
    def test_permutation_and_dbscan(self, n, min_pts, seed):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(0, 0.3, (n, 3))
        if n > 10:
            pts[: n // 3] = pts[: n // 3] * 0.2  # a denser blob
        o = optics_order(pts, 0.04, min_pts)
        assert sorted(o.order.tolist()) == list(range(n))
        res = extract_clusters(o, pts)
        assert same_partition(res.labels, dbscan_bruteforce(pts, 0.04, min_pts))

    def test_dbscan_exhaustive_200(self):
        for seed in range(60):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 201))
            pts = rng.uniform(0, 0.4, (n, 3))
            mp = int(rng.integers(2, 10))
            res = extract_clusters(optics_order(pts, 0.04, mp), pts)
            assert same_partition(res.labels, dbscan_bruteforce(pts, 0.04, mp)), seed

    def test_fifty_random(self, rng):
        pts = rng.uniform(0, 0.25, (50, 3))
        res = extract_clusters(optics_order(pts, 0.04, 3), pts)
        assert same_partition(res.labels, dbscan_bruteforce(pts, 0.04, 3))

    def test_bad_args(self):
        with pytest.raises(ValueError):
            optics_order(np.zeros((3, 3)), 0.0, 2)
        with pytest.raises(ValueError):
            optics_order(np.zeros((3, 3)), 0.04, 0)


class TestExtract:
    def test_two_groups(self, rng):
        pts = np.vstack([rng.normal(0, 0.01, (10, 3)), rng.normal(0, 0.01, (10, 3)) + [0.5, 0, 0]])
        res = extract_clusters(optics_order(pts, 0.04, 4), pts)
        assert len(res.clusters) == 2 and len(res.undefined) == 0

    def test_identical(self):
        pts = np.ones((7, 3))
        res = extract_clusters(optics_order(pts, 0.04, 7), pts)
        assert len(res.clusters) == 1 and len(res.clusters[0].members) == 7

    def test_disjoint_min_size_hull(self, rng):
        pts = np.vstack([rng.normal(c, 0.012, (40, 3)) for c in ([0, 0, 0], [0.2, 0, 0], [0.1, 0.2, 0])])
        pts = np.vstack([pts, rng.uniform(-0.2, 0.4, (30, 3))])
        mp = 5
        res = extract_clusters(optics_order(pts, 0.04, mp), pts)
        seen = np.concatenate([c.members for c in res.clusters])
        assert len(seen) == len(set(seen.tolist()))
        assert set(seen.tolist()).isdisjoint(res.undefined.tolist())
        for c in res.clusters:
            assert len(c.members) >= mp
            m = pts[c.members]
            # centre is a convex combination of the members
            A = np.vstack([m.T, np.ones(len(m))])
            lp = linprog(np.zeros(len(m)), A_eq=A, b_eq=np.append(c.center, 1.0), bounds=(0, None))
            assert lp.status == 0


class TestCountRow:
    def test_empty(self, rng):
        assert count_row([], ROW, P, rng).count == 0

    def test_one_pepper_six_views(self, rng):
        c = ROW.plant_centers[2]
        dets = c + rng.normal(0, 0.01, (6, 3))
        rc = count_row(dets, ROW, P, rng)
        assert rc.count == 1 and np.linalg.norm(rc.centers[0] - c) < 0.02

    def test_deterministic(self):
        dets, _ = synthetic_row_detections(np.random.default_rng(1), ROW, [3, 5, 2, 7])
        a = count_row(dets, ROW, P, np.random.default_rng(9))
        b = count_row(dets, ROW, P, np.random.default_rng(9))
        assert a.record() == b.record()

    @given(st.integers(1, 6), st.integers(2, 40), st.integers(0, 1000))
    @settings(max_examples=40)
    def test_noise_free_count(self, k, reps, seed):
        rng = np.random.default_rng(seed)
        box = ROW.plants[1]
        lo = np.asarray(box.lo)
        cs = [lo + [0.05 + 0.13 * (i % 3), 0.05 + 0.3 * (i // 3), 0.2] for i in range(k)]
        dets = np.repeat(np.array(cs), reps, axis=0)
        params = CountingParams(sigma=0.0)
        aset = filter_by_layout(augment(dets, params, rng), ROW)
        mp = effective_min_pts(aset.n_init, params)
        support = [(np.linalg.norm(aset.points - c, axis=1) == 0).sum() for c in cs]
        res = extract_clusters(optics_order(aset.points, params.eps, mp), aset.points)
        if min(support) >= mp:
            assert len(res.clusters) == k

    def test_scenario_row_within_ten_percent(self):
        errs = []
        for seed in range(20):
            rng = np.random.default_rng(seed)
            per_plant = rng.integers(2, 11, size=4)
            dets, truth = synthetic_row_detections(rng, ROW, per_plant)
            rc = count_row(dets, ROW, P, np.random.default_rng(seed + 100))
            errs.append(abs(rc.count - len(truth)) / len(truth))
        assert max(errs) <= 0.10

    def test_seven_pepper_scene(self):
        """Seven peppers on two plants, scanned from both sides: seven clusters."""
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            dets, truth = synthetic_row_detections(rng, ROW, [4, 3, 0, 0], views=(5, 10), n_fp=10)
            rc = count_row(dets, ROW, P, np.random.default_rng(1000 + seed))
            hits += rc.count == 7
        assert hits >= 95


class TestReport:
    def test_count_yield_and_io(self, tmp_path):
        rng = np.random.default_rng(0)
        dets, truth = [], []
        for row, k in zip(LAYOUT.rows[:3], ([2, 3, 1, 0], [0, 0, 4, 2], [1, 1, 1, 1])):
            d, t = synthetic_row_detections(rng, row, k, n_fp=3)
            dets.append(d)
            truth.append(len(t))
        truth += [0] * (len(LAYOUT.rows) - 3)
        rep = count_yield(np.vstack(dets), LAYOUT, P, seed=5, truth_per_row=truth)
        assert [r.count for r in rep.rows] == truth
        assert rep.relative_error() == 0.0
        assert per_plant_counts(rep, LAYOUT)[:4].tolist() == [2, 3, 1, 0]
        f = tmp_path / "c.json"
        rep.write_json(f)
        back = CountReport.read_json(f)
        assert back.to_dict() == rep.to_dict()
        write_reachability_csv(rep.rows[0], tmp_path / "r.csv")
        assert len((tmp_path / "r.csv").read_text().splitlines()) == len(rep.rows[0].points) + 1

    def test_row_streams_independent(self):
        a = row_seed(1, 0).random(4)
        b = row_seed(1, 1).random(4)
        assert not np.allclose(a, b) and np.array_equal(a, row_seed(1, 0).random(4))

    def test_bad_report(self, tmp_path):
        f = tmp_path / "c.json"
        f.write_text('{"rows": [{"row_id": 0}]}')
        with pytest.raises(ParseError):
            CountReport.read_json(f)
