import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from greenhouse_scout import mission as ms
from greenhouse_scout.worldsim.layout import default_layout

INF = np.inf


def problem(durations, precedence=(), costs=None, depots=None, locations=None, speeds=None):
    d = np.asarray(durations, float)
    n, m = d.shape
    return ms.MissionProblem(
        depots if depots is not None else np.zeros((m, 3)),
        locations if locations is not None else np.zeros((n, 3)),
        d, d.copy() if costs is None else costs, list(precedence), speeds)


def random_problem(rng, n, m=2, prec_p=0.0, unsupported_p=0.0):
    dur = rng.uniform(1.0, 10.0, (n, m))
    mask = rng.random((n, m)) < unsupported_p
    mask[np.arange(n), rng.integers(m, size=n)] = False
    dur[mask] = INF
    cost = np.where(np.isfinite(dur), rng.uniform(0.5, 2.0, (n, m)), INF)
    order = rng.permutation(n)
    prec = [(int(order[i]), int(order[j])) for i in range(n) for j in range(i + 1, n) if rng.random() < prec_p]
    return ms.MissionProblem(rng.uniform(0, 5, (m, 3)), rng.uniform(0, 5, (n, 3)), dur, cost, prec,
                             rng.uniform(0.5, 2.0, m))


def exhaustive_insertion(seqs, a, prob):
    best, best_obj = None, None
    for i in range(prob.n_robots):
        if not np.isfinite(prob.durations[a, i]):
            continue
        for k in range(len(seqs[i]) + 1):
            cand = [list(s) for s in seqs]
            cand[i].insert(k, a)
            s = ms.decode(ms.make_chromosome(cand), prob)
            if s.feasible and (best_obj is None or s.objectives < best_obj):
                best, best_obj = cand, s.objectives
    return ms.make_chromosome(best)


# ----------------------------------------------------------------------------- problem


def test_problem_validation():
    with pytest.raises(ms.MissionError, match="cycle"):
        problem([[1.0], [1.0]], [(0, 1), (1, 0)])
    with pytest.raises(ms.MissionError, match="not supported"):
        problem([[INF, INF]])
    with pytest.raises(ms.MissionError, match="precedence"):
        problem([[1.0]], [(0, 3)])
    with pytest.raises(ms.MissionError):
        ms.MissionProblem(np.zeros((0, 3)), np.zeros((1, 3)), np.zeros((1, 0)), np.zeros((1, 0)))


def test_transit_is_distance_over_speed():
    prob = problem([[1.0], [1.0]], depots=[[0, 0, 0]], locations=[[3, 4, 0], [3, 0, 0]], speeds=[0.5])
    assert prob.transit[0, 2, 0] == pytest.approx(10.0)
    assert prob.transit[0, 0, 1] == pytest.approx(8.0)
    s = ms.decode(((0, 1),), prob)
    assert s.entries[0] == [(0, 10.0, 11.0), (1, 19.0, 20.0)]


# ----------------------------------------------------------------------------- decode


def test_decode_sequential():
    s = ms.decode(((0, 1),), problem([[2.0], [3.0]]))
    assert s.feasible
    assert s.entries[0] == [(0, 0.0, 2.0), (1, 2.0, 5.0)]
    assert s.makespan == 5.0


def test_decode_cross_robot_precedence():
    prob = problem([[2.0, 2.0], [3.0, 3.0]], [(0, 1)])
    s = ms.decode(((0,), (1,)), prob)
    b_start = s.start_times()[1]
    assert b_start > 2.0
    assert b_start == pytest.approx(2.0 + ms.PREC_EPS, abs=1e-12)


def test_decode_same_robot_reversed_precedence_deadlocks():
    s = ms.decode(((1, 0),), problem([[2.0], [3.0]], [(0, 1)]))
    assert not s.feasible
    assert s.makespan == ms.PENALTY


def test_decode_cross_robot_deadlock():
    # robot 0: a then b; robot 1: c then d; prec(b, c) and prec(d, a) form a circular wait
    prob = problem(np.ones((4, 2)), [(1, 2), (3, 0)])
    assert not ms.decode(((0, 1), (2, 3)), prob).feasible
    s = ms.decode(((0, 1), (3, 2)), prob)
    assert s.feasible and ms.verify_schedule(s, prob) == []


def test_decode_is_pure():
    rng = np.random.default_rng(1)
    prob = random_problem(rng, 6, 2, prec_p=0.2)
    c = ms.random_chromosome(prob, rng)
    assert ms.decode(c, prob) == ms.decode(c, prob)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 7), st.integers(1, 3))
def test_decode_schedule_invariants(seed, n, m):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, n, m, prec_p=0.3, unsupported_p=0.3)
    c = ms.random_chromosome(prob, rng)
    assert ms.is_valid(c, prob)
    s = ms.decode(c, prob)
    # random chromosomes follow a topological order, so they never deadlock
    assert s.feasible
    assert ms.verify_schedule(s, prob) == []
    assert s.makespan == pytest.approx(max(f for seq in s.entries for _, _, f in seq))


# ----------------------------------------------------------------------------- evaluate


def brute_ranks(objs):
    objs = [tuple(o) for o in objs]
    rank = [-1] * len(objs)
    left, r = set(range(len(objs))), 0
    while left:
        front = {i for i in left if not any(ms.dominates(objs[j], objs[i]) for j in left)}
        for i in front:
            rank[i] = r
        left -= front
        r += 1
    return rank


def test_evaluate_single_and_pair():
    prob = problem([[2.0, 3.0], [3.0, 4.0]])
    [rec] = ms.evaluate([((0, 1), ())], prob)
    assert rec.pareto_rank == 0
    good, bad = ((0,), (1,)), ((), (1, 0))
    recs = ms.evaluate([bad, good], prob)
    assert [r.pareto_rank for r in recs] == [1, 0]
    assert recs[1].fitness > recs[0].fitness
    with pytest.raises(ms.MissionError):
        ms.evaluate([], prob)


@pytest.mark.parametrize("seed", range(5))
def test_evaluate_ranks_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, 6, 2)
    pop = [ms.random_chromosome(prob, rng) for _ in range(20)]
    objs = [ms.decode(c, prob).objectives for c in pop]
    recs = ms.evaluate(pop, prob)
    assert [r.pareto_rank for r in recs] == brute_ranks(objs)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 6)), min_size=1, max_size=25))
def test_fitness_is_rank_major(objs):
    recs = ms.fitness_from_objectives(objs)
    assert [r.pareto_rank for r in recs] == brute_ranks(objs)
    for a in recs:
        assert a.density >= 0 and a.fitness >= 0
        for b in recs:
            if a.pareto_rank < b.pareto_rank:
                assert a.fitness > b.fitness


def test_crowding_prefers_isolated_points():
    recs = ms.fitness_from_objectives([(0, 10), (1, 9), (1.1, 8.9), (5, 5), (10, 0)])
    assert all(r.pareto_rank == 0 for r in recs)
    assert recs[3].fitness > recs[1].fitness


# ----------------------------------------------------------------------------- operators


def test_bcrc_identical_optimal_parents_keep_makespan():
    # one action per route: the parent's own slot is always a reinsertion candidate
    for k in range(10):
        rng = np.random.default_rng(k)
        prob = random_problem(rng, 3, 3, prec_p=0.3)
        best = ms.brute_force_schedule(prob)
        p = ms.make_chromosome([[a for a, _, _ in seq] for seq in best.entries])
        child = ms.bcrc_crossover(p, p, prob, rng)
        assert ms.is_valid(child, prob)
        assert ms.decode(child, prob).objectives == pytest.approx(best.objectives)


def test_bcrc_identical_parents_never_worse_for_single_action_routes():
    for k in range(20):
        rng = np.random.default_rng(k)
        prob = random_problem(rng, 3, 3, prec_p=0.3)
        p = ms.make_chromosome([[a] for a in rng.permutation(3)])
        if not np.all(np.isfinite(prob.durations)) or not ms.decode(p, prob).feasible:
            continue
        child = ms.bcrc_crossover(p, p, prob, rng)
        assert ms.decode(child, prob).objectives <= ms.decode(p, prob).objectives


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_bcrc_child_is_valid(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, int(rng.integers(1, 8)), int(rng.integers(1, 4)), prec_p=0.2, unsupported_p=0.3)
    p1, p2 = ms.random_chromosome(prob, rng), ms.random_chromosome(prob, rng)
    assert ms.is_valid(ms.bcrc_crossover(p1, p2, prob, rng), prob)


@pytest.mark.parametrize("seed", range(10))
def test_bcrc_reinsertion_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, 4, 2)
    perm = [int(a) for a in rng.permutation(4)]
    p1 = ms.make_chromosome([perm[:2], []])  # one non-empty route: the removed set is fixed
    p2 = ms.make_chromosome([perm[1:3], [perm[3], perm[0]]])
    seqs = [[a for a in s if a not in perm[:2]] for s in p2]
    for a in perm[:2]:
        seqs = [list(s) for s in exhaustive_insertion(seqs, a, prob)]
    assert ms.bcrc_crossover(p1, p2, prob, np.random.default_rng(0)) == ms.make_chromosome(seqs)


def test_mutate_noops():
    prob = problem([[1.0, 1.0]])
    rng = np.random.default_rng(0)
    c = ms.make_chromosome([[0], []])
    assert ms.mutate(c, "intra_swap", prob, rng) == (c, True)
    assert ms.mutate(c, "inter_swap", prob, rng) == (c, True)
    with pytest.raises(ms.MissionError):
        ms.mutate(c, "shuffle", prob, rng)


def test_intra_swap_swaps_within_one_robot():
    prob = problem(np.ones((4, 2)))
    c = ms.make_chromosome([[0, 1, 2], [3]])
    child, noop = ms.mutate(c, "intra_swap", prob, np.random.default_rng(0))
    assert not noop
    assert child[1] == (3,)
    assert sorted(child[0]) == [0, 1, 2] and child[0] != c[0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_inter_swap_respects_capability(seed):
    rng = np.random.default_rng(seed)
    prob = random_problem(rng, 6, 3, unsupported_p=0.5)
    c = ms.random_chromosome(prob, rng)
    child, noop = ms.mutate(c, "inter_swap", prob, rng)
    assert ms.is_valid(child, prob)
    if not noop:
        moved = [(i, k) for i in range(3) for k in range(len(c[i])) if c[i][k] != child[i][k]]
        assert len(moved) == 2 and moved[0][0] != moved[1][0]


@pytest.mark.parametrize("seed", range(10))
def test_reroute_matches_exhaustive_scan(seed):
    rng = np.random.default_rng(100 + seed)
    prob = random_problem(rng, 4, 2, prec_p=0.2)
    c = ms.random_chromosome(prob, rng)
    for a in range(4):
        seqs = [[x for x in s if x != a] for s in c]
        assert ms.reroute(c, a, prob) == exhaustive_insertion(seqs, a, prob)


def test_reroute_falls_back_when_every_insertion_deadlocks():
    # b must precede a and c must follow a; a's only robot holds (c, b), so every slot deadlocks
    prob = problem([[1.0], [1.0], [1.0]], [(1, 0), (0, 2)])
    child = ms.reroute(ms.make_chromosome([[2, 1, 0]]), 0, prob)
    assert ms.is_valid(child, prob)
    assert child == ((2, 1, 0),)


# ----------------------------------------------------------------------------- operator selection


def test_select_operator_fresh_stats_uniform():
    stats = ms.OperatorStats()
    p = stats.probabilities()
    assert np.allclose(p, 1 / len(ms.OPERATORS))
    rng = np.random.default_rng(0)
    draws = [ms.select_operator(stats, rng) for _ in range(4000)]
    for op in ms.OPERATORS:
        assert abs(draws.count(op) / 4000 - 0.25) < 0.03


def test_select_operator_dominant_with_floor():
    stats = ms.OperatorStats()
    for _ in range(30):
        stats.record("reroute", 0.2)
    p = stats.probabilities()
    i = ms.OPERATORS.index("reroute")
    assert p[i] == p.max() and all(p[i] > p[j] for j in range(len(p)) if j != i)
    assert np.all(p >= 0.05 - 1e-15)
    assert abs(p.sum() - 1.0) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(ms.OPERATORS), st.floats(-1, 1)), max_size=40))
def test_probabilities_sum_to_one(events):
    stats = ms.OperatorStats()
    for op, imp in events:
        stats.record(op, imp)
    p = stats.probabilities()
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.all(p >= 0.05 - 1e-15)


def test_record_is_ewma():
    stats = ms.OperatorStats()
    stats.record("bcrc", 1.0)
    stats.record("bcrc", 0.0)
    assert stats.weights[0] == pytest.approx(0.09)


# ----------------------------------------------------------------------------- solve

FAST = ms.SolverConfig(agents=2, population=16, generations=100, patience=30)


def test_solve_single_action():
    res = ms.solve(problem([[4.0]]), FAST)
    assert res.schedule.entries == [[(0, 0.0, 4.0)]]


def test_solve_empty_problem():
    prob = ms.MissionProblem(np.zeros((2, 3)), np.zeros((0, 3)), np.zeros((0, 2)), np.zeros((0, 2)))
    res = ms.solve(prob, FAST)
    assert res.feasible and res.schedule.makespan == 0.0 and res.schedule.entries == [[], []]


def test_solve_symmetric_matches_brute_force():
    prob = problem([[3.0, 3.0], [5.0, 5.0], [2.0, 2.0], [4.0, 4.0]])
    res = ms.solve(prob, FAST)
    assert res.schedule.makespan == pytest.approx(ms.brute_force_schedule(prob).makespan)
    assert res.schedule.makespan == pytest.approx(7.0)


def test_solve_chain_precedence():
    prob = random_problem(np.random.default_rng(5), 5, 2)
    prob = ms.MissionProblem(prob.depots, prob.locations, prob.durations, prob.costs, [(0, 1), (1, 2), (2, 3)],
                             prob.speeds)
    s = ms.solve(prob, FAST).schedule
    st_ = s.start_times()
    assert st_[0] < st_[1] < st_[2] < st_[3]
    assert ms.verify_schedule(s, prob) == []


def test_solve_is_deterministic():
    prob = random_problem(np.random.default_rng(8), 7, 2, prec_p=0.2)
    a, b = ms.solve(prob, FAST), ms.solve(prob, FAST)
    assert a.chromosome == b.chromosome and a.history == b.history
    c = ms.solve(prob, ms.SolverConfig(**{**FAST.__dict__, "seed": 1}))
    assert ms.is_valid(c.chromosome, prob)


def test_elitism_best_makespan_non_increasing():
    prob = random_problem(np.random.default_rng(9), 8, 3, prec_p=0.15)
    res = ms.solve(prob, ms.SolverConfig(agents=3, population=10, generations=60, exchange_period=5))
    assert res.generations == 60
    for hist in res.history:
        assert len(hist) == 61
        assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_patience_stops_early():
    res = ms.solve(problem([[1.0, 1.0]]), ms.SolverConfig(agents=1, population=4, generations=500, patience=5))
    assert res.generations == 6  # the first generation sets the baseline


@pytest.mark.parametrize("seed", range(5))
def test_solve_schedule_satisfies_task_taxonomy(seed):
    rng = np.random.default_rng(50 + seed)
    prob = random_problem(rng, 10, 3, prec_p=0.15, unsupported_p=0.3)
    s = ms.solve(prob, FAST).schedule
    assert s.feasible
    assert ms.verify_schedule(s, prob) == []
    # single robot per action and no concurrency per robot
    assert sorted(a for seq in s.entries for a, _, _ in seq) == list(range(10))
    for seq in s.entries:
        for (_, _, f), (_, s2, _) in zip(seq, seq[1:]):
            assert s2 >= f
    for a, b in prob.precedence:
        assert s.finish_times()[a] < s.start_times()[b]


# ----------------------------------------------------------------------------- brute force


def test_brute_force_single_action_best_robot():
    s = ms.brute_force_schedule(problem([[4.0, 2.0, 3.0]]))
    assert s.entries == [[], [(0, 0.0, 2.0)], []]


def test_brute_force_dominating_robot():
    # robot 0 is twice as fast; with 3 unit jobs on robot 1 at 2 s each, splitting still helps
    prob = problem([[1.0, 2.0]] * 3)
    s = ms.brute_force_schedule(prob)
    assert s.makespan == pytest.approx(2.0)
    # when robot 1 is very slow, everything goes to robot 0
    prob = problem([[1.0, 10.0]] * 3)
    s = ms.brute_force_schedule(prob)
    assert s.makespan == pytest.approx(3.0) and s.entries[1] == []


def test_brute_force_matches_enumeration():
    rng = np.random.default_rng(11)
    prob = random_problem(rng, 4, 2, prec_p=0.3)
    best = None
    for assign in itertools.product(range(2), repeat=4):
        for p in itertools.permutations(range(4)):
            seqs = ms.make_chromosome([[a for a in p if assign[a] == i] for i in range(2)])
            s = ms.decode(seqs, prob)
            if s.feasible and (best is None or s.objectives < best):
                best = s.objectives
    assert ms.brute_force_schedule(prob).objectives == pytest.approx(best)


def test_brute_force_refuses_large():
    with pytest.raises(ms.InstanceTooLargeError):
        ms.brute_force_schedule(problem(np.ones((9, 1))))
    with pytest.raises(ms.InstanceTooLargeError):
        ms.brute_force_schedule(problem(np.ones((2, 4))))


def test_solve_matches_brute_force_on_small_instances():
    cfg = ms.SolverConfig(agents=2, population=16, generations=200, patience=30)
    ratios = []
    for k in range(20):
        rng = np.random.default_rng(1000 + k)
        prob = random_problem(rng, int(rng.integers(2, 6)), 2, prec_p=0.2)
        ratios.append(ms.solve(prob, cfg).schedule.makespan / ms.brute_force_schedule(prob).makespan)
    assert min(ratios) >= 1 - 1e-9
    assert sum(r <= 1.0 + 1e-9 for r in ratios) >= 19


# ----------------------------------------------------------------------------- problem construction


def test_actions_from_counts():
    layout = default_layout()
    n = len(layout.plant_centers())
    prob = ms.actions_from_counts(np.zeros(n, int), layout)
    assert prob.n_actions == 0
    assert ms.solve(prob, FAST).schedule.entries == [[], []]

    counts = np.zeros(n, int)
    counts[7] = 3
    prob = ms.actions_from_counts(counts, layout)
    assert prob.n_actions == 1
    assert prob.durations[0].tolist() == [3 * 20.0, 3 * 30.0]
    assert prob.names == ["plant_7"]

    counts = np.zeros(n, int)
    idx = np.random.default_rng(0).choice(n, 20, replace=False)
    counts[idx] = 4
    prob = ms.actions_from_counts(counts, layout)
    assert prob.n_actions == 20
    assert np.allclose(prob.locations, layout.plant_centers()[np.sort(idx)])
    d = np.linalg.norm(prob.locations[0] - prob.locations[1])
    assert prob.transit[0, 0, 1] == pytest.approx(d / 0.5)
    with pytest.raises(ms.MissionError):
        ms.actions_from_counts(np.ones(3), layout)


def test_capability_flag():
    layout = default_layout()
    counts = np.zeros(len(layout.plant_centers()), int)
    counts[:5] = 2
    robots = (ms.RobotSpec("a"), ms.RobotSpec("scout", can_harvest=False))
    prob = ms.actions_from_counts(counts, layout, robots)
    assert np.all(np.isinf(prob.durations[:, 1]))
    s = ms.solve(prob, FAST).schedule
    assert s.entries[1] == []


# ----------------------------------------------------------------------------- serialization


def test_problem_and_schedule_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    prob = random_problem(rng, 5, 3, prec_p=0.3, unsupported_p=0.3)
    ms.write_json(prob.to_dict(), tmp_path / "p.json")
    back = ms.MissionProblem.from_dict(json.loads((tmp_path / "p.json").read_text()))
    assert np.array_equal(back.durations, prob.durations)
    assert np.allclose(back.transit, prob.transit)
    assert back.precedence == prob.precedence

    s = ms.solve(prob, FAST).schedule
    ms.write_json(s.to_dict(), tmp_path / "s.json")
    assert ms.Schedule.from_dict(json.loads((tmp_path / "s.json").read_text())) == s
    s.write_gantt_csv(tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "robot,action,start,finish"
    assert len(lines) == 1 + 5
