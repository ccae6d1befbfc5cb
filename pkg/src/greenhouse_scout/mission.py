"""Multi-robot harvest scheduling with cross-schedule precedence.

Robots are depots, harvest actions are customers (a multi-depot routing
problem). Several GA populations ("agents") evolve chromosomes of per-robot
action sequences, choose operators adaptively and periodically share their
best solution and operator statistics.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

PENALTY = 1e6
PREC_EPS = 1e-3
OPERATORS = ("bcrc", "intra_swap", "inter_swap", "reroute")


class MissionError(ValueError):
    pass


class InstanceTooLargeError(MissionError):
    pass


@dataclass
class MissionProblem:
    """``durations[a, i]`` / ``costs[a, i]`` per action and robot; inf duration marks unsupported pairs.

    Transition time between locations is Euclidean distance over robot speed,
    unless an explicit ``transit`` array (m, n+1, n+1) is given, where index n
    is the robot's depot.
    """

    depots: np.ndarray  # (m, 3)
    locations: np.ndarray  # (n, 3)
    durations: np.ndarray  # (n, m)
    costs: np.ndarray  # (n, m)
    precedence: list = field(default_factory=list)
    speeds: np.ndarray | None = None  # (m,)
    transit: np.ndarray | None = None
    names: list | None = None

    def __post_init__(self):
        self.depots = np.asarray(self.depots, dtype=float).reshape(-1, 3)
        self.locations = np.asarray(self.locations, dtype=float).reshape(-1, 3)
        n, m = len(self.locations), len(self.depots)
        self.durations = np.asarray(self.durations, dtype=float).reshape(n, m)
        self.costs = np.asarray(self.costs, dtype=float).reshape(n, m)
        self.precedence = [(int(a), int(b)) for a, b in self.precedence]
        if self.speeds is None:
            self.speeds = np.full(m, np.inf)
        self.speeds = np.asarray(self.speeds, dtype=float).reshape(m)
        if m == 0:
            raise MissionError("at least one robot is required")
        if n and np.any(np.all(~np.isfinite(self.durations), axis=1)):
            bad = np.flatnonzero(np.all(~np.isfinite(self.durations), axis=1))
            raise MissionError(f"actions {bad.tolist()} are not supported by any robot")
        for a, b in self.precedence:
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise MissionError(f"bad precedence pair ({a}, {b})")
        if _topo_order(n, self.precedence) is None:
            raise MissionError("precedence relation has a cycle")
        if self.transit is None:
            pts = np.vstack([self.locations, np.zeros((1, 3))])
            T = np.zeros((m, n + 1, n + 1))
            for i in range(m):
                pts[n] = self.depots[i]
                D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
                T[i] = 0.0 if np.isinf(self.speeds[i]) else D / self.speeds[i]
            self.transit = T
        self.transit = np.asarray(self.transit, dtype=float).reshape(m, n + 1, n + 1)
        self._preds = [[] for _ in range(n)]
        for a, b in self.precedence:
            self._preds[b].append(a)
        self._supports = [np.flatnonzero(np.isfinite(self.durations[a])).tolist() for a in range(n)]

    @property
    def n_actions(self) -> int:
        return len(self.locations)

    @property
    def n_robots(self) -> int:
        return len(self.depots)

    def supports(self, a: int) -> list:
        return self._supports[a]

    def to_dict(self) -> dict:
        fin = lambda x: x if math.isfinite(x) else None  # noqa: E731
        return {
            "depots": self.depots.tolist(),
            "locations": self.locations.tolist(),
            "durations": [[fin(float(v)) for v in r] for r in self.durations],
            "costs": [[fin(float(v)) for v in r] for r in self.costs],
            "precedence": [list(p) for p in self.precedence],
            "speeds": [fin(float(v)) for v in self.speeds],
            "names": self.names,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MissionProblem":
        unfin = lambda rows: [[np.inf if v is None else v for v in r] for r in rows]  # noqa: E731
        n = len(d["locations"])
        m = len(d["depots"])
        return cls(d["depots"], d["locations"], np.array(unfin(d["durations"]), float).reshape(n, m),
                   np.array(unfin(d["costs"]), float).reshape(n, m), d.get("precedence", []),
                   None if d.get("speeds") is None else [np.inf if v is None else v for v in d["speeds"]],
                   names=d.get("names"))


def _topo_order(n, edges):
    indeg = [0] * n
    succ = [[] for _ in range(n)]
    for a, b in edges:
        succ[a].append(b)
        indeg[b] += 1
    queue = [v for v in range(n) if indeg[v] == 0]
    out = []
    while queue:
        v = queue.pop()
        out.append(v)
        for w in succ[v]:
            indeg[w] -= 1
            if indeg[w] == 0:
                queue.append(w)
    return out if len(out) == n else None


Chromosome = tuple  # tuple of per-robot tuples of action ids


def make_chromosome(seqs) -> Chromosome:
    return tuple(tuple(int(a) for a in s) for s in seqs)


def is_valid(chrom: Chromosome, prob: MissionProblem) -> bool:
    seen = [a for s in chrom for a in s]
    if len(chrom) != prob.n_robots or sorted(seen) != list(range(prob.n_actions)):
        return False
    return all(np.isfinite(prob.durations[a, i]) for i, s in enumerate(chrom) for a in s)


@dataclass
class Schedule:
    entries: list  # per robot: list of (action, start, finish)
    makespan: float
    cost: float
    feasible: bool

    @property
    def objectives(self):
        return (self.makespan, self.cost)

    def start_times(self) -> dict:
        return {a: s for seq in self.entries for a, s, _ in seq}

    def finish_times(self) -> dict:
        return {a: f for seq in self.entries for a, _, f in seq}

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "makespan": self.makespan,
            "cost": self.cost,
            "robots": [[{"action": int(a), "start": float(s), "finish": float(f)} for a, s, f in seq]
                       for seq in self.entries],
        }

    @classmethod
    def from_dict(cls, d) -> "Schedule":
        ent = [[(int(e["action"]), float(e["start"]), float(e["finish"])) for e in seq] for seq in d["robots"]]
        return cls(ent, float(d["makespan"]), float(d["cost"]), bool(d["feasible"]))

    def write_gantt_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["robot", "action", "start", "finish"])
            for i, seq in enumerate(self.entries):
                for a, s, f in seq:
                    w.writerow([i, a, repr(float(s)), repr(float(f))])


def decode(chrom: Chromosome, prob: MissionProblem) -> Schedule:
    """Earliest-start schedule of fixed per-robot sequences.

    Same-robot order and precedence pairs form a DAG over actions; start times
    are its longest paths. A cycle means the sequences deadlock each other.
    """
    n = prob.n_actions
    robot = [-1] * n
    nxt = [-1] * n
    prev = [-1] * n
    for i, seq in enumerate(chrom):
        for k, a in enumerate(seq):
            robot[a] = i
            if k:
                prev[a] = seq[k - 1]
                nxt[seq[k - 1]] = a
    dur = [prob.durations[a, robot[a]] for a in range(n)]
    cost = float(sum(prob.costs[a, robot[a]] for a in range(n)))
    indeg = [len(prob._preds[b]) + (prev[b] >= 0) for b in range(n)]
    succ = [[] for _ in range(n)]
    for a, b in prob.precedence:
        succ[a].append(b)
    start = [0.0] * n
    for a in range(n):
        if prev[a] < 0:
            start[a] = prob.transit[robot[a], n, a]
    ready = [a for a in range(n) if indeg[a] == 0]
    done = 0
    while ready:
        a = ready.pop()
        done += 1
        fin = start[a] + dur[a]
        b = nxt[a]
        if b >= 0:
            start[b] = max(start[b], fin + prob.transit[robot[a], a, b])
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
        for b in succ[a]:
            start[b] = max(start[b], fin + PREC_EPS)
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    if done < n:
        return Schedule([[] for _ in chrom], PENALTY, cost, False)
    entries = [[(a, start[a], start[a] + dur[a]) for a in seq] for seq in chrom]
    makespan = max((start[a] + dur[a] for a in range(n)), default=0.0)
    return Schedule(entries, float(makespan), cost, True)


def verify_schedule(sched: Schedule, prob: MissionProblem, tol: float = 1e-9) -> list:
    """Violated invariants as human-readable strings (empty when valid)."""
    errs = []
    seen = [a for seq in sched.entries for a, _, _ in seq]
    if sorted(seen) != list(range(prob.n_actions)):
        errs.append("actions not covered exactly once")
    for i, seq in enumerate(sched.entries):
        for k, (a, s, f) in enumerate(seq):
            if abs((f - s) - prob.durations[a, i]) > tol:
                errs.append(f"action {a}: finish - start != duration")
            if k:
                pa, _, pf = seq[k - 1]
                if s < pf + prob.transit[i, pa, a] - tol:
                    errs.append(f"robot {i}: actions {pa} and {a} overlap")
    st, ft = sched.start_times(), sched.finish_times()
    for a, b in prob.precedence:
        if a in ft and b in st and not ft[a] < st[b]:
            errs.append(f"precedence ({a}, {b}) violated")
    return errs


# ----------------------------------------------------------------------------- ranking

def dominates(x, y) -> bool:
    return all(a <= b for a, b in zip(x, y)) and any(a < b for a, b in zip(x, y))


def non_dominated_sort(objs) -> np.ndarray:
    """Pareto rank per row (0 = non-dominated), fast non-dominated sorting."""
    objs = np.asarray(objs, dtype=float)
    n = len(objs)
    le = np.all(objs[:, None] <= objs[None], axis=2)
    lt = np.any(objs[:, None] < objs[None], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    count = dom.sum(axis=0)
    rank = np.full(n, -1)
    front = np.flatnonzero(count == 0)
    r = 0
    while len(front):
        rank[front] = r
        for i in front:
            count[dom[i]] -= 1
        count[front] = -1
        front = np.flatnonzero(count == 0)
        r += 1
    return rank


def crowding_distance(objs) -> np.ndarray:
    objs = np.asarray(objs, dtype=float)
    n, k = objs.shape
    d = np.zeros(n)
    if n <= 2:
        return np.full(n, np.inf)
    for j in range(k):
        order = np.argsort(objs[:, j], kind="stable")
        span = objs[order[-1], j] - objs[order[0], j]
        d[order[0]] = d[order[-1]] = np.inf
        if span > 0:
            d[order[1:-1]] += (objs[order[2:], j] - objs[order[:-2], j]) / span
    return d


@dataclass(frozen=True)
class FitnessRecord:
    pareto_rank: int
    density: float
    fitness: float


def fitness_from_objectives(objs) -> list:
    """Rank-major scalar fitness; density = 1/(1 + crowding) is in [0, 1]."""
    objs = np.asarray(objs, dtype=float).reshape(-1, 2)
    rank = non_dominated_sort(objs)
    crowd = np.zeros(len(objs))
    for r in np.unique(rank):
        idx = np.flatnonzero(rank == r)
        crowd[idx] = crowding_distance(objs[idx])
    dens = np.where(np.isinf(crowd), 0.0, 1.0 / (1.0 + crowd))
    return [FitnessRecord(int(r), float(s), 1.0 / (1.0 + r + 0.5 * s)) for r, s in zip(rank, dens)]


def evaluate(population, prob: MissionProblem) -> list:
    if not population:
        raise MissionError("empty population")
    return fitness_from_objectives([decode(c, prob).objectives for c in population])


# ----------------------------------------------------------------------------- operators

class _Decoder:
    """Memoised decode for one problem."""

    def __init__(self, prob):
        self.prob = prob
        self.cache = {}

    def __call__(self, chrom) -> Schedule:
        s = self.cache.get(chrom)
        if s is None:
            s = decode(chrom, self.prob)
            self.cache[chrom] = s
        return s


def _remove(chrom, actions) -> list:
    drop = set(actions)
    return [[a for a in s if a not in drop] for s in chrom]


def insertion_candidates(seqs, a, prob):
    for i in prob.supports(a):
        for k in range(len(seqs[i]) + 1):
            yield i, k


def _insert(seqs, a, i, k) -> Chromosome:
    out = [tuple(s) for s in seqs]
    out[i] = tuple(seqs[i][:k]) + (a,) + tuple(seqs[i][k:])
    return tuple(out)


def best_insertion(seqs, a, prob, decoder=None):
    """(robot, position) minimising (makespan, cost) over feasible insertions, or None.

    Ties go to the first candidate in (robot, position) order.
    """
    dec = decoder or (lambda c: decode(c, prob))
    best, best_obj = None, None
    for i, k in insertion_candidates(seqs, a, prob):
        s = dec(_insert(seqs, a, i, k))
        if not s.feasible:
            continue
        if best_obj is None or s.objectives < best_obj:
            best, best_obj = (i, k), s.objectives
    return best


def _reinsert(seqs, a, prob, rng, decoder):
    pos = best_insertion(seqs, a, prob, decoder)
    if pos is None:
        sup = prob.supports(a)
        i = sup[int(rng.integers(len(sup)))]
        pos = (i, len(seqs[i]))
    return [list(s) for s in _insert(seqs, a, *pos)]


def bcrc_crossover(p1: Chromosome, p2: Chromosome, prob: MissionProblem, rng, decoder=None) -> Chromosome:
    """Best-cost route crossover: drop one of p1's routes from p2, then best-reinsert its actions."""
    routes = [i for i, s in enumerate(p1) if s]
    if not routes:
        return make_chromosome(p2)
    route = p1[routes[int(rng.integers(len(routes)))]]
    seqs = _remove(p2, route)
    for a in route:
        seqs = _reinsert(seqs, a, prob, rng, decoder)
    return make_chromosome(seqs)


def reroute(chrom: Chromosome, a: int, prob: MissionProblem, rng=None, decoder=None) -> Chromosome:
    seqs = _remove(chrom, [a])
    return make_chromosome(_reinsert(seqs, a, prob, rng or np.random.default_rng(0), decoder))


def mutate(chrom: Chromosome, op: str, prob: MissionProblem, rng, decoder=None):
    """Returns ``(child, noop)``."""
    seqs = [list(s) for s in chrom]
    if op == "intra_swap":
        cand = [i for i, s in enumerate(seqs) if len(s) >= 2]
        if not cand:
            return chrom, True
        i = cand[int(rng.integers(len(cand)))]
        j, k = rng.choice(len(seqs[i]), size=2, replace=False)
        seqs[i][j], seqs[i][k] = seqs[i][k], seqs[i][j]
        return make_chromosome(seqs), False
    if op == "inter_swap":
        pairs = [(i, j, r, s) for i, si in enumerate(seqs) for r, s in enumerate(seqs) if r > i
                 for j in range(len(si)) for s in range(len(seqs[r]))
                 if np.isfinite(prob.durations[si[j], r]) and np.isfinite(prob.durations[seqs[r][s], i])]
        if not pairs:
            return chrom, True
        i, j, r, s = pairs[int(rng.integers(len(pairs)))]
        seqs[i][j], seqs[r][s] = seqs[r][s], seqs[i][j]
        return make_chromosome(seqs), False
    if op == "reroute":
        if prob.n_actions == 0:
            return chrom, True
        a = int(rng.integers(prob.n_actions))
        return reroute(chrom, a, prob, rng, decoder), False
    raise MissionError(f"unknown mutation operator {op!r}")


@dataclass
class OperatorStats:
    names: tuple = OPERATORS
    weights: np.ndarray | None = None
    decay: float = 0.9
    floor: float = 0.05

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.zeros(len(self.names))
        self.weights = np.asarray(self.weights, dtype=float)

    def probabilities(self) -> np.ndarray:
        k = len(self.names)
        tot = self.weights.sum()
        if tot <= 0:
            return np.full(k, 1.0 / k)
        return self.floor + (1.0 - k * self.floor) * self.weights / tot

    def record(self, op: str, improvement: float):
        i = self.names.index(op)
        self.weights[i] = self.decay * self.weights[i] + (1.0 - self.decay) * max(0.0, float(improvement))


def select_operator(stats: OperatorStats, rng) -> str:
    return stats.names[int(rng.choice(len(stats.names), p=stats.probabilities()))]


# ----------------------------------------------------------------------------- GA

@dataclass(frozen=True)
class SolverConfig:
    agents: int = 4
    population: int = 64
    generations: int = 400
    exchange_period: int = 10
    seed: int = 0
    tournament: int = 2
    patience: int | None = None  # stop after this many generations without improvement


def random_chromosome(prob: MissionProblem, rng) -> Chromosome:
    """Random assignment whose sequences follow one random topological order (deadlock free)."""
    n = prob.n_actions
    pri = rng.random(n)
    indeg = [len(prob._preds[b]) for b in range(n)]
    succ = [[] for _ in range(n)]
    for a, b in prob.precedence:
        succ[a].append(b)
    ready = [a for a in range(n) if indeg[a] == 0]
    seqs = [[] for _ in range(prob.n_robots)]
    while ready:
        ready.sort(key=lambda a: pri[a])
        a = ready.pop(0)
        sup = prob.supports(a)
        seqs[sup[int(rng.integers(len(sup)))]].append(a)
        for b in succ[a]:
            indeg[b] -= 1
            if indeg[b] == 0:
                ready.append(b)
    return make_chromosome(seqs)


class _Agent:
    def __init__(self, prob, cfg: SolverConfig, rng, decoder):
        self.prob, self.cfg, self.rng, self.dec = prob, cfg, rng, decoder
        self.stats = OperatorStats()
        self.pop = [random_chromosome(prob, rng) for _ in range(cfg.population)]
        self.history = []
        self._rank()

    def _rank(self):
        objs = [self.dec(c).objectives for c in self.pop]
        self.fit = fitness_from_objectives(objs)
        self.history.append(min(objs)[0])

    def best(self) -> Chromosome:
        return min(self.pop, key=lambda c: self.dec(c).objectives)

    def _tournament(self) -> Chromosome:
        idx = self.rng.choice(len(self.pop), size=min(self.cfg.tournament, len(self.pop)), replace=False)
        return self.pop[max(idx, key=lambda i: (self.fit[i].fitness, -i))]

    def step(self):
        elite = self.best()
        children = []
        for _ in range(self.cfg.population):
            op = select_operator(self.stats, self.rng)
            parent = self._tournament()
            if op == "bcrc":
                child = bcrc_crossover(parent, self._tournament(), self.prob, self.rng, self.dec)
            else:
                child, _ = mutate(parent, op, self.prob, self.rng, self.dec)
            pm, cm = self.dec(parent).makespan, self.dec(child).makespan
            self.stats.record(op, (pm - cm) / pm if pm > 0 and self.dec(child).feasible else 0.0)
            children.append(child)
        pool = list(dict.fromkeys(self.pop + children))  # drop duplicates, keep order
        fit = fitness_from_objectives([self.dec(c).objectives for c in pool])
        order = sorted(range(len(pool)), key=lambda i: (-fit[i].fitness, i))
        nxt = [pool[i] for i in order[: self.cfg.population]]
        if elite not in nxt:
            nxt[-1] = elite
        while len(nxt) < self.cfg.population:
            nxt.append(random_chromosome(self.prob, self.rng))
        self.pop = nxt
        self._rank()

    def receive(self, chroms, weights):
        worst = sorted(range(len(self.pop)), key=lambda i: (self.fit[i].fitness, -i))
        incoming = [c for c in chroms if c not in self.pop]
        for c, i in zip(incoming, worst):
            self.pop[i] = c
        self.stats.weights = np.mean([self.stats.weights, *weights], axis=0)
        self._rank()
        self.history.pop()  # re-rank is not a generation


@dataclass
class SolveResult:
    schedule: Schedule
    chromosome: Chromosome
    history: list  # per agent best makespan per generation
    generations: int

    @property
    def feasible(self) -> bool:
        return self.schedule.feasible


def solve(prob: MissionProblem, config: SolverConfig | None = None) -> SolveResult:
    """Distributed GA with deterministic round-robin agent interleaving."""
    cfg = config or SolverConfig()
    if prob.n_actions == 0:
        return SolveResult(Schedule([[] for _ in range(prob.n_robots)], 0.0, 0.0, True),
                           make_chromosome([[] for _ in range(prob.n_robots)]), [], 0)
    dec = _Decoder(prob)
    rngs = [np.random.default_rng(np.random.SeedSequence([int(cfg.seed), k])) for k in range(cfg.agents)]
    agents = [_Agent(prob, cfg, r, dec) for r in rngs]
    best_val, stall, gen = None, 0, 0
    for gen in range(1, cfg.generations + 1):
        for ag in agents:
            ag.step()
        if cfg.exchange_period and gen % cfg.exchange_period == 0 and len(agents) > 1:
            msgs = [(ag.best(), ag.stats.weights.copy()) for ag in agents]
            for k, ag in enumerate(agents):
                others = [m for j, m in enumerate(msgs) if j != k]
                ag.receive([m[0] for m in others], [m[1] for m in others])
        cur = min(dec(ag.best()).objectives for ag in agents)
        if best_val is None or cur < best_val:
            best_val, stall = cur, 0
        else:
            stall += 1
        if cfg.patience is not None and stall >= cfg.patience:
            break
    best = min((ag.best() for ag in agents), key=lambda c: dec(c).objectives)
    return SolveResult(dec(best), best, [ag.history for ag in agents], gen)


def brute_force_schedule(prob: MissionProblem) -> Schedule:
    """Exhaustive search over assignments and orderings (n <= 8, m <= 3)."""
    n, m = prob.n_actions, prob.n_robots
    if n > 8 or m > 3:
        raise InstanceTooLargeError(f"brute force limited to n <= 8, m <= 3 (got n={n}, m={m})")
    best = None
    for perm in itertools.permutations(range(n)):
        for cuts in itertools.combinations_with_replacement(range(n + 1), m - 1):
            bounds = (0, *cuts, n)
            seqs = tuple(perm[bounds[i]: bounds[i + 1]] for i in range(m))
            if any(not np.isfinite(prob.durations[a, i]) for i, s in enumerate(seqs) for a in s):
                continue
            s = decode(seqs, prob)
            if s.feasible and (best is None or s.objectives < best.objectives):
                best = s
    if best is None:
        return Schedule([[] for _ in range(m)], PENALTY, math.inf, False)
    return best


# ----------------------------------------------------------------------------- problem construction

@dataclass(frozen=True)
class RobotSpec:
    name: str = "robot"
    depot: tuple = (0.0, 0.0, 0.0)
    speed: float = 0.5  # m/s
    time_per_fruit: float = 20.0  # s
    cost_per_fruit: float = 1.0
    can_harvest: bool = True


DEFAULT_ROBOTS = (
    RobotSpec("ground_arm", (0.0, 0.0, 0.0), 0.5, 20.0, 1.0),
    RobotSpec("aerial_arm", (0.0, 0.0, 0.0), 1.0, 30.0, 2.5),
)


def actions_from_counts(counts, layout, robots=DEFAULT_ROBOTS) -> MissionProblem:
    """One harvest action per plant with a positive count, located at the plant centre."""
    counts = np.asarray(counts, dtype=int).reshape(-1)
    centers = layout.plant_centers()
    if len(counts) != len(centers):
        raise MissionError(f"{len(counts)} counts for {len(centers)} plants")
    plants = np.flatnonzero(counts > 0)
    n, m = len(plants), len(robots)
    dur = np.full((n, m), np.inf)
    cost = np.full((n, m), np.inf)
    for i, r in enumerate(robots):
        if r.can_harvest:
            dur[:, i] = counts[plants] * r.time_per_fruit
            cost[:, i] = counts[plants] * r.cost_per_fruit
    return MissionProblem([r.depot for r in robots], centers[plants].reshape(-1, 3), dur, cost, [],
                          [r.speed for r in robots], names=[f"plant_{int(p)}" for p in plants])


def write_json(obj: dict, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
