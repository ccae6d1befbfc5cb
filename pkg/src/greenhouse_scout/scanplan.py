"""Scan waypoints, path interpolation and time-optimal path parameterisation.

The time parameterisation works on the squared path speed ``x = sdot**2``
and path acceleration ``u = sddot`` over a grid on ``s in [0, 1]``. With
per-DoF box limits every stage is a two-variable linear program, solved
exactly by enumerating the vertices of its constraint polygon.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, PPoly

from .spatial import wrap_angle


class PlanningError(RuntimeError):
    pass


class InfeasibleError(RuntimeError):
    def __init__(self, stage: int, msg: str = ""):
        super().__init__(f"empty controllable set at stage {stage}" + (f": {msg}" if msg else ""))
        self.stage = stage


@dataclass(frozen=True)
class ScanParams:
    a: float = 0.4  # semi-axis along the row (m)
    b: float = 1.0  # semi-axis across the row (m)
    m_wp: int = 8  # waypoints per ellipse side
    arc_span: float = 1.0  # angular span of one side's arc (rad)
    height_offsets: tuple = (0.12, -0.04)  # body height relative to plant centre, cycled
    pitch_pattern: tuple = (-math.radians(20.0), math.radians(20.0))  # tool pitch, cycled
    transit_clearance: float = 0.25  # extra distance beyond the table end (m)
    uav_radius: float = 0.6
    kink_angle: float = math.radians(60.0)

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError("ellipse semi-axes must be positive")
        if self.m_wp < 3:
            raise ValueError("need at least 3 waypoints per ellipse")


@dataclass(frozen=True)
class KinodynamicLimits:
    v_max: tuple = (0.6, 0.6, 0.4, 0.8, 1.5, 1.5, 1.5)
    a_max: tuple = (0.6, 0.6, 0.5, 1.0, 3.0, 3.0, 3.0)

    def __post_init__(self):
        if min(self.v_max) <= 0 or min(self.a_max) <= 0:
            raise ValueError("kinodynamic limits must be strictly positive")
        if len(self.v_max) != len(self.a_max):
            raise ValueError("velocity and acceleration limits differ in length")

    def scaled(self, factor: float) -> "KinodynamicLimits":
        return KinodynamicLimits(tuple(v * factor for v in self.v_max), tuple(a * factor for a in self.a_max))


@dataclass
class Path:
    """Ordered waypoints in reduced coordinates (x, y, z, psi, q1, q2, q3).

    ``stops`` are interior waypoint indices where the path comes to rest.
    """

    waypoints: np.ndarray
    stops: tuple = ()

    def __post_init__(self):
        self.waypoints = np.atleast_2d(np.asarray(self.waypoints, dtype=float))
        if len(self.waypoints) < 2:
            raise ValueError("a path needs at least two waypoints")
        d = np.linalg.norm(np.diff(_unwrap_yaw(self.waypoints), axis=0), axis=1)
        if np.any(d == 0):
            raise ValueError("consecutive waypoints must differ")

    def __len__(self):
        return len(self.waypoints)


def _unwrap_yaw(wp: np.ndarray) -> np.ndarray:
    wp = np.array(wp, dtype=float)
    if wp.shape[1] >= 4:
        wp[:, 3] = np.unwrap(wp[:, 3])
    return wp


def _box_distance(p, lo, hi):
    """Euclidean distance from points (N,3) to boxes (M,3),(M,3) -> (N,M)."""
    p = np.atleast_2d(p)[:, None, :]
    d = np.maximum(np.maximum(lo[None] - p, 0.0), p - hi[None])
    return np.linalg.norm(d, axis=2)


def _heading(frm, to):
    return math.atan2(to[1] - frm[1], to[0] - frm[0])


def _waypoint(pos, center, j, params: ScanParams):
    z = center[2] + params.height_offsets[j % len(params.height_offsets)]
    pitch = params.pitch_pattern[j % len(params.pitch_pattern)]
    psi = _heading(pos, center)
    return np.array([pos[0], pos[1], z, psi, 0.0, 0.0, pitch])


def plan_plant_ellipse(plant_center, params: ScanParams, side: str = "full",
                       row_dir=(1.0, 0.0), reverse: bool = False, obstacles=None) -> Path:
    """Waypoints on an ellipse around one plant, yawed towards its centre.

    ``side`` is ``left`` (the +normal side, normal = row_dir rotated +90 deg),
    ``right`` or ``full``. Side arcs span ``params.arc_span`` centred on the
    normal and are ordered along +row_dir (``reverse`` flips the order).
    ``obstacles`` is an optional (lo, hi) pair of box arrays; a waypoint whose
    UAV sphere touches one raises :class:`PlanningError`.
    """
    c = np.asarray(plant_center, dtype=float)
    u = np.asarray(row_dir, dtype=float)
    u = u / np.linalg.norm(u)
    n = np.array([-u[1], u[0]])
    m = params.m_wp
    if side == "full":
        phis = 2.0 * np.pi * np.arange(m) / m
        sign = 1.0
    elif side in ("left", "right"):
        half = params.arc_span / 2.0
        phis = np.linspace(np.pi / 2 + half, np.pi / 2 - half, m)
        sign = 1.0 if side == "left" else -1.0
    else:
        raise ValueError(f"unknown side {side!r}")
    if reverse:
        phis = phis[::-1]
    xy = c[:2] + np.outer(params.a * np.cos(phis), u) + sign * np.outer(params.b * np.sin(phis), n)
    wps = np.array([_waypoint(p, c, j, params) for j, p in enumerate(xy)])
    if obstacles is not None:
        lo, hi = obstacles
        if len(lo):
            dist = _box_distance(wps[:, :3], np.asarray(lo), np.asarray(hi))
            if np.any(dist < params.uav_radius):
                j = int(np.argmin(dist.min(axis=1)))
                raise PlanningError(f"ellipse waypoint {j} intersects an obstacle volume")
    return Path(wps)


def plan_row(row, params: ScanParams) -> Path:
    """Scan both sides of one row and join them around the row end.

    The left side (+normal) is scanned along +row_dir, then two transit
    waypoints clear the far table end, then the right side comes back.
    """
    centers = np.asarray(row.plant_centers, dtype=float)
    if len(centers) == 0:
        raise PlanningError("row has no plants")
    u = np.asarray(row.direction, dtype=float)
    u = u / np.linalg.norm(u)
    n = np.array([-u[1], u[0]])
    lo, hi = row.obstacle_boxes()
    order = np.argsort(centers[:, :2] @ u)
    left = [plan_plant_ellipse(centers[k], params, "left", u, obstacles=(lo, hi)).waypoints for k in order]
    right = [plan_plant_ellipse(centers[k], params, "right", u, reverse=True, obstacles=(lo, hi)).waypoints
             for k in order[::-1]]
    left = np.vstack(left)
    right = np.vstack(right)

    # transit corners beyond the far end of the table
    corners_box = np.vstack([lo, hi])
    far = float(np.max(corners_box[:, :2] @ u))
    row_mid = float(np.mean(centers[:, :2] @ n))
    reach = far + params.uav_radius + params.transit_clearance
    off_l = float(np.mean((left[:, :2] @ n))) - row_mid
    off_r = row_mid - float(np.mean((right[:, :2] @ n)))
    z_mid = float(np.mean(centers[:, 2])) + float(np.mean(params.height_offsets))

    def pt(along, across):
        return along * u + across * n

    c1 = pt(reach, row_mid + off_l)
    c2 = pt(reach, row_mid - off_r)
    psi1 = math.atan2(-u[1], -u[0])  # face back along the row
    t1 = np.array([c1[0], c1[1], z_mid, psi1, 0.0, 0.0, 0.0])
    t2 = np.array([c2[0], c2[1], z_mid, psi1, 0.0, 0.0, 0.0])
    wps = np.vstack([left, t1, t2, right])
    wps[:, 3] = np.unwrap(wps[:, 3])

    transit = [len(left), len(left) + 1]
    stops = tuple(i for i in transit if _xy_turn(wps, i) > params.kink_angle)
    path = Path(wps, stops)
    check_clearance(path, lo, hi, params.uav_radius)
    return path


def _xy_turn(wps, i):
    a = wps[i, :2] - wps[i - 1, :2]
    b = wps[i + 1, :2] - wps[i, :2]
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return math.acos(max(-1.0, min(1.0, float(a @ b / (na * nb)))))


def path_clearance(path: Path, lo, hi, samples_per_segment: int = 40) -> float:
    """Minimum distance from the interpolated UAV centre track to the boxes."""
    g = interpolate_path(path)
    s = np.linspace(0.0, 1.0, samples_per_segment * (len(path) - 1) + 1)
    s = np.union1d(s, g.knots)
    pts = g.q(s)[:, :3]
    if len(lo) == 0:
        return math.inf
    return float(_box_distance(pts, np.asarray(lo), np.asarray(hi)).min())


def check_clearance(path: Path, lo, hi, radius: float):
    c = path_clearance(path, lo, hi)
    if c < radius:
        raise PlanningError(f"path clearance {c:.3f} m below UAV radius {radius:.3f} m")


class GeometricPath:
    """Piecewise cubic q(s), s in [0, 1]; C2 except at stop knots where q' = 0."""

    def __init__(self, waypoints: np.ndarray, knots: np.ndarray, poly: PPoly, stops=()):
        self.waypoints = waypoints
        self.knots = knots
        self.poly = poly
        self.d1 = poly.derivative(1)
        self.d2 = poly.derivative(2)
        self.stops = tuple(stops)
        self.dof = waypoints.shape[1]

    def q(self, s):
        return self.poly(np.clip(s, 0.0, 1.0))

    def dq(self, s):
        return self.d1(np.clip(s, 0.0, 1.0))

    def ddq(self, s):
        return self.d2(np.clip(s, 0.0, 1.0))

    def left(self, fn, s):
        """Left-hand limit of a derivative at s (differs from ``fn(s)`` only at stop knots)."""
        s = np.asarray(s, dtype=float)
        out = fn(s)
        if self.stops:
            stop_s = self.knots[list(self.stops)]
            hit = np.isin(s, stop_s)
            if np.any(hit):
                out = np.array(out)
                out[hit] = fn(np.nextafter(s[hit], -np.inf))
        return out


def interpolate_path(path: Path) -> GeometricPath:
    """Clamped cubic spline through the waypoints, chord-length parameterised.

    Yaw is unwrapped first so it follows the shortest arc between waypoints.
    The spline is split at ``path.stops`` and each piece is clamped
    (zero first derivative) at both ends.
    """
    wp = _unwrap_yaw(path.waypoints)
    seg = np.linalg.norm(np.diff(wp, axis=0), axis=1)
    knots = np.concatenate([[0.0], np.cumsum(seg)])
    knots /= knots[-1]
    knots[-1] = 1.0
    cuts = [0, *sorted(path.stops), len(wp) - 1]
    xs, cs = [], []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        sp = CubicSpline(knots[lo:hi + 1], wp[lo:hi + 1], bc_type="clamped")
        xs.append(sp.x if not xs else sp.x[1:])
        cs.append(sp.c)
    poly = PPoly(np.concatenate(cs, axis=1), np.concatenate(xs), extrapolate=True)
    return GeometricPath(wp, knots, poly, path.stops)


@dataclass
class Trajectory:
    """Sampled trajectory: rows are (q*, q*_dot, q*_ddot) at strictly increasing times."""

    t: np.ndarray
    points: np.ndarray
    grid: dict = field(default_factory=dict, repr=False)

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def dof(self) -> int:
        return self.points.shape[1] // 3

    @property
    def positions(self):
        return self.points[:, : self.dof]

    @property
    def velocities(self):
        return self.points[:, self.dof: 2 * self.dof]

    @property
    def accelerations(self):
        return self.points[:, 2 * self.dof:]

    def at(self, t) -> np.ndarray:
        """Linear interpolation of the samples, clamped to [0, t_end]."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        out = np.empty((len(t), self.points.shape[1]))
        for j in range(self.points.shape[1]):
            out[:, j] = np.interp(t, self.t, self.points[:, j])
        return out[0] if scalar else out

    @classmethod
    def hold(cls, q, duration: float = 0.0, dt: float = 0.01) -> "Trajectory":
        q = np.asarray(q, dtype=float)
        n = int(round(duration / dt)) + 1 if duration > 0 else 1
        t = np.linspace(0.0, duration, n) if n > 1 else np.zeros(1)
        pts = np.zeros((n, 3 * len(q)))
        pts[:, : len(q)] = q
        return cls(t, pts)

    def to_csv(self, path):
        names = ["x", "y", "z", "psi", "q1", "q2", "q3"] if self.dof == 7 else [f"q{i}" for i in range(self.dof)]
        cols = ["t"] + names + [f"d_{n}" for n in names] + [f"dd_{n}" for n in names]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(len(self.t)):
                w.writerow([repr(float(self.t[k]))] + [repr(float(v)) for v in self.points[k]])

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        from .io import read_numeric_csv

        data = read_numeric_csv(path, 22)
        return cls(data[:, 0], data[:, 1:])


_BIG = 1e9


class _Stage:
    """Fixed part of one stage's constraint polygon {(u, x): A @ (u, x) <= b}.

    Rows with a u-coefficient become upper lines ``u <= ih + sh x`` or lower
    lines ``u >= il + sl x``; the rest bound x directly. A given x is feasible
    iff every lower line sits under every upper line, which is one linear
    inequality in x per (lower, upper) pair. The fixed pairs are reduced to
    an x interval once; only the two next-state rows change between passes.
    """

    def __init__(self, A: np.ndarray, b: np.ndarray, delta: float):
        a0, a1 = A[:, 0], A[:, 1]
        scale = np.abs(A).max(axis=1)
        pos, neg = a0 > 1e-15 * scale, a0 < -1e-15 * scale
        flat = ~(pos | neg)
        self.d2 = 2.0 * delta
        self.ih, self.sh = np.append(b[pos] / a0[pos], _BIG), np.append(-a1[pos] / a0[pos], 0.0)
        self.il, self.sl = np.append(b[neg] / a0[neg], -_BIG), np.append(-a1[neg] / a0[neg], 0.0)
        self.x_lo, self.x_hi = 0.0, math.inf
        fa, fb = a1[flat], b[flat]
        if np.any((np.abs(fa) <= 1e-15 * scale[flat]) & (fb < -1e-9)):
            self.x_lo = math.inf
        up, dn = fa > 1e-15, fa < -1e-15
        if np.any(up):
            self.x_hi = float(np.min(fb[up] / fa[up]))
        if np.any(dn):
            self.x_lo = max(self.x_lo, float(np.max(fb[dn] / fa[dn])))
        self._pairs(self.il[:, None], self.sl[:, None], self.ih[None, :], self.sh[None, :])

    def _pairs(self, il, sl, ih, sh):
        d = (il - ih).ravel()
        e = np.broadcast_to(sl - sh, np.broadcast(il, ih).shape).ravel()
        tol = (1e-9 * (1.0 + np.abs(il) + np.abs(ih))).ravel()
        big = np.abs(e) > 1e-15 * (1.0 + np.abs(d))
        if np.any(~big & (d > tol)):
            self.x_lo = math.inf
            return
        r = (tol[big] - d[big]) / e[big]
        ep = e[big] > 0
        if np.any(ep):
            self.x_hi = min(self.x_hi, float(np.min(r[ep])))
        if np.any(~ep):
            self.x_lo = max(self.x_lo, float(np.max(r[~ep])))

    def _prepare(self):
        # slopes of the pairs formed with the next-state rows
        k = 1.0 / self.d2
        self.e_up = self.sl + k  # lower lines vs u <= (hi_next - x) / d2
        self.e_dn = -k - self.sh  # u >= (lo_next - x) / d2 vs upper lines
        self.masks = [(e > 1e-15, e < -1e-15) for e in (self.e_up, self.e_dn)]

    def x_range(self, lo_next: float, hi_next: float):
        """[min x, max x] with lo_next <= x + 2 delta u <= hi_next; None if empty."""
        if lo_next > hi_next or self.x_lo > self.x_hi:
            return None
        if not hasattr(self, "e_up"):
            self._prepare()
        x_lo, x_hi = self.x_lo, self.x_hi
        for rhs, e, (p, n) in ((hi_next / self.d2 - self.il, self.e_up, self.masks[0]),
                               (self.ih - lo_next / self.d2, self.e_dn, self.masks[1])):
            rhs = rhs + 1e-9 * (1.0 + np.abs(rhs))
            if np.any(rhs[~(p | n)] < 0):
                return None
            if p.any():
                x_hi = min(x_hi, float(np.min(rhs[p] / e[p])))
            if n.any():
                x_lo = max(x_lo, float(np.max(rhs[n] / e[n])))
        if x_lo > x_hi + 1e-12 * (1.0 + abs(x_hi)):
            return None
        return x_lo, max(x_lo, x_hi)

    def u_range(self, x: float, lo_next: float, hi_next: float):
        hi = min(float(np.min(self.ih + self.sh * x)), (hi_next - x) / self.d2)
        lo = max(float(np.max(self.il + self.sl * x)), (lo_next - x) / self.d2)
        return lo, hi


def _reachability_passes(stages, start_free, end_free, grid, delta):
    """Backward controllable sets, then the greedy forward pass -> (x, u, lo, hi)."""
    N = len(stages)
    lo = np.zeros(N + 1)
    hi = np.zeros(N + 1)
    hi[N] = _BIG if end_free else 0.0
    for i in range(N - 1, -1, -1):
        ext = stages[i].x_range(lo[i + 1], hi[i + 1])
        if ext is None:
            raise InfeasibleError(i, f"s={grid[i]:.4f}")
        lo[i], hi[i] = max(ext[0], 0.0), ext[1]
    if not start_free and lo[0] > 1e-9:
        raise InfeasibleError(0, "cannot start from rest")

    x = np.zeros(N + 1)
    u = np.zeros(N)
    x[0] = hi[0] if start_free else 0.0
    for i in range(N):
        ulo, uhi = stages[i].u_range(x[i], lo[i + 1], hi[i + 1])
        ui = uhi if uhi >= ulo else 0.5 * (ulo + uhi)
        nxt = x[i] + 2.0 * delta[i] * ui
        nxt = min(max(nxt, lo[i + 1], 0.0), hi[i + 1])
        u[i] = (nxt - x[i]) / (2.0 * delta[i])
        x[i + 1] = nxt
    return x, u, lo, hi


def topp_ra(gpath: GeometricPath, limits: KinodynamicLimits, grid_n: int = 200,
            dt: float = 0.01, checks: int = 16, accel_at=(0.0, 0.5, 1.0),
            per_segment: int = 8, refine: int = 6) -> Trajectory:
    """Time-optimal parameterisation of ``gpath`` under per-DoF box limits.

    The grid holds ``grid_n`` uniform points, every spline knot and
    ``per_segment`` even subdivisions of each knot span. Within an interval
    ``x`` is linear in ``s`` and ``u`` is constant, so both limits are linear
    in the stage variables at any fixed ``s``. Acceleration is imposed at the
    ``accel_at`` fractions of every interval, velocity at ``checks + 1``
    points plus cutting planes wherever the sampled profile still exceeds it. A
    backward pass builds the controllable sets of ``x = sdot**2``; a greedy
    forward pass then picks the largest admissible ``u`` at each stage,
    starting and ending at rest.
    """
    if grid_n < 10:
        raise ValueError("grid_n must be at least 10")
    v = np.asarray(limits.v_max, dtype=float)
    a = np.asarray(limits.a_max, dtype=float)
    if len(v) != gpath.dof:
        raise ValueError(f"limits have {len(v)} DoF, path has {gpath.dof}")
    k = gpath.knots
    sub = (k[:-1, None] + np.linspace(0.0, 1.0, per_segment + 1)[None, :-1] * np.diff(k)[:, None]).ravel()
    grid = np.unique(np.concatenate([np.linspace(0.0, 1.0, grid_n), k, sub]))
    grid = grid[np.concatenate([[True], np.diff(grid) > 1e-12])]
    grid[-1] = 1.0
    N = len(grid) - 1
    delta = np.diff(grid)

    # constraint rows per stage: [coef_u, coef_x] <= rhs
    rows, rhs = [], []
    for f in np.linspace(0.0, 1.0, checks + 1):
        s = grid[:-1] + f * delta
        if f == 1.0:
            d1, d2 = gpath.left(gpath.dq, s), gpath.left(gpath.ddq, s)
        else:
            d1, d2 = gpath.dq(s), gpath.ddq(s)
        lever = 2.0 * f * delta
        if np.any(np.isclose(f, accel_at)):
            # acceleration: q' u + q'' (x + 2 f delta u)
            alpha = d1 + lever[:, None] * d2
            rows += [np.stack([alpha, d2], axis=2), np.stack([-alpha, -d2], axis=2)]
            rhs += [np.broadcast_to(a, alpha.shape), np.broadcast_to(a, alpha.shape)]
        # velocity: q'^2 (x + 2 f delta u) <= v^2, tightest DoF only
        with np.errstate(divide="ignore"):
            cap = np.min(np.where(d1 != 0, (v / np.where(d1 != 0, np.abs(d1), 1.0)) ** 2, np.inf), axis=1)
        cap = np.minimum(cap, _BIG)
        rows.append(np.stack([lever, np.ones(N)], axis=1)[:, None, :])
        rhs.append(cap[:, None])
    acc_rows = np.concatenate(rows, axis=1)  # (N, R, 2)
    acc_rhs = np.concatenate(rhs, axis=1)  # (N, R)

    def build(i, extra=None):
        keep = np.any(np.abs(acc_rows[i]) > 0, axis=1)
        A, b = acc_rows[i][keep], acc_rhs[i][keep]
        if extra is not None:
            A, b = np.vstack([A, extra[:, :2]]), np.concatenate([b, extra[:, 2]])
        return _Stage(A, b, delta[i])

    stages = [build(i) for i in range(N)]
    extra = [np.empty((0, 3)) for _ in range(N)]  # cutting-plane rows (coef_u, coef_x, rhs)

    # a clamped end is at rest for any sdot, so sdot itself need not vanish there
    scale = float(np.abs(gpath.waypoints).max()) + 1.0
    start_free = bool(np.all(np.abs(gpath.dq(0.0)) <= 1e-12 * scale))
    end_free = bool(np.all(np.abs(gpath.left(gpath.dq, np.array([1.0]))) <= 1e-12 * scale))

    probe = np.linspace(0.0, 1.0, 257)[1:-1]
    s_probe = grid[:-1, None] + probe[None, :] * delta[:, None]
    w_probe = (np.abs(gpath.dq(s_probe.ravel())) / v).max(axis=1).reshape(N, len(probe))
    for _ in range(refine):
        x, u, lo, hi = _reachability_passes(stages, start_free, end_free, grid, delta)
        # velocity between check points: add the worst point of each offending interval
        xs = x[:-1, None] + 2.0 * (s_probe - grid[:-1, None]) * u[:, None]
        worst = w_probe * np.sqrt(np.maximum(xs, 0.0))
        bad = np.flatnonzero(worst.max(axis=1) > 1.0 + 1e-9)
        if len(bad) == 0:
            break
        for i in bad:
            j = int(np.argmax(worst[i]))
            cap = min(1.0 / w_probe[i, j] ** 2, _BIG) if w_probe[i, j] > 0 else _BIG
            extra[i] = np.vstack([extra[i], [2.0 * (s_probe[i, j] - grid[i]), 1.0, cap]])
            stages[i] = build(i, extra[i])

    sd = np.sqrt(x)
    denom = sd[:-1] + sd[1:]
    if np.any(denom <= 0):
        i = int(np.argmax(denom <= 0))
        raise InfeasibleError(i, "zero path speed across an interval")
    dts = 2.0 * delta / denom
    T = np.concatenate([[0.0], np.cumsum(dts)])
    t_end = float(T[-1])

    ts = np.arange(0.0, t_end, dt)
    if t_end - ts[-1] > 1e-9:
        ts = np.append(ts, t_end)
    else:
        ts[-1] = t_end
    idx = np.clip(np.searchsorted(T, ts, side="right") - 1, 0, N - 1)
    tau = ts - T[idx]
    sdot = np.clip(sd[idx] + u[idx] * tau, 0.0, None)
    s = np.clip(grid[idx] + sd[idx] * tau + 0.5 * u[idx] * tau**2, grid[idx], grid[idx + 1])
    s[-1] = 1.0
    sdot[-1] = sd[-1]
    q = gpath.q(s)
    d1 = gpath.dq(s)
    d2 = gpath.ddq(s)
    qd = d1 * sdot[:, None]
    qdd = d1 * u[idx][:, None] + d2 * (sdot**2)[:, None]
    q[-1] = gpath.waypoints[-1]
    qd[-1] = 0.0
    pts = np.hstack([q, qd, qdd])
    return Trajectory(ts, pts, {"s": grid, "x": x, "u": u, "t": T, "lo": lo, "hi": hi})


def plan_row_trajectory(row, params: ScanParams, limits: KinodynamicLimits,
                        grid_n: int = 200, dt: float = 0.01) -> tuple[Path, Trajectory]:
    path = plan_row(row, params)
    return path, topp_ra(interpolate_path(path), limits, grid_n, dt)


def wrapped_equal(a, b, atol=1e-9) -> bool:
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.shape[-1] >= 4:
        d[..., 3] = wrap_angle(d[..., 3])
    return bool(np.all(np.abs(d) <= atol))
