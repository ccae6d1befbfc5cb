"""Multirotor + 3-DoF arm dynamics, rotor allocation and cascade PID tracking.

The coupled 9-DoF model is simplified to a rigid-body multirotor
(Newton-Euler with diagonal inertia) plus independent arm joints; arm
reaction forces on the base are neglected.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .spatial import euler_rate_matrix, rotation_to_euler, so3_exp, euler_to_rotation, wrap_angle

GRAVITY = 9.81


class AllocationError(ValueError):
    pass


class InfeasibleCommandError(ValueError):
    pass


class IntegrationBlowupError(RuntimeError):
    pass


class TrackingFailureError(RuntimeError):
    pass


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 2.5
    inertia: tuple = (0.03, 0.03, 0.05)
    joint_inertia: tuple = (0.004, 0.002, 0.001)
    # gravity torque on joint i is joint_gravity[i] * cos(q1 + ... + qi)
    joint_gravity: tuple = (0.25, 0.12, 0.04)
    k_f: float = 8.5e-6
    k_m: float = 1.4e-7
    arm_length: float = 0.25
    rotor_speed_min: float = 0.0
    rotor_speed_max: float = 1500.0
    joint_torque_max: float = 5.0
    g: float = GRAVITY

    def __post_init__(self):
        vals = [self.mass, *self.inertia, *self.joint_inertia, self.k_f, self.k_m, self.arm_length, self.g]
        if min(vals) <= 0 or min(self.joint_gravity) < 0:
            raise ValueError("vehicle parameters must be positive")
        if not 0 <= self.rotor_speed_min < self.rotor_speed_max:
            raise ValueError("rotor speed limits need 0 <= min < max")


@dataclass(frozen=True)
class AllocationMatrix:
    K: np.ndarray
    K_inv: np.ndarray
    rotor_positions: np.ndarray
    spin: np.ndarray

    def forward(self, omega_sq) -> np.ndarray:
        return self.K @ np.asarray(omega_sq, dtype=float)


def rotor_layout(layout: str, arm_length: float):
    """Rotor positions (body xy) and spin directions (+1 = CCW seen from above)."""
    L = arm_length
    if layout == "plus":
        angles = np.array([0.0, 0.5, 1.0, 1.5]) * np.pi
    elif layout == "cross":
        angles = np.array([0.25, 0.75, 1.25, 1.75]) * np.pi
    else:
        raise AllocationError(f"unknown rotor layout {layout!r}")
    pos = L * np.column_stack([np.cos(angles), np.sin(angles)])
    spin = np.array([1.0, -1.0, 1.0, -1.0])
    return pos, spin


def build_allocation(params: VehicleParams, layout: str = "cross") -> AllocationMatrix:
    """Map squared rotor speeds to (thrust, roll, pitch, yaw moments).

    A rotor at (x, y) with thrust F along +z_b produces moment (y F, -x F); a
    CCW rotor's drag torque acts clockwise on the body (-k_m Omega^2).
    """
    pos, spin = rotor_layout(layout, params.arm_length)
    kf, km = params.k_f, params.k_m
    K = np.vstack([
        np.full(4, kf),
        kf * pos[:, 1],
        -kf * pos[:, 0],
        -km * spin,
    ])
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond >= 1e6:
        raise AllocationError(f"degenerate rotor geometry (cond={cond:.3g})")
    return AllocationMatrix(K, np.linalg.inv(K), pos, spin)


def allocate_inverse(alloc: AllocationMatrix, u_uav, params: VehicleParams | None = None,
                     clip: bool = False):
    """Squared rotor speeds producing ``u_uav``.

    Returns ``(omega_sq, saturated)``. Without ``clip`` a negative square
    raises :class:`InfeasibleCommandError`; with it, values are clipped into
    the speed limits and ``saturated`` reports whether that happened.
    """
    w = alloc.K_inv @ np.asarray(u_uav, dtype=float)
    scale = max(1.0, float(np.max(np.abs(w))))
    if not clip and np.any(w < -1e-9 * scale):
        raise InfeasibleCommandError(f"command needs negative squared rotor speed: {w}")
    w = np.maximum(w, 0.0)
    saturated = False
    if params is not None:
        lo, hi = params.rotor_speed_min**2, params.rotor_speed_max**2
        wc = np.clip(w, lo, hi)
        saturated = bool(np.any(wc != w))
        if saturated and not clip:
            raise InfeasibleCommandError(f"command exceeds rotor speed limits: {np.sqrt(w)}")
        w = wc
    return w, saturated


@dataclass(frozen=True)
class FullState:
    """Vehicle state; attitude kept as a rotation matrix, rates in the body frame."""

    p: np.ndarray
    v: np.ndarray
    R: np.ndarray
    omega: np.ndarray
    qm: np.ndarray
    qm_dot: np.ndarray
    t: float = 0.0

    @classmethod
    def hover(cls, p=(0.0, 0.0, 0.0), psi: float = 0.0, qm=(0.0, 0.0, 0.0), t: float = 0.0):
        return cls(
            np.asarray(p, dtype=float), np.zeros(3), euler_to_rotation(0.0, 0.0, psi),
            np.zeros(3), np.asarray(qm, dtype=float), np.zeros(3), t,
        )

    @property
    def euler(self) -> np.ndarray:
        return rotation_to_euler(self.R)

    @property
    def q(self) -> np.ndarray:
        return np.concatenate([self.p, self.euler, self.qm])

    @property
    def q_dot(self) -> np.ndarray:
        th = self.euler
        W = euler_rate_matrix(th)
        return np.concatenate([self.v, np.linalg.solve(W, self.omega), self.qm_dot])


@dataclass(frozen=True)
class ControlInput:
    u_uav: np.ndarray  # thrust N, moments N m
    u_m: np.ndarray  # joint torques N m
    saturated: bool = False
    omega_sq: np.ndarray | None = None


_EYE = np.eye(3)


def _cross(a, b) -> np.ndarray:
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def joint_gravity_torque(params: VehicleParams, qm) -> np.ndarray:
    return np.asarray(params.joint_gravity) * np.cos(np.cumsum(qm))


def step_dynamics(state: FullState, u: ControlInput, dt: float, params: VehicleParams) -> FullState:
    """Advance one step with zero-order-hold inputs.

    Accelerations are evaluated at the start of the step and positions use
    the exact constant-acceleration update, so free fall and hover are
    reproduced without discretisation error.
    """
    if not 0.0 < dt <= 0.02:
        raise ValueError(f"dt must lie in (0, 0.02], got {dt}")
    u1, u2, u3, u4 = u.u_uav
    m = params.mass
    R = state.R
    acc = R[:, 2] * (u1 / m)
    acc[2] -= params.g
    p = state.p + state.v * dt + 0.5 * acc * dt * dt
    v = state.v + acc * dt

    I = np.asarray(params.inertia)
    w = state.omega
    torque = np.array([u2, u3, u4]) - _cross(w, I * w)
    w_dot = torque / I
    dtheta = w * dt + 0.5 * w_dot * dt * dt
    omega = w + w_dot * dt
    R_new = R @ so3_exp(dtheta)
    # re-orthonormalise once drift becomes measurable
    if np.abs(R_new.T @ R_new - _EYE).max() > 1e-12:
        U, _, Vt = np.linalg.svd(R_new)
        R_new = U @ Vt

    Ij = np.asarray(params.joint_inertia)
    qdd = (np.asarray(u.u_m) - joint_gravity_torque(params, state.qm)) / Ij
    qm = state.qm + state.qm_dot * dt + 0.5 * qdd * dt * dt
    qm_dot = state.qm_dot + qdd * dt

    new = FullState(p, v, R_new, omega, qm, qm_dot, state.t + dt)
    if not math.isfinite(float(p.sum() + v.sum() + omega.sum() + qm.sum() + qm_dot.sum() + R_new.sum())):
        raise IntegrationBlowupError(f"non-finite state at t={new.t:.4f}")
    return new


@dataclass(frozen=True)
class Gains:
    pos_kp: tuple = (4.0, 4.0, 6.0)
    pos_kd: tuple = (4.0, 4.0, 5.0)
    pos_ki: tuple = (0.4, 0.4, 0.8)
    integral_limit: float = 2.0
    att_kp: tuple = (120.0, 120.0, 40.0)
    att_kd: tuple = (22.0, 22.0, 12.0)
    joint_kp: float = 120.0
    joint_kd: float = 22.0
    max_tilt: float = 0.35


@dataclass
class ControllerMemory:
    integral: np.ndarray = field(default_factory=lambda: np.zeros(3))


def cascade_control(state: FullState, ref, gains: Gains, params: VehicleParams,
                    alloc: AllocationMatrix | None = None,
                    memory: ControllerMemory | None = None, dt: float = 0.0) -> ControlInput:
    """Cascade PID: position -> (thrust, attitude set-point) -> moments; joint PD.

    ``ref`` is a 21-vector (q*, q*_dot, q*_ddot) over (x, y, z, psi, q1, q2, q3).
    """
    ref = np.asarray(ref, dtype=float)
    pos_r, vel_r, acc_r = ref[0:3], ref[7:10], ref[14:17]
    psi_r = ref[3]
    qm_r, qmd_r, qmdd_r = ref[4:7], ref[11:14], ref[18:21]
    g, m = params.g, params.mass

    e = pos_r - state.p
    ed = vel_r - state.v
    if memory is not None and dt > 0:
        memory.integral = np.clip(memory.integral + e * dt, -gains.integral_limit, gains.integral_limit)
        integ = memory.integral
    else:
        integ = np.zeros(3)
    a_d = acc_r + np.asarray(gains.pos_kp) * e + np.asarray(gains.pos_kd) * ed + np.asarray(gains.pos_ki) * integ

    euler = rotation_to_euler(state.R)
    phi, theta, psi = euler
    cpsi, spsi = math.cos(psi), math.sin(psi)
    theta_d = (a_d[0] * cpsi + a_d[1] * spsi) / g
    phi_d = (a_d[0] * spsi - a_d[1] * cpsi) / g
    theta_d = min(max(theta_d, -gains.max_tilt), gains.max_tilt)
    phi_d = min(max(phi_d, -gains.max_tilt), gains.max_tilt)
    u1 = m * (g + a_d[2]) / max(math.cos(phi) * math.cos(theta), 0.5)
    u1 = max(u1, 0.0)

    att_err = np.array([phi_d - phi, theta_d - theta, wrap_angle(psi_r - psi)])
    I = np.asarray(params.inertia)
    # yaw-rate feed-forward from the reference
    w_ref = np.array([0.0, 0.0, ref[10]])
    moments = I * (np.asarray(gains.att_kp) * att_err + np.asarray(gains.att_kd) * (w_ref - state.omega))
    moments = moments + _cross(state.omega, I * state.omega)

    Ij = np.asarray(params.joint_inertia)
    tau = Ij * (qmdd_r + gains.joint_kp * (qm_r - state.qm) + gains.joint_kd * (qmd_r - state.qm_dot))
    tau = tau + joint_gravity_torque(params, state.qm)
    tau_sat = np.clip(tau, -params.joint_torque_max, params.joint_torque_max)

    u_uav = np.array([u1, *moments])
    saturated = bool(np.any(tau_sat != tau))
    omega_sq = None
    if alloc is not None:
        omega_sq, sat = allocate_inverse(alloc, u_uav, params, clip=True)
        saturated = saturated or sat
        u_uav = alloc.K @ omega_sq
    return ControlInput(u_uav, tau_sat, saturated, omega_sq)


@dataclass
class StateLog:
    t: np.ndarray
    q: np.ndarray  # (N, 9)
    q_dot: np.ndarray  # (N, 9)
    rotor_speeds: np.ndarray  # (N, 4)
    rotations: np.ndarray  # (N, 3, 3) body->world
    saturated_steps: int = 0

    def __len__(self):
        return len(self.t)

    def position_error(self, traj) -> np.ndarray:
        ref = traj.at(self.t)
        return np.linalg.norm(self.q[:, :3] - ref[:, :3], axis=1)

    def rms_error(self, traj) -> float:
        e = self.position_error(traj)
        return float(np.sqrt(np.mean(e**2)))

    def to_csv(self, path):
        cols = ["t"] + [f"q{i}" for i in range(9)] + [f"qd{i}" for i in range(9)] + [f"w{i}" for i in range(4)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for k in range(len(self.t)):
                row = [self.t[k], *self.q[k], *self.q_dot[k], *self.rotor_speeds[k]]
                w.writerow([repr(float(x)) for x in row])

    @classmethod
    def from_csv(cls, path) -> "StateLog":
        from .io import read_numeric_csv

        data = read_numeric_csv(path, 23)
        q = data[:, 1:10]
        R = np.stack([euler_to_rotation(*th) for th in q[:, 3:6]]) if len(q) else np.zeros((0, 3, 3))
        return cls(data[:, 0], q, data[:, 10:19], data[:, 19:23], R)


def simulate_tracking(traj, params: VehicleParams | None = None, gains: Gains | None = None,
                      dt: float = 1e-3, layout: str = "cross", max_error: float = 5.0,
                      fast: bool = True) -> StateLog:
    """Closed-loop flight of ``traj`` under cascade control.

    The log holds ``ceil(t_end / dt) + 1`` states starting at the first
    trajectory point in hover. ``fast`` selects a scalar re-implementation of
    :func:`cascade_control` + :func:`step_dynamics` that avoids per-step numpy
    overhead; both paths agree to rounding error.
    """
    params = params or VehicleParams()
    gains = gains or Gains()
    if not 0.0 < dt <= 0.02:
        raise ValueError(f"dt must lie in (0, 0.02], got {dt}")
    alloc = build_allocation(params, layout)
    first = traj.points[0]
    state = FullState.hover(first[0:3], first[3], first[4:7], t=float(traj.t[0]))
    n_steps = int(math.ceil((traj.t_end - traj.t[0]) / dt - 1e-9)) if traj.t_end > traj.t[0] else 0
    N = n_steps + 1
    ts = traj.t[0] + dt * np.arange(N)
    refs = traj.at(ts)
    hover_w = math.sqrt(params.mass * params.g / (4 * params.k_f))

    log_q = np.empty((N, 9))
    log_qd = np.empty((N, 9))
    log_w = np.empty((N, 4))
    log_R = np.empty((N, 3, 3))
    log_q[0], log_qd[0], log_w[0], log_R[0] = state.q, state.q_dot, hover_w, state.R
    if fast:
        n_sat = _track_kernel(state, refs, gains, params, alloc, dt, max_error, log_q, log_qd, log_w, log_R)
        return StateLog(ts, log_q, log_qd, log_w, log_R, n_sat)
    memory = ControllerMemory()
    n_sat = 0
    for k in range(n_steps):
        u = cascade_control(state, refs[k], gains, params, alloc, memory, dt)
        n_sat += u.saturated
        state = step_dynamics(state, u, dt, params)
        err = np.linalg.norm(state.p - refs[k + 1, 0:3])
        if err > max_error:
            raise TrackingFailureError(f"position error {err:.2f} m at t={state.t:.3f} s")
        log_q[k + 1], log_qd[k + 1] = state.q, state.q_dot
        log_w[k + 1] = np.sqrt(u.omega_sq)
        log_R[k + 1] = state.R
    return StateLog(ts, log_q, log_qd, log_w, log_R, n_sat)


def _wrap(a: float) -> float:
    w = (a + math.pi) % (2.0 * math.pi) - math.pi
    return math.pi if w == -math.pi else w


def _track_kernel(state, refs, gains, params, alloc, dt, max_error, log_q, log_qd, log_w, log_R) -> int:
    """Scalar loop mirroring cascade_control(clip=True) followed by step_dynamics."""
    g, m = params.g, params.mass
    Ix, Iy, Iz = params.inertia
    J = params.joint_inertia
    G = params.joint_gravity
    tmax = params.joint_torque_max
    w_lo, w_hi = params.rotor_speed_min ** 2, params.rotor_speed_max ** 2
    kp, kd, ki = gains.pos_kp, gains.pos_kd, gains.pos_ki
    akp, akd = gains.att_kp, gains.att_kd
    jkp, jkd, ilim, tilt = gains.joint_kp, gains.joint_kd, gains.integral_limit, gains.max_tilt
    K = alloc.K.tolist()
    Ki = alloc.K_inv.tolist()
    px, py, pz = state.p.tolist()
    vx, vy, vz = state.v.tolist()
    R = state.R.tolist()
    wx, wy, wz = state.omega.tolist()
    qm = state.qm.tolist()
    qd = state.qm_dot.tolist()
    ix = iy = iz = 0.0
    n_sat = 0
    ref_rows = refs.tolist()
    cos, sin, atan2, hypot = math.cos, math.sin, math.atan2, math.hypot
    h2 = 0.5 * dt * dt
    for k in range(len(ref_rows) - 1):
        r = ref_rows[k]
        # position loop
        ex, ey, ez = r[0] - px, r[1] - py, r[2] - pz
        ix = min(max(ix + ex * dt, -ilim), ilim)
        iy = min(max(iy + ey * dt, -ilim), ilim)
        iz = min(max(iz + ez * dt, -ilim), ilim)
        ax = r[14] + kp[0] * ex + kd[0] * (r[7] - vx) + ki[0] * ix
        ay = r[15] + kp[1] * ey + kd[1] * (r[8] - vy) + ki[1] * iy
        az = r[16] + kp[2] * ez + kd[2] * (r[9] - vz) + ki[2] * iz
        # attitude from R (ZYX)
        c_th = hypot(R[0][0], R[1][0])
        th = atan2(-R[2][0], c_th)
        if c_th > 1e-12:
            ph = _wrap(atan2(R[2][1], R[2][2]))
            ps = _wrap(atan2(R[1][0], R[0][0]))
        else:
            ph = 0.0
            ps = _wrap(atan2(-R[0][1], R[1][1]))
        cps, sps = cos(ps), sin(ps)
        th_d = min(max((ax * cps + ay * sps) / g, -tilt), tilt)
        ph_d = min(max((ax * sps - ay * cps) / g, -tilt), tilt)
        u1 = max(m * (g + az) / max(cos(ph) * cos(th), 0.5), 0.0)
        Iwx, Iwy, Iwz = Ix * wx, Iy * wy, Iz * wz
        gx, gy, gz = wy * Iwz - wz * Iwy, wz * Iwx - wx * Iwz, wx * Iwy - wy * Iwx
        M1 = Ix * (akp[0] * (ph_d - ph) + akd[0] * (0.0 - wx)) + gx
        M2 = Iy * (akp[1] * (th_d - th) + akd[1] * (0.0 - wy)) + gy
        M3 = Iz * (akp[2] * _wrap(r[3] - ps) + akd[2] * (r[10] - wz)) + gz
        # joints
        c1 = qm[0]
        c2 = c1 + qm[1]
        c3 = c2 + qm[2]
        grav = (G[0] * cos(c1), G[1] * cos(c2), G[2] * cos(c3))
        sat = False
        tau = [0.0, 0.0, 0.0]
        for j in range(3):
            t = J[j] * (r[18 + j] + jkp * (r[4 + j] - qm[j]) + jkd * (r[11 + j] - qd[j])) + grav[j]
            tc = min(max(t, -tmax), tmax)
            sat = sat or tc != t
            tau[j] = tc
        # allocation
        u = (u1, M1, M2, M3)
        osq = []
        for i in range(4):
            w = max(Ki[i][0] * u[0] + Ki[i][1] * u[1] + Ki[i][2] * u[2] + Ki[i][3] * u[3], 0.0)
            wc = min(max(w, w_lo), w_hi)
            sat = sat or wc != w
            osq.append(wc)
        U = [K[i][0] * osq[0] + K[i][1] * osq[1] + K[i][2] * osq[2] + K[i][3] * osq[3] for i in range(4)]
        n_sat += sat
        # translational dynamics
        f = U[0] / m
        accx, accy, accz = R[0][2] * f, R[1][2] * f, R[2][2] * f - g
        px += vx * dt + accx * h2
        py += vy * dt + accy * h2
        pz += vz * dt + accz * h2
        vx += accx * dt
        vy += accy * dt
        vz += accz * dt
        # rotational dynamics
        Iwx, Iwy, Iwz = Ix * wx, Iy * wy, Iz * wz
        ddx = (U[1] - (wy * Iwz - wz * Iwy)) / Ix
        ddy = (U[2] - (wz * Iwx - wx * Iwz)) / Iy
        ddz = (U[3] - (wx * Iwy - wy * Iwx)) / Iz
        dx, dy, dz = wx * dt + ddx * h2, wy * dt + ddy * h2, wz * dt + ddz * h2
        wx += ddx * dt
        wy += ddy * dt
        wz += ddz * dt
        E = so3_exp((dx, dy, dz)).tolist()
        R = [[R[i][0] * E[0][c] + R[i][1] * E[1][c] + R[i][2] * E[2][c] for c in range(3)] for i in range(3)]
        Ra = np.array(R)
        if np.abs(Ra.T @ Ra - _EYE).max() > 1e-12:
            Uu, _, Vt = np.linalg.svd(Ra)
            Ra = Uu @ Vt
            R = Ra.tolist()
        # joints
        for j in range(3):
            qdd = (tau[j] - grav[j]) / J[j]
            qm[j] += qd[j] * dt + qdd * h2
            qd[j] += qdd * dt
        if not math.isfinite(px + py + pz + vx + vy + vz + wx + wy + wz + sum(qm) + sum(qd)):
            raise IntegrationBlowupError(f"non-finite state at step {k + 1}")
        rn = ref_rows[k + 1]
        err = math.sqrt((px - rn[0]) ** 2 + (py - rn[1]) ** 2 + (pz - rn[2]) ** 2)
        if err > max_error:
            raise TrackingFailureError(f"position error {err:.2f} m at step {k + 1}")
        # log: generalised coordinates and rates
        c_th = hypot(R[0][0], R[1][0])
        th = atan2(-R[2][0], c_th)
        if c_th > 1e-12:
            ph = _wrap(atan2(R[2][1], R[2][2]))
            ps = _wrap(atan2(R[1][0], R[0][0]))
        else:
            ph = 0.0
            ps = _wrap(atan2(-R[0][1], R[1][1]))
        sph, cph, cth, tth = sin(ph), cos(ph), cos(th), math.tan(th)
        log_q[k + 1] = (px, py, pz, ph, th, ps, qm[0], qm[1], qm[2])
        log_qd[k + 1] = (vx, vy, vz, wx + sph * tth * wy + cph * tth * wz, cph * wy - sph * wz,
                         (sph * wy + cph * wz) / cth, qd[0], qd[1], qd[2])
        log_w[k + 1] = (math.sqrt(osq[0]), math.sqrt(osq[1]), math.sqrt(osq[2]), math.sqrt(osq[3]))
        log_R[k + 1] = R
    return n_sat


def mechanical_energy(state: FullState, params: VehicleParams) -> float:
    I = np.asarray(params.inertia)
    Ij = np.asarray(params.joint_inertia)
    return float(
        0.5 * params.mass * state.v @ state.v
        + 0.5 * state.omega @ (I * state.omega)
        + 0.5 * state.qm_dot @ (Ij * state.qm_dot)
        + params.mass * params.g * state.p[2]
    )


def with_time(state: FullState, t: float) -> FullState:
    return replace(state, t=t)
