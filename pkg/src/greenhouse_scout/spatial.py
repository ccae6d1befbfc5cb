"""Rigid-body transforms, ZYX Euler conventions and the aerial-manipulator
kinematic chain (world -> body -> arm base -> end-effector -> camera)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

FRAMES = ("W", "B", "0", "EE")
GIMBAL_TOL = 1e-6


class GimbalLockError(ValueError):
    pass


class JointLimitError(ValueError):
    pass


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    if isinstance(a, (float, int)) and not isinstance(a, bool):
        w = (a + math.pi) % (2.0 * math.pi) - math.pi
        return math.pi if w == -math.pi else float(w)
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if w.ndim == 0 else w


def rot_x(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_rotation(phi: float, theta: float, psi: float) -> np.ndarray:
    """ZYX intrinsic Euler angles (roll, pitch, yaw) to a body->world rotation."""
    return rot_z(psi) @ rot_y(theta) @ rot_x(phi)


def rotation_to_euler(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation`. Returns (roll, pitch, yaw)."""
    r = R.tolist()
    c_theta = math.hypot(r[0][0], r[1][0])
    theta = math.atan2(-r[2][0], c_theta)
    if c_theta > 1e-12:
        phi = math.atan2(r[2][1], r[2][2])
        psi = math.atan2(r[1][0], r[0][0])
    else:
        phi = 0.0
        psi = math.atan2(-r[0][1], r[1][1])
    return np.array([wrap_angle(phi), theta, wrap_angle(psi)])


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    w = np.asarray(w, dtype=float)
    th = math.sqrt(float(w @ w))
    W = skew(w)
    if th < 1e-10:
        return np.eye(3) + W + 0.5 * W @ W
    return np.eye(3) + (math.sin(th) / th) * W + ((1.0 - math.cos(th)) / th**2) * W @ W


@dataclass(frozen=True)
class Transform:
    """Homogeneous rigid transform; maps points from the child frame to the parent."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Transform":
        return cls()

    @classmethod
    def from_translation(cls, x: float, y: float, z: float) -> "Transform":
        return cls(np.eye(3), np.array([x, y, z], dtype=float))

    @classmethod
    def from_matrix(cls, M) -> "Transform":
        M = np.asarray(M, dtype=float)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_euler(cls, position, phi: float, theta: float, psi: float) -> "Transform":
        return cls(euler_to_rotation(phi, theta, psi), position)

    def as_matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def __matmul__(self, other: "Transform") -> "Transform":
        return Transform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "Transform":
        Rt = self.rotation.T
        return Transform(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        """Transform an (..., 3) array of points into the parent frame."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.all(np.isfinite(R))
            and np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) < tol
        )

    def allclose(self, other: "Transform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol)
            and np.allclose(self.translation, other.translation, atol=atol)
        )

    def quaternion(self) -> np.ndarray:
        """Rotation as a unit quaternion (x, y, z, w) with w >= 0."""
        from scipy.spatial.transform import Rotation

        q = Rotation.from_matrix(self.rotation).as_quat()
        return q if q[3] >= 0 else -q

    @classmethod
    def from_pose7(cls, pose7) -> "Transform":
        """Build from (x, y, z, qx, qy, qz, qw)."""
        from scipy.spatial.transform import Rotation

        pose7 = np.asarray(pose7, dtype=float)
        return cls(Rotation.from_quat(pose7[3:]).as_matrix(), pose7[:3])

    def pose7(self) -> np.ndarray:
        return np.concatenate([self.translation, self.quaternion()])


def compose_chain(t_wb: Transform, t_b0: Transform, t_0ee: Transform) -> Transform:
    """World -> end-effector transform of the aerial manipulator."""
    return t_wb @ t_b0 @ t_0ee


@dataclass(frozen=True)
class BodyState:
    p: np.ndarray
    theta: np.ndarray  # roll, pitch, yaw
    frame: str = "W"

    def __post_init__(self):
        if self.frame not in FRAMES:
            raise ValueError(f"unknown frame tag {self.frame!r}")
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(
            self, "theta", wrap_angle(np.asarray(self.theta, dtype=float).reshape(3))
        )

    def transform(self) -> Transform:
        return Transform.from_euler(self.p, *self.theta)


@dataclass(frozen=True)
class ArmConfig:
    """Planar 3R arm. All joint axes are the z-axis of the arm base frame L0.

    ``joint_limits`` are checked on the wrapped joint angles; ``None`` means
    unlimited.
    """

    q: np.ndarray
    link_lengths: tuple = (0.15, 0.15, 0.10)
    joint_limits: tuple | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(3)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "link_lengths", tuple(float(x) for x in self.link_lengths))

    def link_offsets(self) -> list[Transform]:
        return [Transform.from_translation(l, 0.0, 0.0) for l in self.link_lengths]

    def check_limits(self):
        if self.joint_limits is None:
            return
        qw = wrap_angle(self.q)
        for i, (lo, hi) in enumerate(self.joint_limits):
            if not lo - 1e-12 <= qw[i] <= hi + 1e-12:
                raise JointLimitError(f"joint {i + 1} at {qw[i]:.4f} rad outside [{lo}, {hi}]")


def arm_fk(arm: ArmConfig) -> Transform:
    """End-effector pose in the arm base frame L0: Rz(q1) Tx(l1) Rz(q2) Tx(l2) Rz(q3) Tx(l3)."""
    arm.check_limits()
    T = Transform.identity()
    for qi, off in zip(arm.q, arm.link_offsets()):
        T = T @ Transform(rot_z(qi)) @ off
    return T


@dataclass(frozen=True)
class ReducedConfig:
    """Reduced generalized coordinates: x, y, z, psi, q1, q2, q3."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (7,):
            raise ValueError(f"reduced configuration needs exactly 7 components, got {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def position(self) -> np.ndarray:
        return self.values[:3]

    @property
    def psi(self) -> float:
        return float(self.values[3])

    @property
    def joints(self) -> np.ndarray:
        return self.values[4:]


def reduced_to_pose(
    q_star, link_lengths=(0.15, 0.15, 0.10), joint_limits=None
) -> tuple[BodyState, ArmConfig]:
    """Embed q* into a level body pose (roll = pitch = 0) plus arm joints.

    Yaw is taken about the world z-axis.
    """
    v = q_star.values if isinstance(q_star, ReducedConfig) else ReducedConfig(q_star).values
    body = BodyState(v[:3], np.array([0.0, 0.0, v[3]]))
    arm = ArmConfig(v[4:], link_lengths, joint_limits)
    return body, arm


def pose_to_reduced(body: BodyState, arm: ArmConfig) -> ReducedConfig:
    return ReducedConfig(np.concatenate([body.p, [body.theta[2]], arm.q]))


def euler_rate_matrix(theta) -> np.ndarray:
    """W such that (p, q, r) = W(Theta) @ Theta_dot for ZYX angles."""
    phi, th, _ = theta
    sphi, cphi = np.sin(phi), np.cos(phi)
    sth, cth = np.sin(th), np.cos(th)
    return np.array(
        [
            [1.0, 0.0, -sth],
            [0.0, cphi, sphi * cth],
            [0.0, -sphi, cphi * cth],
        ]
    )


def _check_gimbal(theta):
    if abs(np.cos(theta[1])) < GIMBAL_TOL:
        raise GimbalLockError(f"pitch {theta[1]:.6f} rad is at the ZYX gimbal-lock singularity")


def euler_rates_to_body_rates(theta, theta_dot) -> np.ndarray:
    _check_gimbal(theta)
    return euler_rate_matrix(theta) @ np.asarray(theta_dot, dtype=float)


def body_rates_to_euler_rates(theta, pqr) -> np.ndarray:
    _check_gimbal(theta)
    phi, th, _ = theta
    sphi, cphi = np.sin(phi), np.cos(phi)
    tth, cth = np.tan(th), np.cos(th)
    Winv = np.array(
        [
            [1.0, sphi * tth, cphi * tth],
            [0.0, cphi, -sphi],
            [0.0, sphi / cth, cphi / cth],
        ]
    )
    return Winv @ np.asarray(pqr, dtype=float)


@dataclass(frozen=True)
class ManipulatorGeometry:
    """Constant parts of the chain: arm links, mounting and camera offsets.

    The default mount rotates L0 so the joint axes are parallel to the body
    y-axis (positive joint angle tilts the tool upward). The default camera
    offset puts the optical axis along the last link, image "down" along
    world -z when the arm is level.
    """

    link_lengths: tuple = (0.15, 0.15, 0.10)
    joint_limits: tuple | None = ((-np.pi / 2, np.pi / 2),) * 3
    mount: Transform = field(
        default_factory=lambda: Transform(rot_x(np.pi / 2), [0.0, 0.0, -0.05])
    )
    camera_offset: Transform = field(
        default_factory=lambda: Transform(
            np.array([[0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]])
        )
    )

    def end_effector(self, t_wb: Transform, q_m) -> Transform:
        arm = ArmConfig(q_m, self.link_lengths, self.joint_limits)
        return compose_chain(t_wb, self.mount, arm_fk(arm))

    def camera_pose(self, t_wb: Transform, q_m) -> Transform:
        return self.end_effector(t_wb, q_m) @ self.camera_offset

    def camera_pose_reduced(self, q_star) -> Transform:
        body, arm = reduced_to_pose(q_star, self.link_lengths, self.joint_limits)
        return self.camera_pose(body.transform(), arm.q)
