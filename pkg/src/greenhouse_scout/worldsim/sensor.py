"""Pinhole RGB-D sensor model, organised point clouds and synthetic detections.

Camera frame convention: z along the optical axis, x to the right, y down;
a pixel (u, v) with depth d deprojects to ((u - cx) d / fx, (v - cy) d / fy, d).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from ..spatial import Transform, euler_to_rotation
from .raycast import KINDS, Scene


class NoDepthError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float = 570.0
    fy: float = 570.0
    cx: float = 319.5
    cy: float = 239.5
    width: int = 640
    height: int = 480
    max_range: float = 5.0

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside the image")

    def pixel_rays(self, us=None, vs=None) -> np.ndarray:
        """Camera-frame ray directions with unit z component, shape (H, W, 3) or (N, 3)."""
        if us is None:
            vs, us = np.mgrid[0: self.height, 0: self.width].astype(float)
        us = np.asarray(us, dtype=float)
        vs = np.asarray(vs, dtype=float)
        return np.stack([(us - self.cx) / self.fx, (vs - self.cy) / self.fy, np.ones_like(us)], axis=-1)


@dataclass
class DepthImage:
    depth: np.ndarray  # (H, W) metres, 0 = no return
    pose: Transform  # camera -> world

    def to_png(self, path):
        """16-bit PNG in millimetres."""
        from PIL import Image

        mm = np.clip(np.round(self.depth * 1000.0), 0, 65535).astype(np.uint16)
        Image.fromarray(mm).save(path)


@dataclass
class OrganizedCloud:
    points: np.ndarray  # (H, W, 3) camera frame, NaN where invalid
    valid: np.ndarray  # (H, W) bool
    pose: Transform

    def world_points(self) -> np.ndarray:
        return self.pose.apply(self.points)


def _scene_of(world_or_scene) -> Scene:
    return world_or_scene if isinstance(world_or_scene, Scene) else world_or_scene.scene


def render_depth(world, pose: Transform, intr: CameraIntrinsics) -> DepthImage:
    """Z-buffer depth by nearest-hit ray casting from every pixel centre."""
    scene = _scene_of(world)
    rays_c = intr.pixel_rays().reshape(-1, 3)
    norm = np.linalg.norm(rays_c, axis=1)
    d_cam = rays_c / norm[:, None]
    d_world = d_cam @ pose.rotation.T
    # hits beyond max_range depth are dropped: ray length limit = range / cos
    t_max = intr.max_range * norm
    scene, _ = _local_scene(scene, pose, intr)
    t, pid = scene.cast(pose.translation[None], d_world, t_max)
    depth = np.where(pid >= 0, t / norm, 0.0)
    return DepthImage(depth.reshape(intr.height, intr.width), pose)


def depth_to_pointcloud(img: DepthImage, intr: CameraIntrinsics) -> OrganizedCloud:
    d = np.asarray(img.depth, dtype=float)
    if d.shape != (intr.height, intr.width):
        raise ValueError(f"depth image {d.shape} does not match intrinsics {(intr.height, intr.width)}")
    valid = d > 0
    pts = intr.pixel_rays() * d[..., None]
    pts[~valid] = np.nan
    return OrganizedCloud(pts, valid, img.pose)


def project_points(points_cam, intr: CameraIntrinsics) -> np.ndarray:
    """Camera-frame points (N, 3) -> (u, v, depth) rows."""
    p = np.atleast_2d(np.asarray(points_cam, dtype=float))
    z = p[:, 2]
    return np.column_stack([intr.fx * p[:, 0] / z + intr.cx, intr.fy * p[:, 1] / z + intr.cy, z])


def detection_to_3d(bbox, cloud: OrganizedCloud, pepper_radius: float = 0.04) -> np.ndarray:
    """World-frame centroid of the cloud points inside a pixel box.

    ``bbox`` is (u_min, v_min, u_max, v_max), inclusive pixel bounds. Points
    deeper than the box's median depth plus two pepper radii are treated as
    background and dropped.
    """
    H, W = cloud.valid.shape
    u0, v0, u1, v1 = [int(round(b)) for b in bbox]
    u0, u1 = max(u0, 0), min(u1, W - 1)
    v0, v1 = max(v0, 0), min(v1, H - 1)
    if u0 > u1 or v0 > v1:
        raise NoDepthError("bounding box does not intersect the image")
    valid = cloud.valid[v0: v1 + 1, u0: u1 + 1]
    pts = cloud.points[v0: v1 + 1, u0: u1 + 1][valid]
    if len(pts) == 0:
        raise NoDepthError("no valid depth inside the bounding box")
    med = np.median(pts[:, 2])
    pts = pts[pts[:, 2] <= med + 2.0 * pepper_radius]
    return cloud.pose.apply(pts.mean(axis=0))


@dataclass(frozen=True)
class DetectorModel:
    recall: float = 0.8
    position_sigma: float = 0.01
    fp_rate: float = 0.2  # Poisson mean false positives per frame
    visibility_threshold: float = 0.3
    n_surface_samples: int = 32
    confidence_tp: tuple = (8.0, 2.0)  # beta distribution parameters
    confidence_fp: tuple = (2.0, 5.0)
    fp_kinds: tuple = ("pot", "table")
    truncate_sigmas: float = 4.0  # longer noise vectors are redrawn


@dataclass
class Detection:
    point: np.ndarray
    confidence: float
    frame: int
    pose: Transform
    bbox: tuple
    t: float = 0.0
    source: int = -1  # ground-truth pepper index, -1 for a false positive

    def record(self) -> dict:
        return {
            "frame": int(self.frame),
            "t": float(self.t),
            "camera_pose": [float(x) for x in self.pose.pose7()],
            "point": [float(x) for x in self.point],
            "confidence": float(self.confidence),
        }


def fibonacci_sphere(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors."""
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    r = np.sqrt(1.0 - z * z)
    phi = np.pi * (3.0 - np.sqrt(5.0)) * k
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])


def _in_image(uvz, intr: CameraIntrinsics):
    return (uvz[:, 2] > 0) & (uvz[:, 0] >= -0.5) & (uvz[:, 0] <= intr.width - 0.5) \
        & (uvz[:, 1] >= -0.5) & (uvz[:, 1] <= intr.height - 0.5) & (uvz[:, 2] <= intr.max_range)


def _local_scene(scene: Scene, pose: Transform, intr: CameraIntrinsics):
    """Primitives whose bounding sphere touches the view frustum (frustum culling)."""
    c, r = scene.bounding_spheres()
    rel = (c - pose.translation) @ pose.rotation  # camera frame
    x, y, z = rel[:, 0], rel[:, 1], rel[:, 2]
    keep = (z >= -r) & (z <= intr.max_range + r)
    tl, tr = (intr.cx + 0.5) / intr.fx, (intr.width - 0.5 - intr.cx) / intr.fx
    tt, tb = (intr.cy + 0.5) / intr.fy, (intr.height - 0.5 - intr.cy) / intr.fy
    for sign, tan, coord in ((-1, tl, x), (1, tr, x), (-1, tt, y), (1, tb, y)):
        # signed distance to the side plane sign*coord = tan*z
        dist = (sign * coord - tan * z) / np.hypot(1.0, tan)
        keep &= dist <= r
    return scene.subset(keep)


def visible_surface(world, peppers, pose: Transform, intr: CameraIntrinsics, n_samples: int = 32,
                    local=None):
    """Camera-facing surface samples of each pepper and which are unoccluded.

    Returns one ``(points, weights, visible)`` triple per pepper, restricted
    to facing samples; weights are cos(surface normal, view ray). All sample
    rays are cast in one batch.
    """
    scene = _scene_of(world)
    peppers = np.atleast_1d(np.asarray(peppers, dtype=int))
    normals = fibonacci_sphere(n_samples)
    cam = pose.translation
    pts = scene.sph_c[peppers][:, None, :] + scene.sph_r[peppers][:, None, None] * normals[None]
    view = cam - pts
    dist = np.linalg.norm(view, axis=2)
    cosang = np.einsum("jk,ijk->ij", normals, view) / dist
    facing = cosang > 0
    inimg = _in_image(project_points(pose.inverse().apply(pts.reshape(-1, 3)), intr), intr).reshape(facing.shape)
    cand = facing & inimg
    vis = np.zeros(facing.shape, dtype=bool)
    if cand.any():
        sub, idmap = local if local is not None else _local_scene(scene, pose, intr)
        pos_in_sub = np.full(scene.n_primitives, -1)
        pos_in_sub[idmap] = np.arange(len(idmap))
        ii, jj = np.nonzero(cand)
        dirs = (pts[ii, jj] - cam) / dist[ii, jj, None]
        excl = pos_in_sub[peppers[ii]]
        t, _ = sub.cast(cam[None], dirs, dist[ii, jj] - 1e-6, exclude=excl)
        vis[ii, jj] = ~np.isfinite(t)
    return [(pts[i][facing[i]], cosang[i][facing[i]], vis[i][facing[i]]) for i in range(len(peppers))]


def surface_centroid(points, weights, visible):
    w = weights * visible
    return (points * w[:, None]).sum(axis=0) / w.sum()


def _bbox(center_cam, radius, intr):
    u, v, z = project_points(center_cam, intr)[0]
    ru = intr.fx * radius / z
    rv = intr.fy * radius / z
    return (max(0.0, u - ru), max(0.0, v - rv), min(intr.width - 1.0, u + ru), min(intr.height - 1.0, v + rv))


def simulate_detections(world, pose: Transform, intr: CameraIntrinsics, model: DetectorModel,
                        rng: np.random.Generator, frame: int = 0, t: float = 0.0) -> list:
    """Emulated detector output for one camera frame.

    A ripe pepper whose visible fraction of camera-facing surface samples
    reaches the threshold is detected with probability ``recall`` at its
    foreshortening-weighted visible-surface centroid plus Gaussian noise.
    False positives are Poisson distributed and land on pot/table surfaces.
    """
    scene = world.scene
    centers, radii, ripe, _ = world.peppers
    dets = []
    inv = pose.inverse()
    local = None
    if len(centers):
        cc = inv.apply(centers)
        uvz = project_points(cc, intr)
        cand = np.flatnonzero(ripe & _in_image(uvz, intr))
        if len(cand):
            local = _local_scene(scene, pose, intr)
            surf = visible_surface(world, cand, pose, intr, model.n_surface_samples, local)
            for k, (pts, w, vis) in zip(cand, surf):
                if len(vis) == 0 or vis.sum() / len(vis) < model.visibility_threshold:
                    continue
                if rng.random() >= model.recall:
                    continue
                p = surface_centroid(pts, w, vis)
                if model.position_sigma > 0:
                    p = p + _truncated_noise(rng, model.position_sigma, model.truncate_sigmas)
                conf = float(rng.beta(*model.confidence_tp))
                dets.append(Detection(p, conf, frame, pose, _bbox(cc[k], radii[k], intr), t, int(k)))
    n_fp = int(rng.poisson(model.fp_rate)) if model.fp_rate > 0 else 0
    if n_fp:
        local = local or _local_scene(scene, pose, intr)
        sub, idmap = local
        ok_kinds = [KINDS.index(k) for k in model.fp_kinds]
        for _ in range(n_fp):
            for _attempt in range(20):
                u = rng.uniform(0, intr.width - 1)
                v = rng.uniform(0, intr.height - 1)
                ray = intr.pixel_rays(np.array([u]), np.array([v]))[0]
                n = np.linalg.norm(ray)
                d = pose.rotation @ (ray / n)
                tt, pid = sub.cast(pose.translation[None], d[None], intr.max_range * n)
                if pid[0] >= 0 and sub.kind_of(pid)[0] in ok_kinds:
                    p = pose.translation + tt[0] * d
                    conf = float(rng.beta(*model.confidence_fp))
                    half = 15.0
                    dets.append(Detection(p, conf, frame, pose, (u - half, v - half, u + half, v + half), t, -1))
                    break
    return dets


def _truncated_noise(rng, sigma, n_sigmas):
    while True:
        e = rng.normal(0.0, sigma, 3)
        if e @ e <= (n_sigmas * sigma) ** 2:
            return e


def frame_rng(seed: int, frame: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(frame)]))


def frame_times(t_end: float, frame_rate: float) -> np.ndarray:
    if frame_rate <= 0:
        raise ValueError("frame_rate must be positive")
    n = int(math.floor(t_end * frame_rate + 1e-9)) + 1
    return np.arange(n) / frame_rate


def sample_camera_poses(traj_or_log, frame_rate: float, geometry, t0: float | None = None):
    """Camera poses at ``frame_rate`` from a planned trajectory or a flight log.

    Uses the nearest sample in time. Returns ``(times, poses)``.
    """
    from ..scanplan import Trajectory

    t = np.asarray(traj_or_log.t, dtype=float)
    start = t[0] if t0 is None else t0
    times = start + frame_times(t[-1] - start, frame_rate)
    idx = np.clip(np.searchsorted(t, times), 0, len(t) - 1)
    prev = np.clip(idx - 1, 0, len(t) - 1)
    idx = np.where(np.abs(t[prev] - times) <= np.abs(t[idx] - times), prev, idx)
    poses = []
    if isinstance(traj_or_log, Trajectory):
        for k in idx:
            poses.append(geometry.camera_pose_reduced(traj_or_log.positions[k]))
    else:
        # attitude from the logged Euler angles so in-memory and file logs agree bit for bit
        for k in idx:
            t_wb = Transform(euler_to_rotation(*traj_or_log.q[k, 3:6]), traj_or_log.q[k, :3])
            poses.append(geometry.camera_pose(t_wb, traj_or_log.q[k, 6:9]))
    return times, poses


DETECTION_COLUMNS = ["frame", "t", "px", "py", "pz", "qx", "qy", "qz", "qw", "x", "y", "z", "confidence"]


def write_detections_csv(dets, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DETECTION_COLUMNS)
        for d in dets:
            r = d.record()
            w.writerow([r["frame"], repr(r["t"]), *map(repr, r["camera_pose"]), *map(repr, r["point"]),
                        repr(r["confidence"])])


def write_detections_json(dets, path):
    with open(path, "w") as fh:
        json.dump([d.record() for d in dets], fh, indent=1)


def read_detections(path) -> list:
    """Read a detection log written as CSV or JSON (by file suffix)."""
    from ..io import ParseError, read_numeric_csv

    path = str(path)
    out = []
    if path.endswith(".json"):
        with open(path) as fh:
            try:
                recs = json.load(fh)
            except json.JSONDecodeError as e:
                raise ParseError(f"{path}: line {e.lineno}: {e.msg}") from e
        for i, r in enumerate(recs):
            try:
                out.append(Detection(np.asarray(r["point"], float), float(r["confidence"]), int(r["frame"]),
                                     Transform.from_pose7(r["camera_pose"]), (), float(r["t"])))
            except (KeyError, TypeError, ValueError) as e:
                raise ParseError(f"{path}: record {i}: bad or missing field ({e})") from e
        return out
    data = read_numeric_csv(path, len(DETECTION_COLUMNS), header=DETECTION_COLUMNS)
    for row in data:
        out.append(Detection(row[9:12].copy(), float(row[12]), int(row[0]), Transform.from_pose7(row[2:9]), (),
                             float(row[1])))
    return out
