"""Synthetic greenhouse: layout, plant geometry, ray casting and the RGB-D sensor model."""

from .layout import Box, GreenhouseLayout, LayoutParams, RowLayout, default_layout, make_row, single_row_layout
from .raycast import KINDS, Scene
from .sensor import (
    CameraIntrinsics,
    Detection,
    DetectorModel,
    DepthImage,
    NoDepthError,
    OrganizedCloud,
    depth_to_pointcloud,
    detection_to_3d,
    frame_rng,
    project_points,
    read_detections,
    render_depth,
    sample_camera_poses,
    simulate_detections,
    write_detections_csv,
    write_detections_json,
)
from .world import Plant, World, WorldConfigError, WorldParams, generate_world, world_from_peppers
