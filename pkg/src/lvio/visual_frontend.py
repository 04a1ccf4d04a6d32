"""Visual feature ingestion: keyframe selection, lidar depth association,
and per-feature measurement construction with stereo/mono fallback.

Feature detection and image-space tracking happen upstream; tracks arrive
from files or the simulator as per-frame pixel observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    baseline: float = 0.0  # meters; 0 for mono
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.baseline < 0:
            raise ValueError("baseline must be non-negative")


@dataclass
class FeatureTrack:
    """Pixel observations of one feature over frames.

    ``right`` holds (uR, vR) rows with NaN where no right-camera
    observation exists.
    """

    feature_id: int
    frames: list = field(default_factory=list)
    times: list = field(default_factory=list)
    left: list = field(default_factory=list)  # (uL, vL)
    right: list = field(default_factory=list)  # (uR, vR) or (nan, nan)

    def add(self, frame_id, t, uv, uv_right=None):
        if self.frames and frame_id <= self.frames[-1]:
            raise ValueError("observations must arrive in frame order")
        self.frames.append(int(frame_id))
        self.times.append(float(t))
        self.left.append((float(uv[0]), float(uv[1])))
        if uv_right is None:
            self.right.append((np.nan, np.nan))
        else:
            self.right.append((float(uv_right[0]), float(uv_right[1])))


def select_keyframes(frame_ids):
    """Every second frame, deterministically starting from the first."""
    return list(frame_ids)[::2]


def project_points(cloud_cam, cam: CameraModel):
    """Pinhole projection of camera-frame points; returns (uv, depth, ok)."""
    cloud_cam = np.asarray(cloud_cam, dtype=float)
    z = cloud_cam[:, 2]
    ok = z > 0.01
    zs = np.where(ok, z, 1.0)
    u = cam.fx * cloud_cam[:, 0] / zs + cam.cx
    v = cam.fy * cloud_cam[:, 1] / zs + cam.cy
    return np.stack([u, v], axis=1), z, ok


def associate_depth(obs_uv, cloud_cam, cam: CameraModel, radius_px: float = 3.0):
    """Nearest projected lidar point within ``radius_px`` of the feature.

    Returns that point in the camera frame, or None.  Ties are broken by
    (distance, depth, x, y), so the result does not depend on the cloud's
    point ordering.
    """
    cloud_cam = np.asarray(cloud_cam, dtype=float)
    if len(cloud_cam) == 0:
        return None
    uv, z, ok = project_points(cloud_cam, cam)
    d2 = np.sum((uv - np.asarray(obs_uv, dtype=float)) ** 2, axis=1)
    d2[~ok] = np.inf
    hit = d2 <= radius_px ** 2
    if not np.any(hit):
        return None
    idx = np.nonzero(hit)[0]
    key = np.lexsort((cloud_cam[idx, 1], cloud_cam[idx, 0], z[idx], d2[idx]))
    return cloud_cam[idx[key[0]]].copy()


def build_visual_measurement(obs_left, obs_right, depth_point, prev_depth,
                             max_depth_jump: float = 0.5):
    """Pick the measurement kind for one feature at one keyframe.

    Returns (kind, payload, depth_for_history) where depth_for_history is
    the associated depth whenever one exists (stable or not), for the next
    keyframe's stability check:
      * ("mono_depth", camera-frame point) when lidar depth exists and is
        stable against the previous keyframe's depth;
      * ("stereo", (uL, uR, v)) when a right observation exists;
      * ("mono", (uL, vL)) otherwise.
    """
    depth = float(depth_point[2]) if depth_point is not None else None
    if depth is not None and (prev_depth is None or abs(depth - prev_depth) <= max_depth_jump):
        return "mono_depth", np.asarray(depth_point, dtype=float), depth
    if obs_right is not None and np.all(np.isfinite(obs_right)):
        payload = np.array([obs_left[0], obs_right[0], obs_left[1]], dtype=float)
        return "stereo", payload, depth
    return "mono", np.asarray(obs_left, dtype=float), depth
