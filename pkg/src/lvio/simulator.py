"""Synthetic worlds, analytic trajectories, and sensor stream generation.

Trajectories are piecewise constant body-frame twists, so every ground
truth quantity has a closed form: pose T(t) = T_seg * Exp(dt * xi), body
linear velocity is the twist's linear part, body angular rate its angular
part, and the specific force is w x v - R^T g.  Segment boundaries must
keep the body linear velocity continuous (enforced at construction) so the
IMU stream never contains delta-function accelerations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3, hat, se3_exp
from .imu import DEFAULT_GRAVITY, ImuBias, ImuNoiseParams, State
from .landmarks import (
    LineLandmark,
    PlaneLandmark,
    line_from_point_direction,
    plane_from_point_normal,
)


@dataclass(frozen=True)
class SensorRates:
    imu_hz: float = 100.0
    camera_hz: float = 30.0
    lidar_hz: float = 10.0


@dataclass(frozen=True)
class NoiseSpec:
    """Sensor corruption levels; all zero means noiseless ground truth."""

    imu: ImuNoiseParams = field(default_factory=lambda: ImuNoiseParams(0.0, 0.0, 0.0, 0.0))
    gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    pixel_sigma: float = 0.0
    range_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "gyro_bias", np.asarray(self.gyro_bias, dtype=float).reshape(3))
        object.__setattr__(self, "accel_bias", np.asarray(self.accel_bias, dtype=float).reshape(3))

    @property
    def bias(self) -> ImuBias:
        return ImuBias(self.gyro_bias, self.accel_bias)


@dataclass(frozen=True)
class TrajectorySpec:
    """Piecewise constant-twist trajectory plus sensor rates and noise.

    Each segment is (twist, duration) with twist = [vx, vy, vz, wx, wy, wz]
    in the body frame.  Consecutive segments must share the linear part.
    """

    segments: tuple
    start: Pose3 = field(default_factory=Pose3.identity)
    rates: SensorRates = field(default_factory=SensorRates)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    dropout_windows: tuple = ()

    def __post_init__(self):
        segs = tuple((np.asarray(xi, dtype=float).reshape(6), float(dur)) for xi, dur in self.segments)
        if not segs:
            raise ValueError("trajectory needs at least one segment")
        for _, dur in segs:
            if dur <= 0:
                raise ValueError("segment durations must be positive")
        for (xi_a, _), (xi_b, _) in zip(segs, segs[1:]):
            if np.linalg.norm(xi_a[:3] - xi_b[:3]) > 1e-12:
                raise ValueError(
                    "body linear velocity must be continuous across segments"
                )
        object.__setattr__(self, "segments", segs)
        starts = [0.0]
        poses = [self.start]
        for xi, dur in segs:
            starts.append(starts[-1] + dur)
            poses.append(poses[-1] @ se3_exp(xi * dur))
        object.__setattr__(self, "_seg_starts", np.array(starts))
        object.__setattr__(self, "_seg_poses", poses)

    @property
    def duration(self) -> float:
        return float(self._seg_starts[-1])

    def segment_index(self, t: float) -> int:
        if t < -1e-12 or t > self.duration + 1e-12:
            raise ValueError(f"time {t} outside trajectory span [0, {self.duration}]")
        idx = int(np.searchsorted(self._seg_starts, t, side="right") - 1)
        return min(max(idx, 0), len(self.segments) - 1)


def analytic_state(spec: TrajectorySpec, t: float) -> State:
    """Exact ground-truth state at time t (bias set to the configured truth)."""
    k = spec.segment_index(t)
    xi, _ = spec.segments[k]
    dt = t - spec._seg_starts[k]
    pose = spec._seg_poses[k] @ se3_exp(xi * dt)
    return State(R=pose.R, p=pose.t, v=xi[:3], bias=spec.noise.bias, t=float(t))


def analytic_pose(spec: TrajectorySpec, t: float) -> Pose3:
    x = analytic_state(spec, t)
    return Pose3(x.R, x.p)


def analytic_body_rates(spec: TrajectorySpec, t: float):
    """Body angular velocity and specific force at time t (noiseless)."""
    k = spec.segment_index(t)
    xi, _ = spec.segments[k]
    x = analytic_state(spec, t)
    w, v = xi[3:], xi[:3]
    f = hat(w) @ v - x.R.T @ DEFAULT_GRAVITY
    return w, f


def analytic_poses(spec: TrajectorySpec, ts):
    """Vectorized ground-truth poses: returns (R (m,3,3), p (m,3))."""
    from .geometry import so3_exp, so3_jl

    ts = np.asarray(ts, dtype=float)
    if np.any(ts < -1e-12) or np.any(ts > spec.duration + 1e-12):
        raise ValueError("query times outside trajectory span")
    ks = np.clip(np.searchsorted(spec._seg_starts, ts, side="right") - 1, 0,
                 len(spec.segments) - 1)
    xi = np.stack([xi for xi, _ in spec.segments])[ks]
    dt = ts - spec._seg_starts[ks]
    w = xi[:, 3:] * dt[:, None]
    v = xi[:, :3] * dt[:, None]
    dR = so3_exp(w)
    dp = np.einsum("nij,nj->ni", so3_jl(w), v)
    R0 = np.stack([spec._seg_poses[k].R for k in ks])
    p0 = np.stack([spec._seg_poses[k].t for k in ks])
    return R0 @ dR, np.einsum("nij,nj->ni", R0, dp) + p0


def imu_sample_times(spec: TrajectorySpec):
    n = int(np.floor(spec.duration * spec.rates.imu_hz)) + 1
    return np.arange(n) / spec.rates.imu_hz


def synthesize_imu(spec: TrajectorySpec, seed: int = 0):
    """IMU stream (times, gyro, accel) with configured bias and noise."""
    times = imu_sample_times(spec)
    gyro = np.empty((len(times), 3))
    accel = np.empty((len(times), 3))
    for i, t in enumerate(times):
        w, f = analytic_body_rates(spec, t)
        gyro[i] = w
        accel[i] = f
    gyro += spec.noise.gyro_bias
    accel += spec.noise.accel_bias
    if spec.noise.imu.gyro_noise > 0 or spec.noise.imu.accel_noise > 0:
        rng = np.random.default_rng(seed)
        sg = spec.noise.imu.gyro_noise * np.sqrt(spec.rates.imu_hz)
        sa = spec.noise.imu.accel_noise * np.sqrt(spec.rates.imu_hz)
        gyro = gyro + sg * rng.standard_normal(gyro.shape)
        accel = accel + sa * rng.standard_normal(accel.shape)
    return times, gyro, accel


# ---------------------------------------------------------------------------
# worlds


@dataclass(frozen=True)
class SurfacePatch:
    """Rectangular patch of an infinite plane, for ray casting and sampling."""

    plane: PlaneLandmark
    center: np.ndarray
    axes: np.ndarray  # (3, 2) in-plane orthonormal directions
    half: np.ndarray  # (2,) half extents, meters

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, "axes", np.asarray(self.axes, dtype=float).reshape(3, 2))
        object.__setattr__(self, "half", np.asarray(self.half, dtype=float).reshape(2))


def make_patch(center, normal, along, half_along, half_across) -> SurfacePatch:
    """Rectangular patch with explicit in-plane ``along`` axis and extents."""
    plane = plane_from_point_normal(center, normal)
    u = np.asarray(along, dtype=float)
    u = u - (u @ plane.n) * plane.n
    u = u / np.linalg.norm(u)
    v = np.cross(plane.n, u)
    return SurfacePatch(plane=plane, center=center,
                        axes=np.stack([u, v], axis=-1),
                        half=[half_along, half_across])


@dataclass(frozen=True)
class LineFeature:
    """Infinite line landmark with a finite rendered segment.

    ``rendered`` lines are ray cast as thin cylinders (free-standing poles);
    non-rendered lines mark junctions implied by two patches and exist only
    as ground truth for evaluation.
    """

    line: LineLandmark
    s_range: tuple
    radius: float = 0.02
    rendered: bool = False


@dataclass(frozen=True)
class World:
    patches: tuple
    lines: tuple
    points: np.ndarray  # (N, 3) visual landmark positions
    scenario: str = "open"

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float).reshape(-1, 3))

    @property
    def planes(self):
        return tuple(p.plane for p in self.patches)


def _scatter_on_patch(patch: SurfacePatch, n: int, rng) -> np.ndarray:
    uv = rng.uniform(-1.0, 1.0, (n, 2)) * (patch.half * 0.9)
    return patch.center + uv @ patch.axes.T


def make_open_world(seed: int = 0) -> World:
    """Room-like scene: floor, four walls, a corner pair, and two poles.

    Plane normals span all three axes so the scene fully constrains the
    pose; poles and the panel corner provide line landmarks.
    """
    rng = np.random.default_rng(seed)
    patches = (
        make_patch([0.0, 0.0, -1.0], [0.0, 0.0, 1.0], [1, 0, 0], 24.0, 24.0),  # floor
        make_patch([9.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0, 1, 0], 10.0, 3.0),    # front wall
        make_patch([0.0, 7.0, 1.0], [0.0, 1.0, 0.0], [1, 0, 0], 12.0, 3.0),    # left wall
        make_patch([0.0, -7.0, 1.0], [0.0, 1.0, 0.0], [1, 0, 0], 12.0, 3.0),   # right wall
        make_patch([-6.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0, 1, 0], 10.0, 3.0),   # back wall
        # corner pair: two half-height panels meeting at (6, -3)
        make_patch([6.0, -4.5, 0.5], [1.0, 0.0, 0.0], [0, 1, 0], 1.5, 1.5),
        make_patch([4.5, -3.0, 0.5], [0.0, 1.0, 0.0], [1, 0, 0], 1.5, 1.5),
    )
    lines = (
        LineFeature(line_from_point_direction([4.0, 2.0, 0.0], [0.0, 0.0, 1.0]),
                    (-1.0, 2.0), radius=0.02, rendered=True),
        LineFeature(line_from_point_direction([5.0, 4.5, 0.0], [0.0, 0.0, 1.0]),
                    (-1.0, 2.0), radius=0.02, rendered=True),
        LineFeature(line_from_point_direction([6.0, -3.0, 0.0], [0.0, 0.0, 1.0]),
                    (-1.0, 2.0), rendered=False),  # panel junction
    )
    pts = np.concatenate(
        [
            _scatter_on_patch(patches[1], 30, rng),
            _scatter_on_patch(patches[2], 20, rng),
            _scatter_on_patch(patches[3], 20, rng),
            _scatter_on_patch(patches[0], 15, rng),
        ]
    )
    return World(patches=patches, lines=lines, points=pts, scenario="open")


def make_corridor_world(length: float = 50.0, half_width: float = 2.0,
                        seed: int = 0) -> World:
    """Corridor along +x: two parallel walls and a floor.

    Observable plane normals span only y and z, so plane factors leave the
    corridor axis unconstrained; the junction lines run along the axis and
    do not constrain it either.  Visual texture on the walls is what makes
    the axis observable.
    """
    rng = np.random.default_rng(seed)
    cx = length / 2.0 - 5.0
    patches = (
        make_patch([cx, 0.0, -1.0], [0.0, 0.0, 1.0], [1, 0, 0], length / 2.0, half_width),
        make_patch([cx, half_width, 1.0], [0.0, 1.0, 0.0], [1, 0, 0], length / 2.0, 3.0),
        make_patch([cx, -half_width, 1.0], [0.0, 1.0, 0.0], [1, 0, 0], length / 2.0, 3.0),
    )
    lines = (
        LineFeature(line_from_point_direction([0.0, half_width, -1.0], [1.0, 0.0, 0.0]),
                    (-5.0, length - 5.0), rendered=False),
        LineFeature(line_from_point_direction([0.0, -half_width, -1.0], [1.0, 0.0, 0.0]),
                    (-5.0, length - 5.0), rendered=False),
    )
    n_pts = int(length * 2.5)
    xs = rng.uniform(-4.0, length - 6.0, n_pts)
    side = np.where(rng.uniform(size=n_pts) < 0.5, half_width, -half_width)
    zs = rng.uniform(-0.5, 2.0, n_pts)
    wall_pts = np.stack([xs, side, zs], axis=1)
    return World(patches=patches, lines=lines, points=wall_pts, scenario="corridor")


# ---------------------------------------------------------------------------
# lidar synthesis


def _ray_patch_ranges(origins, dirs, patch: SurfacePatch):
    """Ray/patch hit ranges, inf where missed.  origins/dirs are (N, 3)."""
    n, d = patch.plane.n, patch.plane.d
    denom = dirs @ n
    num = -(origins @ n + d)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = num / denom
    hit = (np.abs(denom) > 1e-12) & (t > 0.05) & np.isfinite(t)
    ts = np.where(hit, t, 0.0)
    rel = origins + ts[:, None] * dirs - patch.center
    ok = hit & (np.abs(rel @ patch.axes[:, 0]) <= patch.half[0]) \
        & (np.abs(rel @ patch.axes[:, 1]) <= patch.half[1])
    return np.where(ok, t, np.inf)


def _ray_cylinder_ranges(origins, dirs, lf: LineFeature):
    """Nearest hit on a finite thin cylinder around the line segment."""
    v = lf.line.direction
    q = lf.line.closest_point
    d_perp = dirs - (dirs @ v)[:, None] * v
    o_rel = origins - q
    o_perp = o_rel - (o_rel @ v)[:, None] * v
    a = np.einsum("nk,nk->n", d_perp, d_perp)
    b = 2.0 * np.einsum("nk,nk->n", d_perp, o_perp)
    c = np.einsum("nk,nk->n", o_perp, o_perp) - lf.radius ** 2
    disc = b * b - 4 * a * c
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-b - np.sqrt(np.clip(disc, 0.0, None))) / (2 * a)
    ok = (disc > 0) & (a > 1e-12) & (t > 0.05)
    s = (o_rel + t[:, None] * dirs) @ v
    ok &= (s >= lf.s_range[0]) & (s <= lf.s_range[1])
    return np.where(ok, t, np.inf)


def lidar_ray_directions(n_rings: int, n_cols: int, fov_deg: float = 30.0):
    """Sensor-frame unit ray directions (rings x columns x 3)."""
    elevations = np.deg2rad(np.linspace(-fov_deg / 2, fov_deg / 2, n_rings))
    azimuths = 2.0 * np.pi * np.arange(n_cols) / n_cols
    ce, se = np.cos(elevations)[:, None], np.sin(elevations)[:, None]
    ca, sa = np.cos(azimuths)[None, :], np.sin(azimuths)[None, :]
    return np.stack([ce * ca, ce * sa, np.broadcast_to(se, (n_rings, n_cols))], axis=-1)


def synthesize_lidar(spec: TrajectorySpec, world: World, T_BL: Pose3 = None,
                     n_rings: int = 16, n_cols: int = 900, max_range: float = 30.0,
                     seed: int = 0):
    """Ray-cast sweep-accurate scans at the configured lidar rate.

    Each column is cast from the true sensor pose at that column's capture
    time, so a moving platform produces genuinely distorted sweeps.  Line
    features marked ``rendered`` appear as thin cylinders.
    """
    from .lidar_frontend import LidarScan

    T_BL = T_BL if T_BL is not None else Pose3.identity()
    sweep = 1.0 / spec.rates.lidar_hz
    dirs = lidar_ray_directions(n_rings, n_cols)
    offsets = np.broadcast_to(np.arange(n_cols) / n_cols * sweep, (n_rings, n_cols)).copy()
    rng = np.random.default_rng(seed)
    scans = []
    n_scans = int(np.floor(spec.duration / sweep + 1e-9))
    for si in range(n_scans):
        t0 = si * sweep
        col_times = t0 + np.arange(n_cols) / n_cols * sweep
        R_b, p_b = analytic_poses(spec, col_times)
        R_s = R_b @ T_BL.R
        p_s = np.einsum("nij,j->ni", R_b, T_BL.t) + p_b
        dirs_w = np.einsum("wij,hwj->hwi", R_s, dirs)
        origins = np.broadcast_to(p_s, (n_rings, n_cols, 3))
        o_flat = origins.reshape(-1, 3)
        d_flat = dirs_w.reshape(-1, 3)
        best = np.full(len(o_flat), np.inf)
        for patch in world.patches:
            best = np.minimum(best, _ray_patch_ranges(o_flat, d_flat, patch))
        for lf in world.lines:
            if lf.rendered:
                best = np.minimum(best, _ray_cylinder_ranges(o_flat, d_flat, lf))
        ranges = best.reshape(n_rings, n_cols)
        valid = np.isfinite(ranges) & (ranges < max_range)
        ranges = np.where(valid, ranges, 0.0)
        if spec.noise.range_sigma > 0:
            ranges = np.where(
                valid, ranges + spec.noise.range_sigma * rng.standard_normal(ranges.shape), ranges
            )
        points = dirs * ranges[..., None]
        scans.append(
            LidarScan(points=points, ranges=ranges, offsets=offsets.copy(),
                      valid=valid, t_start=t0, sweep=sweep)
        )
    return scans


# ---------------------------------------------------------------------------
# camera synthesis


def camera_frame_times(spec: TrajectorySpec):
    n = int(np.floor(spec.duration * spec.rates.camera_hz)) + 1
    return np.arange(n) / spec.rates.camera_hz


def synthesize_tracks(spec: TrajectorySpec, world: World, cam, T_BC: Pose3 = None,
                      seed: int = 0, max_dropout_tracks: int = 4):
    """Project world points at camera times into feature observations.

    Returns a list of per-frame dicts: {frame, t, ids, left (n,2),
    right (n,2) or NaN rows}.  Tracks persist while the point stays in the
    frustum; during configured dropout windows only ``max_dropout_tracks``
    of the lowest feature ids survive (auto-exposure failure analog).
    """
    T_BC = T_BC if T_BC is not None else Pose3.identity()
    rng = np.random.default_rng(seed)
    times = camera_frame_times(spec)
    pts = world.points
    frames = []
    for fid, t in enumerate(times):
        R_b, p_b = analytic_poses(spec, np.array([t]))
        T_wc = Pose3(R_b[0], p_b[0]) @ T_BC
        X = T_wc.inverse().act(pts)
        z = X[:, 2]
        ok = z > 0.3
        zs = np.where(ok, z, 1.0)
        u = cam.fx * X[:, 0] / zs + cam.cx
        v = cam.fy * X[:, 1] / zs + cam.cy
        ok &= (u >= 0) & (u < cam.width) & (v >= 0) & (v < cam.height)
        if cam.baseline > 0:
            uR = u - cam.fx * cam.baseline / zs
            ok_r = ok & (uR >= 0) & (uR < cam.width)
        ids = np.nonzero(ok)[0]
        if any(w0 <= t <= w1 for (w0, w1) in spec.dropout_windows):
            ids = ids[:max_dropout_tracks]
        n = len(ids)
        noise = spec.noise.pixel_sigma * rng.standard_normal((n, 3)) if spec.noise.pixel_sigma > 0 else np.zeros((n, 3))
        left = np.stack([u[ids] + noise[:, 0], v[ids] + noise[:, 1]], axis=1)
        if cam.baseline > 0:
            right = np.stack([uR[ids] + noise[:, 2], v[ids] + noise[:, 1]], axis=1)
            right[~ok_r[ids]] = np.nan
        else:
            right = np.full((n, 2), np.nan)
        frames.append({"frame": fid, "t": float(t), "ids": ids.copy(),
                       "left": left, "right": right})
    return frames


def build_scenario(name: str, seed: int = 0):
    """Named (world, trajectory) pairs used by tests and the CLI."""
    if name == "open":
        world = make_open_world(seed)
        spec = TrajectorySpec(
            segments=(
                (np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.0]), 4.0),
                (np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.25]), 6.0),
                (np.array([0.5, 0.0, 0.0, 0.0, 0.0, -0.15]), 5.0),
            ),
            start=Pose3(np.eye(3), [-3.0, 0.0, 0.0]),
        )
        return world, spec
    if name == "corridor":
        world = make_corridor_world(length=50.0, seed=seed)
        spec = TrajectorySpec(
            segments=((np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.0]), 60.0),),
            start=Pose3(np.eye(3), [0.0, 0.0, 0.0]),
        )
        return world, spec
    if name == "visual-dropout":
        world = make_open_world(seed)
        world = World(patches=world.patches, lines=world.lines, points=world.points,
                      scenario="visual-dropout")
        spec = TrajectorySpec(
            segments=(
                (np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.0]), 8.0),
                (np.array([0.5, 0.0, 0.0, 0.0, 0.0, 0.2]), 9.0),
                (np.array([0.5, 0.0, 0.0, 0.0, 0.0, -0.1]), 8.0),
            ),
            start=Pose3(np.eye(3), [-3.0, 0.0, 0.0]),
            dropout_windows=((14.0, 17.0),),
        )
        return world, spec
    if name == "stationary":
        world = make_open_world(seed)
        spec = TrajectorySpec(
            segments=((np.zeros(6), 12.0),),
            start=Pose3(np.eye(3), [0.0, 0.0, 0.0]),
        )
        return world, spec
    raise ValueError(f"unknown scenario '{name}'")
