"""Lidar processing pipeline: sweep undistortion, range-image segmentation,
curvature filtering into plane/line candidate sets, and primitive tracking
with PROSAC model fitting.

Scans are ring-structured range images; all heavy steps are vectorized over
the image grid.  Extracted primitives are tracked across scans against
their IMU-predicted location and only long enough tracks are reported to
the estimator.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .geometry import Pose3, PosePath
from .landmarks import (
    LineLandmark,
    PlaneLandmark,
    line_from_point_direction,
    line_transform,
    plane_from_point_normal,
    plane_transform,
)


class MissingPriorError(RuntimeError):
    """Motion prior does not cover the scan interval closely enough."""


@dataclass
class LidarScan:
    """Ring-structured sweep: H rings x W columns captured over ``sweep`` s.

    ``points`` are sensor-frame coordinates at each cell's capture time,
    ``offsets`` the per-cell time offsets in [0, sweep), ``valid`` marks
    cells with a return.  Invalid cells are excluded from all processing.
    """

    points: np.ndarray  # (H, W, 3)
    ranges: np.ndarray  # (H, W)
    offsets: np.ndarray  # (H, W)
    valid: np.ndarray  # (H, W) bool
    t_start: float
    sweep: float = 0.1

    @property
    def shape(self):
        return self.valid.shape


@dataclass
class CandidateSets:
    """Plane and line candidate points with curvature scores and normals."""

    plane_points: np.ndarray  # (Np, 3)
    plane_scores: np.ndarray  # (Np,) curvature, lower is flatter
    plane_normals: np.ndarray  # (Np, 3) oriented away from the sensor
    line_points: np.ndarray  # (Nl, 3)
    line_scores: np.ndarray  # (Nl,) curvature, higher is sharper
    valid_count: int = 0

    @property
    def survivor_fraction(self):
        n = len(self.plane_points) + len(self.line_points)
        return n / max(self.valid_count, 1)


@dataclass
class TrackedPrimitive:
    """A plane or line landmark tracked over consecutive scans."""

    id: int
    kind: str  # "plane" | "line"
    model_world: object
    track_count: int = 1
    miss_count: int = 0
    inlier_count: int = 0
    last_seen_keyframe: int = -1
    centroid_world: np.ndarray = field(default_factory=lambda: np.zeros(3))
    prev_local: object = None


@dataclass(frozen=True)
class PrimitiveMeasurement:
    """One tracked-primitive observation in the undistorted sensor frame."""

    id: int
    kind: str
    local: object
    keyframe: int
    track_count: int
    inlier_count: int


@dataclass(frozen=True)
class LidarFrontendParams:
    seg_angle_deg: float = 10.0
    min_cluster: int = 5
    curvature_half_window: int = 5
    c_plane: float = 0.004
    c_edge: float = 0.010
    sectors: int = 6
    max_plane_per_sector: int = 15
    max_line_per_sector: int = 5
    # sharp features must stand out against the ring trace 3..5 cells away,
    # which rejects smoothly bending traces (e.g. grazing wall arcs)
    edge_contrast: float = 2.0
    occlusion_jump: float = 0.25
    occlusion_cols: int = 2
    gate_distance: float = 0.5
    cluster_radius: float = 1.0
    inlier_tol_plane: float = 0.05
    inlier_tol_line: float = 0.10
    min_inliers_plane: int = 30
    min_inliers_line: int = 10
    normal_filter_deg: float = 30.0
    match_angle: float = 0.35  # rad, plane and line alike
    match_dist: float = 0.5  # m
    prosac_iters: int = 100
    min_track_scans: int = 3
    max_misses: int = 2
    zv_displacement: float = 0.01


# ---------------------------------------------------------------------------
# undistortion


def undistort_scan(scan: LidarScan, pose_path: PosePath, t_target: float) -> LidarScan:
    """Re-express every point at the common time t_target.

    ``pose_path`` provides world_T_sensor over the sweep (forward-propagated
    IMU poses; constant-twist interpolation, ends extrapolated).  Each point
    x captured at t maps through T(t_target)^-1 T(t) x.
    """
    t_end = scan.t_start + scan.sweep
    if pose_path.t_start - scan.t_start > scan.sweep or t_end - pose_path.t_end > scan.sweep:
        raise MissingPriorError(
            f"pose prior [{pose_path.t_start:.3f}, {pose_path.t_end:.3f}] too far "
            f"from scan [{scan.t_start:.3f}, {t_end:.3f}]"
        )
    valid = scan.valid
    times = scan.t_start + scan.offsets[valid]
    uniq, inv = np.unique(times, return_inverse=True)
    R_u, p_u = pose_path.query_many(uniq)
    R_t, p_t = pose_path.query_many(np.array([t_target]))
    R_t, p_t = R_t[0], p_t[0]
    pts = scan.points[valid]
    world = np.einsum("nij,nj->ni", R_u[inv], pts) + p_u[inv]
    local = (world - p_t) @ R_t
    out = scan.points.copy()
    out[valid] = local
    return LidarScan(
        points=out,
        ranges=scan.ranges.copy(),
        offsets=np.zeros_like(scan.offsets),
        valid=valid.copy(),
        t_start=t_target,
        sweep=scan.sweep,
    )


# ---------------------------------------------------------------------------
# segmentation


def _pair_angle_ok(r_a, r_b, alpha, thresh):
    """Bogoslavskyi criterion: merge when atan2(d2 sin a, d1 - d2 cos a) > t."""
    d1 = np.maximum(r_a, r_b)
    d2 = np.minimum(r_a, r_b)
    beta = np.arctan2(d2 * np.sin(alpha), d1 - d2 * np.cos(alpha))
    return beta > thresh


def segment_scan(scan: LidarScan, params: LidarFrontendParams = LidarFrontendParams()):
    """Cluster the range image; returns (H, W) labels with -1 for discarded.

    Neighbors merge when the mutual angle criterion passes; clusters smaller
    than ``min_cluster`` are dropped as noise.
    """
    H, W = scan.shape
    thresh = np.deg2rad(params.seg_angle_deg)
    idx = np.arange(H * W).reshape(H, W)
    r = scan.ranges
    v = scan.valid

    alpha_h = 2.0 * np.pi / W
    ok_h = v & np.roll(v, -1, axis=1) & _pair_angle_ok(r, np.roll(r, -1, axis=1), alpha_h, thresh)
    rows_h, cols_h = idx[ok_h], np.roll(idx, -1, axis=1)[ok_h]

    # vertical neighbor step from the ring geometry (assumes even spacing)
    alpha_v = np.deg2rad(30.0 / max(H - 1, 1))
    ok_v = v[:-1] & v[1:] & _pair_angle_ok(r[:-1], r[1:], alpha_v, thresh)
    rows_v, cols_v = idx[:-1][ok_v], idx[1:][ok_v]

    rows = np.concatenate([rows_h, rows_v])
    cols = np.concatenate([cols_h, cols_v])
    adj = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(H * W, H * W))
    n_comp, labels = connected_components(adj, directed=False)
    labels = labels.reshape(H, W)
    labels[~v] = -1
    keep, counts = np.unique(labels[labels >= 0], return_counts=True)
    small = set(keep[counts < params.min_cluster].tolist())
    if small:
        mask = np.isin(labels, list(small))
        labels[mask] = -1
    return labels


# ---------------------------------------------------------------------------
# curvature filtering


def _occlusion_mask(scan: LidarScan, params: LidarFrontendParams):
    """Cells on the far side of a range discontinuity (occluded edges)."""
    r, v = scan.ranges, scan.valid
    right = np.roll(r, -1, axis=1)
    v_right = np.roll(v, -1, axis=1)
    jump = v & v_right & (np.abs(r - right) > params.occlusion_jump)
    far_left = jump & (r > right)  # this cell is behind its right neighbor
    far_right = jump & (right > r)  # the right neighbor is behind this one
    mask = np.zeros_like(v)
    for k in range(params.occlusion_cols):
        # smear into the far surface, away from the occluder's silhouette
        mask |= np.roll(far_left, -k, axis=1)
        mask |= np.roll(far_right, k + 1, axis=1)
    return mask


def _ring_normals(scan: LidarScan):
    """Per-cell surface normals from range-image neighbors, sensor-facing
    convention: oriented away from the origin like canonical local planes."""
    P = scan.points
    dx = np.roll(P, -1, axis=1) - np.roll(P, 1, axis=1)
    dy = np.empty_like(P)
    dy[1:-1] = P[2:] - P[:-2]
    dy[0] = P[1] - P[0]
    dy[-1] = P[-1] - P[-2]
    n = np.cross(dx, dy)
    norm = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / np.where(norm > 1e-12, norm, 1.0)
    flip = np.einsum("hwk,hwk->hw", n, P) < 0
    n[flip] *= -1.0
    return n


def compute_curvature(scan: LidarScan, labels, params: LidarFrontendParams = LidarFrontendParams()):
    """Split segmented points into plane and line candidates by curvature.

    Curvature is || sum_j (x_j - x_i) || / (|S| * ||x_i||) over
    ``curvature_half_window`` ring neighbors each side.  Per ring sector the
    flattest points below c_plane and the sharpest above c_edge survive,
    which keeps the overall survivor fraction near 10%.
    """
    H, W = scan.shape
    k = params.curvature_half_window
    P = scan.points
    usable = scan.valid & (labels >= 0)

    window_ok = usable.copy()
    neigh_sum = np.zeros_like(P)
    for off in range(1, k + 1):
        for sign in (-1, 1):
            sh = np.roll(P, sign * off, axis=1)
            window_ok &= np.roll(usable, sign * off, axis=1)
            neigh_sum += sh
    nS = 2 * k
    rng_norm = np.linalg.norm(P, axis=-1)
    c = np.linalg.norm(neigh_sum - nS * P, axis=-1) / (nS * np.where(rng_norm > 1e-9, rng_norm, 1.0))

    occl = _occlusion_mask(scan, params)
    eligible = window_ok & ~occl
    normals = _ring_normals(scan)

    # contrast of c against the outer band (cells 3..5 away on each side)
    side_means = []
    for sign in (-1, 1):
        ssum = np.zeros_like(c)
        scnt = np.zeros_like(c)
        for off in range(3, k + 1):
            sh_ok = np.roll(window_ok, sign * off, axis=1)
            ssum += np.where(sh_ok, np.roll(c, sign * off, axis=1), 0.0)
            scnt += sh_ok
        side_means.append(np.where(scnt > 0, ssum / np.maximum(scnt, 1), np.inf))
    band_floor = np.minimum(side_means[0], side_means[1])
    sharp_ok = np.isfinite(band_floor) & (c > params.edge_contrast * band_floor)

    sector_edges = np.linspace(0, W, params.sectors + 1).astype(int)
    pp, ps, pn, lp, ls = [], [], [], [], []
    for h in range(H):
        for s in range(params.sectors):
            c0, c1 = sector_edges[s], sector_edges[s + 1]
            cols = np.nonzero(eligible[h, c0:c1])[0] + c0
            if len(cols) == 0:
                continue
            cv = c[h, cols]
            flat = cols[cv < params.c_plane]
            if len(flat):
                order = np.argsort(c[h, flat])[: params.max_plane_per_sector]
                sel = flat[order]
                pp.append(P[h, sel])
                ps.append(c[h, sel])
                pn.append(normals[h, sel])
            sharp = cols[(cv > params.c_edge) & sharp_ok[h, cols]]
            if len(sharp):
                order = np.argsort(-c[h, sharp])[: params.max_line_per_sector]
                sel = sharp[order]
                lp.append(P[h, sel])
                ls.append(c[h, sel])

    def cat(parts, width):
        return np.concatenate(parts) if parts else np.zeros((0, width) if width > 1 else 0)

    return CandidateSets(
        plane_points=cat(pp, 3),
        plane_scores=cat(ps, 1),
        plane_normals=cat(pn, 3),
        line_points=cat(lp, 3),
        line_scores=cat(ls, 1),
        valid_count=int(scan.valid.sum()),
    )


# ---------------------------------------------------------------------------
# robust fitting


def _fit_plane_lsq(points) -> PlaneLandmark:
    c = points.mean(axis=0)
    cov = (points - c).T @ (points - c)
    w, V = np.linalg.eigh(cov)
    return plane_from_point_normal(c, V[:, 0])


def _fit_line_lsq(points) -> LineLandmark:
    c = points.mean(axis=0)
    cov = (points - c).T @ (points - c)
    w, V = np.linalg.eigh(cov)
    return line_from_point_direction(c, V[:, -1])


def _plane_distances(model: PlaneLandmark, points):
    return np.abs(points @ model.n + model.d)


def _line_distances(model: LineLandmark, points):
    return model.point_distance(points)


def prosac_fit(points, kind: str, scores, rng, params: LidarFrontendParams = LidarFrontendParams(),
               seed_model=None):
    """Progressive sample consensus fit of a plane or line.

    Points are ranked by quality (low curvature first for planes, high
    first for lines); hypotheses are drawn from a growing top-ranked pool
    so good points are tried early.  The winning consensus set is refit by
    least squares.  Returns (model, inlier_mask) or (None, zeros).

    ``seed_model`` (e.g. the IMU-predicted primitive during tracking) short
    circuits sampling when it already explains most of the points.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if kind == "plane":
        m_min, tol, need = 3, params.inlier_tol_plane, params.min_inliers_plane
        order = np.argsort(np.asarray(scores))
    elif kind == "line":
        m_min, tol, need = 2, params.inlier_tol_line, params.min_inliers_line
        order = np.argsort(-np.asarray(scores))
    else:
        raise ValueError(f"unknown primitive kind '{kind}'")
    if n < max(m_min, need):
        return None, np.zeros(n, dtype=bool)

    if seed_model is not None:
        dist = _plane_distances(seed_model, points) if kind == "plane" else _line_distances(seed_model, points)
        inl = dist < tol
        if inl.sum() >= max(need, 0.5 * n):
            model = _fit_plane_lsq(points[inl]) if kind == "plane" else _fit_line_lsq(points[inl])
            dist = _plane_distances(model, points) if kind == "plane" else _line_distances(model, points)
            inl = dist < tol
            if inl.sum() >= need:
                model = _fit_plane_lsq(points[inl]) if kind == "plane" else _fit_line_lsq(points[inl])
                return model, inl

    ranked = points[order]
    T = params.prosac_iters
    grow_iters = max(1, int(0.7 * T))
    pools = np.minimum(n, m_min + np.ceil((n - m_min) * (np.arange(1, T + 1)) / grow_iters).astype(int))
    # PROSAC draw per hypothesis: the pool's newest point plus m-1 random
    # picks from the rest of it; index collisions just waste the hypothesis
    draws = rng.integers(0, np.maximum(pools - 1, 1)[:, None], size=(T, m_min - 1))
    anchors = ranked[pools - 1]
    others = ranked[draws]
    if kind == "plane":
        nvec = np.cross(others[:, 0] - anchors, others[:, 1] - anchors)
        nn = np.linalg.norm(nvec, axis=1)
        good = nn > 1e-9
        nvec = nvec / np.where(good, nn, 1.0)[:, None]
        rel = points[None, :, :] - anchors[:, None, :]
        dist = np.abs(np.einsum("tnk,tk->tn", rel, nvec))
    else:
        dvec = others[:, 0] - anchors
        dn = np.linalg.norm(dvec, axis=1)
        good = dn > 1e-9
        dvec = dvec / np.where(good, dn, 1.0)[:, None]
        rel = points[None, :, :] - anchors[:, None, :]
        proj = np.einsum("tnk,tk->tn", rel, dvec)
        dist = np.linalg.norm(rel - proj[..., None] * dvec[:, None, :], axis=-1)
    counts = np.where(good, (dist < tol).sum(axis=1), 0)
    best_t = int(np.argmax(counts))
    best_count = int(counts[best_t])
    best_inl = dist[best_t] < tol
    if best_count < need:
        return None, np.zeros(n, dtype=bool)
    model = _fit_plane_lsq(points[best_inl]) if kind == "plane" else _fit_line_lsq(points[best_inl])
    # one consensus refinement after the least-squares refit
    dist = _plane_distances(model, points) if kind == "plane" else _line_distances(model, points)
    inl = dist < tol
    if inl.sum() >= need:
        model = _fit_plane_lsq(points[inl]) if kind == "plane" else _fit_line_lsq(points[inl])
        best_inl = inl
    return model, best_inl


# ---------------------------------------------------------------------------
# matching


def match_plane(p_i: PlaneLandmark, p_j: PlaneLandmark, alpha: float = 0.35, beta: float = 0.5) -> bool:
    """Paper-threshold similarity test between two plane detections."""
    ang = np.arccos(np.clip(p_i.n @ p_j.n, -1.0, 1.0))
    dist = np.linalg.norm(p_i.n * p_i.d - p_j.n * p_j.d)
    return bool(ang < alpha and dist < beta)


def match_line(l_i: LineLandmark, l_j: LineLandmark, alpha: float = 0.35, beta: float = 0.5) -> bool:
    """Direction and perpendicular center-offset test (offset along the
    first line's direction is invisible)."""
    v_i = l_i.direction
    ang = np.arccos(np.clip(v_i @ l_j.direction, -1.0, 1.0))
    dd = l_i.closest_point - l_j.closest_point
    perp = dd - (dd @ v_i) * v_i
    return bool(ang < alpha and np.linalg.norm(perp) < beta)


# ---------------------------------------------------------------------------
# clustering helpers


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, a):
        p = self.parent
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra


_CELL_OFFSETS = np.array(
    [[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)
     if (i, j, k) != (0, 0, 0)]
)


def _encode_cells(cells):
    # pack 3 cell coordinates into one sortable int (21 bits per axis)
    base = np.int64(1) << 21
    off = np.int64(1) << 20
    c = cells.astype(np.int64) + off
    return (c[:, 0] * base + c[:, 1]) * base + c[:, 2]


def _voxel_components(points, radius):
    """Point labels from connected occupied voxels of size ``radius``.

    Granularity is one cell, so clusters separated by less than one cell
    diagonal may merge; the structures we separate sit several cells apart.
    """
    cells = np.floor(np.asarray(points) / radius).astype(np.int64)
    occ, inv = np.unique(cells, axis=0, return_inverse=True)
    m = len(occ)
    uf = _UnionFind(m)
    if m <= 512:
        cheb = np.max(np.abs(occ[:, None, :] - occ[None, :, :]), axis=-1)
        ii, jj = np.nonzero(np.triu(cheb <= 1, k=1))
        for i, j in zip(ii.tolist(), jj.tolist()):
            uf.union(i, j)
    else:
        keys = _encode_cells(occ)
        order = np.argsort(keys)
        keys_sorted = keys[order]
        for off in _CELL_OFFSETS:
            nb = _encode_cells(occ + off)
            pos = np.clip(np.searchsorted(keys_sorted, nb), 0, m - 1)
            hit = keys_sorted[pos] == nb
            for i, j in zip(np.nonzero(hit)[0].tolist(), order[pos[hit]].tolist()):
                uf.union(i, j)
    roots = np.array([uf.find(i) for i in range(m)])
    return roots[inv]


def _euclidean_clusters(points, radius, min_size):
    """Clusters of nearby points; returns list of index arrays."""
    n = len(points)
    if n == 0:
        return []
    labels = _voxel_components(points, radius)
    out = []
    for lab in np.unique(labels):
        idx = np.nonzero(labels == lab)[0]
        if len(idx) >= min_size:
            out.append(idx)
    return out


def _normal_region_grow(points, normals, radius, angle_rad, min_size):
    """Clusters of nearby points with similar normals (for plane detection).

    Spatial clusters are split by normal direction: points are grouped to
    the cluster's dominant directions greedily until all are assigned.
    """
    n = len(points)
    if n == 0:
        return []
    cos_lim = np.cos(angle_rad)
    out = []
    for idx in _euclidean_clusters(points, radius, min_size):
        left = idx.copy()
        while len(left) >= min_size:
            # dominant direction of what's left
            M = normals[left].T @ normals[left]
            w, V = np.linalg.eigh(M)
            dom = V[:, -1]
            sim = np.abs(normals[left] @ dom) > cos_lim
            grp = left[sim]
            if len(grp) < min_size or len(grp) == 0:
                break
            out.append(grp)
            left = left[~sim]
    return out


# ---------------------------------------------------------------------------
# tracking


def translation_observability_rank(tracked) -> int:
    """Rank of the translation directions the tracked primitives constrain.

    A plane constrains motion along its normal; a line everything but its
    direction.  Rank below 3 means standstill cannot be certified (e.g. a
    corridor is blind along its axis), so the stationarity vote abstains.
    """
    from .landmarks import tangent_basis

    rows = []
    for tp in tracked:
        if tp.kind == "plane":
            rows.append(tp.model_world.n)
        else:
            rows.append(tangent_basis(tp.model_world.direction)[:, 0])
            rows.append(tangent_basis(tp.model_world.direction)[:, 1])
    if not rows:
        return 0
    # conditioning threshold: incidental tilt noise on rows must not count
    # as coverage of an axis, only well-aligned constraints do
    sv = np.linalg.svd(np.stack(rows), compute_uv=False)
    return int(np.sum(sv > 0.3))


def _local_model(kind: str, model_world, T_ws: Pose3):
    T_inv = T_ws.inverse()
    return plane_transform(T_inv, model_world) if kind == "plane" else line_transform(T_inv, model_world)


def _model_displacement(kind: str, a, b):
    if kind == "plane":
        return float(np.linalg.norm(a.n * a.d - b.n * b.d))
    dd = a.closest_point - b.closest_point
    v = a.direction
    return float(np.linalg.norm(dd - (dd @ v) * v))


def track_primitives(sets: CandidateSets, tracked, T_ws_pred: Pose3, kf_index: int,
                     rng, params: LidarFrontendParams = LidarFrontendParams()):
    """Re-detect each tracked primitive near its predicted location.

    Oldest (longest-tracked) primitives go first and consume their inliers
    so no point supports two primitives.  Returns (surviving tracked list,
    measurements, mean model displacement for the stationarity vote).
    """
    plane_pts = sets.plane_points
    plane_scores = sets.plane_scores
    plane_normals = sets.plane_normals
    line_pts = sets.line_points
    line_scores = sets.line_scores
    plane_free = np.ones(len(plane_pts), dtype=bool)
    line_free = np.ones(len(line_pts), dtype=bool)

    measurements = []
    survivors = []
    displacements = []
    order = sorted(tracked, key=lambda tp: (-tp.track_count, tp.id))
    cos_norm = np.cos(np.deg2rad(params.normal_filter_deg))

    for tp in order:
        pred_local = _local_model(tp.kind, tp.model_world, T_ws_pred)
        cen_local = T_ws_pred.inverse().act(tp.centroid_world)
        fitted, used_global = None, None
        if tp.kind == "plane":
            cand_idx = np.nonzero(plane_free)[0]
            if len(cand_idx):
                pts = plane_pts[cand_idx]
                near = _plane_distances(pred_local, pts) < params.gate_distance
                ok_norm = plane_normals[cand_idx] @ pred_local.n > cos_norm
                cand_idx = cand_idx[near & ok_norm]
        else:
            cand_idx = np.nonzero(line_free)[0]
            if len(cand_idx):
                near = _line_distances(pred_local, line_pts[cand_idx]) < params.gate_distance
                cand_idx = cand_idx[near]
        need = params.min_inliers_plane if tp.kind == "plane" else params.min_inliers_line
        if len(cand_idx) >= need:
            pts = plane_pts[cand_idx] if tp.kind == "plane" else line_pts[cand_idx]
            clusters = _euclidean_clusters(pts, params.cluster_radius, need)
            if clusters:
                cents = np.stack([pts[idx].mean(axis=0) for idx in clusters])
                pick = int(np.argmin(np.linalg.norm(cents - cen_local, axis=1)))
                sel = clusters[pick]
                scores = (plane_scores if tp.kind == "plane" else line_scores)[cand_idx[sel]]
                model, inl = prosac_fit(pts[sel], tp.kind, scores, rng, params,
                                        seed_model=pred_local)
                if model is not None and (
                    match_plane(pred_local, model, params.match_angle, params.match_dist)
                    if tp.kind == "plane"
                    else match_line(pred_local, model, params.match_angle, params.match_dist)
                ):
                    fitted = model
                    used_global = cand_idx[sel[inl]]

        if fitted is None:
            tp.miss_count += 1
            if tp.miss_count < params.max_misses:
                survivors.append(tp)
            continue

        if tp.prev_local is not None:
            displacements.append(_model_displacement(tp.kind, fitted, tp.prev_local))
        tp.prev_local = fitted
        tp.track_count += 1
        tp.miss_count = 0
        tp.inlier_count = len(used_global)
        tp.last_seen_keyframe = kf_index
        if tp.kind == "plane":
            tp.model_world = plane_transform(T_ws_pred, fitted)
            inl_pts = plane_pts[used_global]
            plane_free[used_global] = False
        else:
            tp.model_world = line_transform(T_ws_pred, fitted)
            inl_pts = line_pts[used_global]
            line_free[used_global] = False
        tp.centroid_world = T_ws_pred.act(inl_pts.mean(axis=0))
        survivors.append(tp)
        measurements.append(
            PrimitiveMeasurement(tp.id, tp.kind, fitted, kf_index, tp.track_count, tp.inlier_count)
        )

    remaining = CandidateSets(
        plane_points=plane_pts[plane_free],
        plane_scores=plane_scores[plane_free],
        plane_normals=plane_normals[plane_free],
        line_points=line_pts[line_free],
        line_scores=line_scores[line_free],
        valid_count=sets.valid_count,
    )
    mean_disp = float(np.mean(displacements)) if displacements else float("inf")
    return survivors, measurements, remaining, mean_disp


def detect_new_primitives(sets: CandidateSets, T_ws_pred: Pose3, kf_index: int,
                          next_id: int, rng,
                          params: LidarFrontendParams = LidarFrontendParams()):
    """Fit fresh primitives in the candidates left over after tracking."""
    new = []
    nid = next_id
    ang = np.deg2rad(params.normal_filter_deg)
    for idx in _normal_region_grow(sets.plane_points, sets.plane_normals,
                                   params.cluster_radius, ang, params.min_inliers_plane):
        model, inl = prosac_fit(sets.plane_points[idx], "plane", sets.plane_scores[idx], rng, params)
        if model is None:
            continue
        new.append(
            TrackedPrimitive(
                id=nid, kind="plane", model_world=plane_transform(T_ws_pred, model),
                track_count=1, inlier_count=int(inl.sum()), last_seen_keyframe=kf_index,
                centroid_world=T_ws_pred.act(sets.plane_points[idx][inl].mean(axis=0)),
                prev_local=model,
            )
        )
        nid += 1
    for idx in _euclidean_clusters(sets.line_points, params.cluster_radius,
                                   params.min_inliers_line):
        model, inl = prosac_fit(sets.line_points[idx], "line", sets.line_scores[idx], rng, params)
        if model is None:
            continue
        new.append(
            TrackedPrimitive(
                id=nid, kind="line", model_world=line_transform(T_ws_pred, model),
                track_count=1, inlier_count=int(inl.sum()), last_seen_keyframe=kf_index,
                centroid_world=T_ws_pred.act(sets.line_points[idx][inl].mean(axis=0)),
                prev_local=model,
            )
        )
        nid += 1
    return new, nid
