"""Parametric landmark types: points, infinite planes, infinite lines.

Planes use the Hessian normal form <n, d> with n.x + d = 0 for on-plane
points x.  Lines carry a rotation R whose z column is the direction and two
scalars (a, b) locating the closest point to the origin, R @ (a, b, 0).

Both forms are redundant (sign / gauge freedom), so every public operation
returns canonical representatives:

* plane: d <= 0; if d == 0 the sign comes from the leading normal component.
* line: direction sign fixed by its leading component, R is the minimal
  rotation taking z to the direction, (a, b) recomputed from the closest
  point in that frame.

"Leading component" means the first entry with magnitude above 0.1, which
keeps the sign choice stable under estimation noise for axis-aligned
primitives (a strict first-nonzero rule would flip on noise).

The ``*_arrays`` functions are batched kernels over leading dimensions;
the dataclass API wraps them for single landmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Pose3, so3_exp, so3_log

# Sign canonicalization keys off the first component with magnitude above
# this threshold.  A unit vector always has one (>= 1/sqrt(3)), and small
# estimation noise on near-axis-aligned directions cannot flip the choice.
_SIGN_TOL = 0.1
_NORM_TOL = 1e-12
_PARALLEL_TOL = 1e-8


class SingularPlaneError(ValueError):
    """Raised when a plane pair is antipodal and the error is undefined."""


@dataclass(frozen=True)
class PointLandmark:
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=float).reshape(3))


@dataclass(frozen=True)
class PlaneLandmark:
    n: np.ndarray
    d: float

    def __post_init__(self):
        object.__setattr__(self, "n", np.asarray(self.n, dtype=float).reshape(3))
        object.__setattr__(self, "d", float(self.d))

    def point_distance(self, x):
        """Signed distance n.x + d of points x (..., 3) from the plane."""
        return np.asarray(x) @ self.n + self.d


@dataclass(frozen=True)
class LineLandmark:
    R: np.ndarray
    a: float
    b: float

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "b", float(self.b))

    @property
    def direction(self):
        return self.R[:, 2]

    @property
    def closest_point(self):
        return self.R @ np.array([self.a, self.b, 0.0])

    def point_distance(self, x):
        """Perpendicular distance of points x (..., 3) from the line."""
        rel = np.asarray(x) - self.closest_point
        along = rel @ self.direction
        return np.linalg.norm(rel - along[..., None] * self.direction, axis=-1)


# ---------------------------------------------------------------------------
# batched plane kernels


def _leading_sign(v):
    """Sign of the first component with magnitude above tolerance (batched)."""
    v = np.asarray(v, dtype=float)
    big = np.abs(v) > _SIGN_TOL
    idx = np.argmax(big, axis=-1)
    lead = np.take_along_axis(v, idx[..., None], axis=-1)[..., 0]
    return np.where(lead >= 0.0, 1.0, -1.0)


def canonicalize_plane_arrays(n, d):
    n = np.asarray(n, dtype=float)
    d = np.asarray(d, dtype=float)
    norm = np.linalg.norm(n, axis=-1)
    if np.any(norm < _NORM_TOL):
        raise ValueError("plane normal must be nonzero")
    n = n / norm[..., None]
    d = d / norm
    flip = np.where(d == 0.0, _leading_sign(n) < 0.0, d > 0.0)
    sign = np.where(flip, -1.0, 1.0)
    return n * sign[..., None], d * sign


def tangent_basis(n):
    """Deterministic orthonormal basis (..., 3, 2) of the plane normal to n."""
    n = np.asarray(n, dtype=float)
    anchor_idx = np.argmin(np.abs(n), axis=-1)
    anchor = np.zeros_like(n)
    np.put_along_axis(anchor, anchor_idx[..., None], 1.0, axis=-1)
    b1 = np.cross(anchor, n)
    b1 = b1 / np.linalg.norm(b1, axis=-1, keepdims=True)
    b2 = np.cross(n, b1)
    return np.stack([b1, b2], axis=-1)


def plane_transform_arrays(R, t, n, d):
    """Map the point set {x : n.x + d = 0} through y = R x + t, canonical."""
    n2 = np.einsum("...ij,...j->...i", R, n)
    d2 = d - np.einsum("...i,...i->...", n2, t)
    return canonicalize_plane_arrays(n2, d2)


def _sphere_log_scaled(n_i, n_j):
    """Tangent vector xi at n_i: -(theta/sin theta) (n_j - c n_i).

    Magnitude equals the geodesic angle and the value goes to zero smoothly
    in the parallel limit (the guarded ratio tends to -1 while the vector
    part vanishes, so identical normals give an exact zero).  Raises for
    antipodal pairs where no unique tangent direction exists.
    """
    c = np.clip(np.einsum("...i,...i->...", n_i, n_j), -1.0, 1.0)
    if np.any(c <= -1.0 + _PARALLEL_TOL):
        raise SingularPlaneError("antipodal plane normals: error undefined")
    s = np.linalg.norm(np.cross(n_i, n_j), axis=-1)
    theta = np.arctan2(s, c)
    scale = np.where(s < 1e-14, -1.0, -theta / np.where(s < 1e-14, 1.0, s))
    xi = scale[..., None] * (n_j - c[..., None] * n_i)
    # identical normals must give an exact zero, not rounding residue
    return np.where((s == 0.0)[..., None], 0.0, xi)


def plane_error_arrays(n_i, d_i, n_j, d_j):
    xi = _sphere_log_scaled(n_i, n_j)
    B = tangent_basis(n_i)
    tang = np.einsum("...ik,...i->...k", B, xi)
    return np.concatenate([tang, (d_i - d_j)[..., None]], axis=-1)


def _sphere_exp(n, u):
    theta = np.linalg.norm(u, axis=-1)
    small = theta < 1e-12
    safe = np.where(small, 1.0, theta)
    out = np.cos(theta)[..., None] * n + (np.sin(theta) / safe)[..., None] * u
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


def plane_retract_arrays(n, d, delta):
    """Chart inverse of plane_error: error(retract(p, delta), p) == delta.

    The normal update is solved by a short fixed-point refinement because the
    tangent basis is anchored at the moved normal.
    """
    delta = np.asarray(delta, dtype=float)
    B0 = tangent_basis(n)
    u = np.einsum("...ik,...k->...i", B0, delta[..., :2])
    for _ in range(3):
        n2 = _sphere_exp(n, u)
        err = np.einsum(
            "...ik,...i->...k", tangent_basis(n2), _sphere_log_scaled(n2, n)
        )
        miss = delta[..., :2] - err
        if np.max(np.abs(miss)) < 1e-14:
            break
        u = u + np.einsum("...ik,...k->...i", B0, miss)
    n2 = _sphere_exp(n, u)
    return canonicalize_plane_arrays(n2, d + delta[..., 2])


# ---------------------------------------------------------------------------
# batched line kernels


def _minimal_rotation_to(v):
    """Minimal rotation taking z to unit vector v (geodesic on the sphere)."""
    v = np.asarray(v, dtype=float)
    s = np.hypot(v[..., 0], v[..., 1])
    theta = np.arctan2(s, v[..., 2])
    safe = np.where(s < 1e-15, 1.0, s)
    axis = np.stack([-v[..., 1] / safe, v[..., 0] / safe, np.zeros_like(s)], axis=-1)
    return so3_exp(axis * theta[..., None])


def canonicalize_line_arrays(R, ab):
    """Unique gauge: leading-positive direction, minimal rotation, recomputed (a, b)."""
    R = np.asarray(R, dtype=float)
    ab = np.asarray(ab, dtype=float)
    v = R[..., :, 2]
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    closest = np.einsum(
        "...ij,...j->...i", R, np.concatenate([ab, np.zeros_like(ab[..., :1])], axis=-1)
    )
    v = v * _leading_sign(v)[..., None]
    closest = closest - np.einsum("...i,...i->...", closest, v)[..., None] * v
    R2 = _minimal_rotation_to(v)
    ab2 = np.einsum("...ji,...j->...i", R2, closest)[..., :2]
    return R2, ab2


def line_transform_arrays(R, t, R_l, ab):
    """Map the line's point set through y = R x + t, canonical output."""
    R2 = R @ R_l
    shift = np.einsum("...ji,...j->...i", R2, t)[..., :2]
    return canonicalize_line_arrays(R2, ab + shift)


def line_error_arrays(R_i, ab_i, R_j, ab_j):
    w = so3_log(np.swapaxes(R_i, -1, -2) @ R_j)
    return np.concatenate([w[..., :2], ab_i - ab_j], axis=-1)


def line_retract_arrays(R, ab, delta):
    """Chart inverse of line_error: error(retract(l, delta), l) == delta.

    Solves for the canonical rotation whose log against R matches the first
    two delta components; (a, b) are set directly in the solved frame.
    """
    R = np.asarray(R, dtype=float)
    ab = np.asarray(ab, dtype=float)
    delta = np.asarray(delta, dtype=float)
    w = np.concatenate([-delta[..., :2], np.zeros_like(delta[..., :1])], axis=-1)
    zeros_ab = np.zeros_like(ab)
    R2 = R
    for _ in range(4):
        R2, _ = canonicalize_line_arrays(R @ so3_exp(w), zeros_ab)
        err = so3_log(np.swapaxes(R2, -1, -2) @ R)[..., :2]
        miss = delta[..., :2] - err
        if np.max(np.abs(miss)) < 1e-14:
            break
        w = w - np.concatenate([miss, np.zeros_like(miss[..., :1])], axis=-1)
    return R2, ab + delta[..., 2:]


# ---------------------------------------------------------------------------
# single-landmark API


def canonicalize_plane(p: PlaneLandmark) -> PlaneLandmark:
    n, d = canonicalize_plane_arrays(p.n, p.d)
    return PlaneLandmark(n, float(d))


def canonicalize_line(l: LineLandmark) -> LineLandmark:
    R, ab = canonicalize_line_arrays(l.R, np.array([l.a, l.b]))
    return LineLandmark(R, float(ab[0]), float(ab[1]))


def plane_transform(T: Pose3, p: PlaneLandmark) -> PlaneLandmark:
    n, d = plane_transform_arrays(T.R, T.t, p.n, p.d)
    return PlaneLandmark(n, float(d))


def plane_error(p_i: PlaneLandmark, p_j: PlaneLandmark):
    return plane_error_arrays(p_i.n, np.asarray(p_i.d), p_j.n, np.asarray(p_j.d))


def plane_retract(p: PlaneLandmark, delta) -> PlaneLandmark:
    n, d = plane_retract_arrays(p.n, np.asarray(p.d), delta)
    return PlaneLandmark(n, float(d))


def line_transform(T: Pose3, l: LineLandmark) -> LineLandmark:
    R, ab = line_transform_arrays(T.R, T.t, l.R, np.array([l.a, l.b]))
    return LineLandmark(R, float(ab[0]), float(ab[1]))


def line_error(l_i: LineLandmark, l_j: LineLandmark):
    return line_error_arrays(
        l_i.R, np.array([l_i.a, l_i.b]), l_j.R, np.array([l_j.a, l_j.b])
    )


def line_retract(l: LineLandmark, delta) -> LineLandmark:
    R, ab = line_retract_arrays(l.R, np.array([l.a, l.b]), delta)
    return LineLandmark(R, float(ab[0]), float(ab[1]))


def line_from_point_direction(point, direction) -> LineLandmark:
    """Canonical line through ``point`` with the given direction."""
    v = np.asarray(direction, dtype=float)
    v = v / np.linalg.norm(v)
    p = np.asarray(point, dtype=float)
    closest = p - (p @ v) * v
    R = _minimal_rotation_to(v * _leading_sign(v))
    ab = (R.T @ closest)[:2]
    line = LineLandmark(R, float(ab[0]), float(ab[1]))
    return canonicalize_line(line)


def plane_from_point_normal(point, normal) -> PlaneLandmark:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    d = -float(np.asarray(point, dtype=float) @ n)
    return canonicalize_plane(PlaneLandmark(n, d))
