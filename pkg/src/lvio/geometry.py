"""Rotation and rigid-transform algebra on SO(3)/SE(3).

All rotation helpers broadcast over leading batch dimensions: a ``(3,)``
tangent vector gives a ``(3, 3)`` matrix, an ``(N, 3)`` stack gives
``(N, 3, 3)``, and so on.  Angles are radians, translations meters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_EPS_ANGLE = 1e-8  # below this, Rodrigues terms switch to series expansions


def hat(v):
    """Skew-symmetric matrix of a 3-vector (batched)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    x, y, z = v[..., 0], v[..., 1], v[..., 2]
    out[..., 0, 1] = -z
    out[..., 0, 2] = y
    out[..., 1, 0] = z
    out[..., 1, 2] = -x
    out[..., 2, 0] = -y
    out[..., 2, 1] = x
    return out


def vee(W):
    W = np.asarray(W, dtype=float)
    return np.stack([W[..., 2, 1], W[..., 0, 2], W[..., 1, 0]], axis=-1)


def _sinc_factors(theta):
    """Return sin(t)/t and (1-cos(t))/t^2 with series fallbacks."""
    t2 = theta * theta
    small = theta < _EPS_ANGLE
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - t2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    return a, b


def so3_exp(phi):
    """Exponential map so(3) -> SO(3) via the Rodrigues formula."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    a, b = _sinc_factors(theta)
    W = hat(phi)
    W2 = W @ W
    return (
        np.broadcast_to(np.eye(3), W.shape).copy()
        + a[..., None, None] * W
        + b[..., None, None] * W2
    )


def so3_log(R):
    """Logarithm map SO(3) -> so(3), angle in [0, pi].

    Trace-based in the generic range, with a series branch for small angles
    and a symmetric-part branch near pi where the skew part degenerates.
    """
    R = np.asarray(R, dtype=float)
    w = 0.5 * np.stack(
        [R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]],
        axis=-1,
    )  # sin(theta) * axis
    s = np.clip(np.linalg.norm(w, axis=-1), 0.0, 1.0)
    c = np.clip(0.5 * (R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2] - 1.0), -1.0, 1.0)
    theta = np.arctan2(s, c)

    # generic / small-angle branch: phi = theta/sin(theta) * w
    small = s < _EPS_ANGLE
    factor = np.where(small, 1.0 + theta * theta / 6.0, theta / np.where(small, 1.0, s))
    phi_generic = factor[..., None] * w

    # near-pi branch: axis from the symmetric part R = cI + sK + (1-c) aa^T
    near_pi = c < -0.99
    one_minus_c = np.where(near_pi, 1.0 - c, 1.0)
    S = 0.5 * (R + np.swapaxes(R, -1, -2))
    aa = (S - c[..., None, None] * np.eye(3)) / one_minus_c[..., None, None]
    diag = np.stack([aa[..., 0, 0], aa[..., 1, 1], aa[..., 2, 2]], axis=-1)
    k = np.argmax(diag, axis=-1)
    ak = np.sqrt(np.clip(np.take_along_axis(diag, k[..., None], axis=-1), 0.0, None))
    axis = np.take_along_axis(aa, k[..., None, None], axis=-1)[..., 0] / np.where(
        ak > 0.0, ak, 1.0
    )
    # sign: align with the skew part if usable, else largest component positive
    dots = np.sum(axis * w, axis=-1)
    lead = np.take_along_axis(axis, np.argmax(np.abs(axis), axis=-1)[..., None], axis=-1)[..., 0]
    sign = np.where(s > 1e-12, np.sign(np.where(dots == 0.0, 1.0, dots)), np.sign(np.where(lead == 0.0, 1.0, lead)))
    theta_pi = np.pi - np.arcsin(s)
    phi_pi = (sign * theta_pi)[..., None] * axis

    return np.where(near_pi[..., None], phi_pi, phi_generic)


def so3_jr(phi):
    """Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr d)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    t2 = theta * theta
    small = theta < _EPS_ANGLE
    safe = np.where(small, 1.0, theta)
    b = np.where(small, 0.5 - t2 / 24.0, (1.0 - np.cos(safe)) / (safe * safe))
    cc = np.where(small, 1.0 / 6.0 - t2 / 120.0, (safe - np.sin(safe)) / (safe ** 3))
    W = hat(phi)
    return (
        np.broadcast_to(np.eye(3), W.shape).copy()
        - b[..., None, None] * W
        + cc[..., None, None] * (W @ W)
    )


def so3_jr_inv(phi):
    """Inverse of the right Jacobian."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi, axis=-1)
    t2 = theta * theta
    small = theta < _EPS_ANGLE
    safe = np.where(small, 1.0, theta)
    d = np.where(
        small,
        1.0 / 12.0 + t2 / 720.0,
        1.0 / (safe * safe) - (1.0 + np.cos(safe)) / (2.0 * safe * np.sin(safe)),
    )
    W = hat(phi)
    return (
        np.broadcast_to(np.eye(3), W.shape).copy()
        + 0.5 * W
        + d[..., None, None] * (W @ W)
    )


def so3_jl(phi):
    """Left Jacobian, Jl(phi) = Jr(-phi)."""
    return so3_jr(-np.asarray(phi, dtype=float))


def so3_jl_inv(phi):
    return so3_jr_inv(-np.asarray(phi, dtype=float))


def rot_to_quat(R):
    """Rotation matrix to quaternion (x, y, z, w), w >= 0.  Batched."""
    R = np.asarray(R, dtype=float)
    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    q = np.empty(R.shape[:-2] + (4,))
    # four Shepperd cases, chosen per element for numerical safety
    c0 = 1.0 + tr
    c1 = 1.0 + m00 - m11 - m22
    c2 = 1.0 - m00 + m11 - m22
    c3 = 1.0 - m00 - m11 + m22
    cases = np.stack([c0, c1, c2, c3], axis=-1)
    pick = np.argmax(cases, axis=-1)
    t = np.sqrt(np.clip(np.take_along_axis(cases, pick[..., None], axis=-1)[..., 0], 0.0, None))
    inv = 0.5 / np.where(t > 0.0, t, 1.0)

    qw0, qx0 = 0.5 * t, (R[..., 2, 1] - R[..., 1, 2]) * inv
    qy0, qz0 = (R[..., 0, 2] - R[..., 2, 0]) * inv, (R[..., 1, 0] - R[..., 0, 1]) * inv

    qw1, qx1 = (R[..., 2, 1] - R[..., 1, 2]) * inv, 0.5 * t
    qy1, qz1 = (R[..., 0, 1] + R[..., 1, 0]) * inv, (R[..., 0, 2] + R[..., 2, 0]) * inv

    qw2, qx2 = (R[..., 0, 2] - R[..., 2, 0]) * inv, (R[..., 0, 1] + R[..., 1, 0]) * inv
    qy2, qz2 = 0.5 * t, (R[..., 1, 2] + R[..., 2, 1]) * inv

    qw3, qx3 = (R[..., 1, 0] - R[..., 0, 1]) * inv, (R[..., 0, 2] + R[..., 2, 0]) * inv
    qy3, qz3 = (R[..., 1, 2] + R[..., 2, 1]) * inv, 0.5 * t

    for i, comps in enumerate(
        [(qx0, qy0, qz0, qw0), (qx1, qy1, qz1, qw1), (qx2, qy2, qz2, qw2), (qx3, qy3, qz3, qw3)]
    ):
        mask = pick == i
        for j in range(4):
            q[..., j] = np.where(mask, comps[j], q[..., j]) if i else np.where(mask, comps[j], 0.0)
    flip = q[..., 3] < 0.0
    return np.where(flip[..., None], -q, q)


def quat_to_rot(q):
    """Quaternion (x, y, z, w) to rotation matrix.  Batched, normalizes input."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - z * w)
    R[..., 0, 2] = 2 * (x * z + y * w)
    R[..., 1, 0] = 2 * (x * y + z * w)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - x * w)
    R[..., 2, 0] = 2 * (x * z - y * w)
    R[..., 2, 1] = 2 * (y * z + x * w)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True)
class Pose3:
    """Rigid transform: rotation ``R`` (3x3) and translation ``t`` (meters).

    Acts on points as ``R @ x + t``.  Immutable; all operations return new
    instances, so instances are safe to share across threads.
    """

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=float).reshape(3))

    @staticmethod
    def identity() -> "Pose3":
        return Pose3(np.eye(3), np.zeros(3))

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(self.R @ other.R, self.R @ other.t + self.t)

    def __matmul__(self, other: "Pose3") -> "Pose3":
        return self.compose(other)

    def inverse(self) -> "Pose3":
        Rt = self.R.T
        return Pose3(Rt, -Rt @ self.t)

    def act(self, x):
        """Apply to a point or an (..., 3) stack of points."""
        x = np.asarray(x, dtype=float)
        return x @ self.R.T + self.t

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.R
        M[:3, 3] = self.t
        return M


def pose_compose(a: Pose3, b: Pose3) -> Pose3:
    return a.compose(b)


def pose_act(T: Pose3, x):
    return T.act(x)


def se3_exp(xi) -> Pose3:
    """SE(3) exponential of a twist ``[v, w]`` (linear first, angular second)."""
    xi = np.asarray(xi, dtype=float)
    v, w = xi[:3], xi[3:]
    R = so3_exp(w)
    return Pose3(R, so3_jl(w) @ v)


def se3_log(T: Pose3):
    """Twist ``[v, w]`` with se3_exp(se3_log(T)) == T."""
    w = so3_log(T.R)
    v = so3_jl_inv(w) @ T.t
    return np.concatenate([v, w])


def pose_interpolate(T0: Pose3, t0: float, T1: Pose3, t1: float, t: float) -> Pose3:
    """Constant-twist interpolation T0 * Exp(s * Log(T0^-1 T1)).

    ``s`` outside [0, 1] extrapolates.  Raises ValueError on t1 == t0.
    """
    if t1 == t0:
        raise ValueError("degenerate interpolation interval: t0 == t1")
    s = (t - t0) / (t1 - t0)
    xi = se3_log(T0.inverse() @ T1)
    return T0 @ se3_exp(s * xi)


class PosePath:
    """Piecewise constant-twist pose trajectory with query by timestamp.

    Built from a strictly increasing sequence of (timestamp, Pose3) samples.
    Queries between samples interpolate on SE(3); queries outside the span
    extrapolate the first/last segment twist.
    """

    def __init__(self, times, poses):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or len(times) < 1:
            raise ValueError("PosePath needs at least one timestamped pose")
        if np.any(np.diff(times) <= 0):
            raise ValueError("PosePath timestamps must be strictly increasing")
        self.times = times
        self.R = np.stack([p.R for p in poses])
        self.p = np.stack([p.t for p in poses])
        if len(times) > 1:
            dR = np.einsum("nji,njk->nik", self.R[:-1], self.R[1:])
            dt = np.einsum("nji,nj->ni", self.R[:-1], self.p[1:] - self.p[:-1])
            w = so3_log(dR)
            v = np.einsum("nij,nj->ni", so3_jl_inv(w), dt)
            self.seg_xi = np.concatenate([v, w], axis=-1) / np.diff(times)[:, None]
        else:
            self.seg_xi = np.zeros((0, 6))

    @property
    def t_start(self) -> float:
        return float(self.times[0])

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def query(self, t: float) -> Pose3:
        R, p = self.query_many(np.array([t]))
        return Pose3(R[0], p[0])

    def query_many(self, ts):
        """Vectorized query: returns (m,3,3) rotations and (m,3) positions."""
        ts = np.asarray(ts, dtype=float)
        if len(self.times) == 1:
            R = np.broadcast_to(self.R[0], ts.shape + (3, 3)).copy()
            p = np.broadcast_to(self.p[0], ts.shape + (3,)).copy()
            return R, p
        idx = np.clip(np.searchsorted(self.times, ts, side="right") - 1, 0, len(self.times) - 2)
        dt = ts - self.times[idx]
        xi = self.seg_xi[idx] * dt[..., None]
        dR = so3_exp(xi[..., 3:])
        dp = np.einsum("...ij,...j->...i", so3_jl(xi[..., 3:]), xi[..., :3])
        R0 = self.R[idx]
        return R0 @ dR, np.einsum("...ij,...j->...i", R0, dp) + self.p[idx]
