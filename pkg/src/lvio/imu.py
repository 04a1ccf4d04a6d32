"""IMU preintegration between keyframes and forward state propagation.

Follows the standard on-manifold preintegration: relative rotation,
velocity, and position deltas accumulated in the frame of the first
keyframe, with gravity injected only at prediction/residual time, plus
first-order bias-correction Jacobians and a 9x9 covariance over
[rotation, velocity, position].

State velocities are stored in the base frame; the residual converts to
world internally.  Sample streams are integrated with trapezoidal
averaging of consecutive samples, which keeps the residual at noiseless
ground truth below 1e-6 at 100 Hz.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose3, hat, so3_exp, so3_jr, so3_log

DEFAULT_GRAVITY = np.array([0.0, 0.0, -9.81])


@dataclass(frozen=True)
class ImuSample:
    t: float
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))


@dataclass(frozen=True)
class ImuBias:
    gyro: np.ndarray
    accel: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gyro", np.asarray(self.gyro, dtype=float).reshape(3))
        object.__setattr__(self, "accel", np.asarray(self.accel, dtype=float).reshape(3))

    @staticmethod
    def zero() -> "ImuBias":
        return ImuBias(np.zeros(3), np.zeros(3))


@dataclass(frozen=True)
class ImuNoiseParams:
    """Continuous-time noise densities (per sqrt(Hz)) and bias random walks."""

    gyro_noise: float = 1e-3
    accel_noise: float = 1e-2
    gyro_bias_walk: float = 1e-5
    accel_bias_walk: float = 1e-5


@dataclass(frozen=True)
class State:
    """Keyframe state: orientation, position, base-frame velocity, biases."""

    R: np.ndarray
    p: np.ndarray
    v: np.ndarray
    bias: ImuBias
    t: float

    def __post_init__(self):
        object.__setattr__(self, "R", np.asarray(self.R, dtype=float).reshape(3, 3))
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))

    @property
    def pose(self) -> Pose3:
        return Pose3(self.R, self.p)

    @property
    def velocity_world(self):
        return self.R @ self.v


STATE_DIM = 15  # chart: [dtheta, dp, dv, dbg, dba]


def state_retract(x: State, delta) -> State:
    d = np.asarray(delta, dtype=float)
    return State(
        R=x.R @ so3_exp(d[0:3]),
        p=x.p + d[3:6],
        v=x.v + d[6:9],
        bias=ImuBias(x.bias.gyro + d[9:12], x.bias.accel + d[12:15]),
        t=x.t,
    )


def state_local(x: State, ref: State):
    """Chart coordinates of x around ref; inverse of state_retract."""
    return np.concatenate(
        [
            so3_log(ref.R.T @ x.R),
            x.p - ref.p,
            x.v - ref.v,
            x.bias.gyro - ref.bias.gyro,
            x.bias.accel - ref.bias.accel,
        ]
    )


class PreintegratedImu:
    """Accumulated IMU deltas between two keyframes (single-writer)."""

    def __init__(self, bias: ImuBias | None = None, noise: ImuNoiseParams | None = None):
        self.bias_lin = bias if bias is not None else ImuBias.zero()
        self.noise = noise if noise is not None else ImuNoiseParams()
        self.dR = np.eye(3)
        self.dv = np.zeros(3)
        self.dp = np.zeros(3)
        self.dt_total = 0.0
        self.P = np.zeros((9, 9))  # cov of [dtheta, dv, dp]
        self.J_r_bg = np.zeros((3, 3))
        self.J_v_bg = np.zeros((3, 3))
        self.J_v_ba = np.zeros((3, 3))
        self.J_p_bg = np.zeros((3, 3))
        self.J_p_ba = np.zeros((3, 3))

    def copy(self) -> "PreintegratedImu":
        return copy.deepcopy(self)

    def push(self, gyro, accel, dt: float) -> None:
        """Integrate one step of bias-corrected gyro/accel held over dt."""
        if dt <= 0:
            raise ValueError("IMU integration step must have dt > 0")
        w = np.asarray(gyro, dtype=float) - self.bias_lin.gyro
        a = np.asarray(accel, dtype=float) - self.bias_lin.accel
        theta = w * dt
        dRk = so3_exp(theta)
        Jr = so3_jr(theta)
        A_hat = hat(a)

        # covariance propagation (first order)
        A = np.zeros((9, 9))
        A[0:3, 0:3] = dRk.T
        A[3:6, 0:3] = -self.dR @ A_hat * dt
        A[3:6, 3:6] = np.eye(3)
        A[6:9, 0:3] = -0.5 * self.dR @ A_hat * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        A[6:9, 6:9] = np.eye(3)
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = self.dR * dt
        B[6:9, 3:6] = 0.5 * self.dR * dt * dt
        Qd = np.zeros((6, 6))
        Qd[0:3, 0:3] = (self.noise.gyro_noise ** 2 / dt) * np.eye(3)
        Qd[3:6, 3:6] = (self.noise.accel_noise ** 2 / dt) * np.eye(3)
        self.P = A @ self.P @ A.T + B @ Qd @ B.T

        # bias jacobians; position first so it sees the old velocity terms
        self.J_p_ba = self.J_p_ba + self.J_v_ba * dt - 0.5 * self.dR * dt * dt
        self.J_p_bg = self.J_p_bg + self.J_v_bg * dt - 0.5 * self.dR @ A_hat @ self.J_r_bg * dt * dt
        self.J_v_ba = self.J_v_ba - self.dR * dt
        self.J_v_bg = self.J_v_bg - self.dR @ A_hat @ self.J_r_bg * dt
        self.J_r_bg = dRk.T @ self.J_r_bg - Jr * dt

        # delta updates, position before velocity before rotation; the
        # midpoint rotation keeps the quadrature second order, which the
        # residual-at-truth tolerance needs at 100 Hz
        dR_mid = self.dR @ so3_exp(0.5 * theta)
        acc = dR_mid @ a
        self.dp = self.dp + self.dv * dt + 0.5 * acc * dt * dt
        self.dv = self.dv + acc * dt
        self.dR = self.dR @ dRk
        self.dt_total += dt

    def push_trapezoid(self, gyro, accel_start, accel_end, dt: float) -> None:
        """One step with endpoint accelerometer values, each rotated by its
        own delta rotation (true trapezoid of the rotated integrand).

        The gravity component of the specific force then integrates exactly
        on any smooth trajectory, which is what keeps the residual at
        noiseless ground truth at the 1e-6 level at 100 Hz.
        """
        if dt <= 0:
            raise ValueError("IMU integration step must have dt > 0")
        w = np.asarray(gyro, dtype=float) - self.bias_lin.gyro
        a0 = np.asarray(accel_start, dtype=float) - self.bias_lin.accel
        a1 = np.asarray(accel_end, dtype=float) - self.bias_lin.accel
        theta = w * dt
        dRk = so3_exp(theta)
        Jr = so3_jr(theta)
        a_mid = 0.5 * (a0 + a1)
        A_hat = hat(a_mid)

        A = np.zeros((9, 9))
        A[0:3, 0:3] = dRk.T
        A[3:6, 0:3] = -self.dR @ A_hat * dt
        A[3:6, 3:6] = np.eye(3)
        A[6:9, 0:3] = -0.5 * self.dR @ A_hat * dt * dt
        A[6:9, 3:6] = np.eye(3) * dt
        A[6:9, 6:9] = np.eye(3)
        B = np.zeros((9, 6))
        B[0:3, 0:3] = Jr * dt
        B[3:6, 3:6] = self.dR * dt
        B[6:9, 3:6] = 0.5 * self.dR * dt * dt
        Qd = np.zeros((6, 6))
        Qd[0:3, 0:3] = (self.noise.gyro_noise ** 2 / dt) * np.eye(3)
        Qd[3:6, 3:6] = (self.noise.accel_noise ** 2 / dt) * np.eye(3)
        self.P = A @ self.P @ A.T + B @ Qd @ B.T

        self.J_p_ba = self.J_p_ba + self.J_v_ba * dt - 0.5 * self.dR * dt * dt
        self.J_p_bg = self.J_p_bg + self.J_v_bg * dt - 0.5 * self.dR @ A_hat @ self.J_r_bg * dt * dt
        self.J_v_ba = self.J_v_ba - self.dR * dt
        self.J_v_bg = self.J_v_bg - self.dR @ A_hat @ self.J_r_bg * dt
        self.J_r_bg = dRk.T @ self.J_r_bg - Jr * dt

        h0 = self.dR @ a0
        h1 = self.dR @ dRk @ a1
        self.dp = self.dp + self.dv * dt + (h0 / 3.0 + h1 / 6.0) * dt * dt
        self.dv = self.dv + 0.5 * (h0 + h1) * dt
        self.dR = self.dR @ dRk
        self.dt_total += dt

    def corrected_deltas(self, bias: ImuBias):
        """First-order bias-corrected (dR, dv, dp) at a new bias estimate."""
        dbg = bias.gyro - self.bias_lin.gyro
        dba = bias.accel - self.bias_lin.accel
        dR = self.dR @ so3_exp(self.J_r_bg @ dbg)
        dv = self.dv + self.J_v_bg @ dbg + self.J_v_ba @ dba
        dp = self.dp + self.J_p_bg @ dbg + self.J_p_ba @ dba
        return dR, dv, dp

    def residual_cov(self):
        """15x15 covariance for [rot, vel, pos, d_ba, d_bg] residual."""
        C = np.zeros((15, 15))
        C[0:9, 0:9] = 0.5 * (self.P + self.P.T)
        dt = max(self.dt_total, 1e-9)
        C[9:12, 9:12] = (self.noise.accel_bias_walk ** 2 * dt) * np.eye(3)
        C[12:15, 12:15] = (self.noise.gyro_bias_walk ** 2 * dt) * np.eye(3)
        return C


def integrate_sample(pre: PreintegratedImu, sample: ImuSample, dt: float) -> PreintegratedImu:
    """Functional wrapper around PreintegratedImu.push."""
    out = pre.copy()
    out.push(sample.gyro, sample.accel, dt)
    return out


def preintegrate_sequence(times, gyros, accels, t0: float, t1: float, bias: ImuBias,
                          noise: ImuNoiseParams | None = None) -> PreintegratedImu:
    """Preintegrate a sampled stream over [t0, t1] with trapezoidal averaging.

    Sample values at the interval boundaries and between samples are linear
    interpolations of the stream; values outside the stream span are held.
    """
    if t1 <= t0:
        raise ValueError("preintegration interval must have t1 > t0")
    times = np.asarray(times, dtype=float)
    gyros = np.asarray(gyros, dtype=float)
    accels = np.asarray(accels, dtype=float)
    inside = (times > t0) & (times < t1)
    nodes = np.concatenate([[t0], times[inside], [t1]])
    g_n = np.stack([np.interp(nodes, times, gyros[:, k]) for k in range(3)], axis=1)
    a_n = np.stack([np.interp(nodes, times, accels[:, k]) for k in range(3)], axis=1)
    pre = PreintegratedImu(bias=bias, noise=noise)
    for k in range(len(nodes) - 1):
        dt = nodes[k + 1] - nodes[k]
        if dt <= 0:
            continue
        pre.push_trapezoid(0.5 * (g_n[k] + g_n[k + 1]), a_n[k], a_n[k + 1], dt)
    return pre


def predict_state(x_i: State, pre: PreintegratedImu, gravity=DEFAULT_GRAVITY) -> State:
    """Propagate x_i through the preintegrated deltas (gravity added here)."""
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt_total
    dR, dv, dp = pre.corrected_deltas(x_i.bias)
    v_i_w = x_i.R @ x_i.v
    R_j = x_i.R @ dR
    p_j = x_i.p + v_i_w * dt + 0.5 * g * dt * dt + x_i.R @ dp
    v_j_w = v_i_w + g * dt + x_i.R @ dv
    return State(R=R_j, p=p_j, v=R_j.T @ v_j_w, bias=x_i.bias, t=x_i.t + dt)


def imu_residual(x_i: State, x_j: State, pre: PreintegratedImu, gravity=DEFAULT_GRAVITY):
    """15-vector [rot, vel, pos, accel-bias, gyro-bias] residual."""
    if abs((x_j.t - x_i.t) - pre.dt_total) > 1e-6:
        raise ValueError(
            f"keyframe interval {x_j.t - x_i.t:.6f}s does not match "
            f"preintegrated dt {pre.dt_total:.6f}s"
        )
    g = np.asarray(gravity, dtype=float)
    dt = pre.dt_total
    dR, dv, dp = pre.corrected_deltas(x_i.bias)
    v_i_w = x_i.R @ x_i.v
    v_j_w = x_j.R @ x_j.v
    r_rot = so3_log(dR.T @ x_i.R.T @ x_j.R)
    r_vel = x_i.R.T @ (v_j_w - v_i_w - g * dt) - dv
    r_pos = x_i.R.T @ (x_j.p - x_i.p - v_i_w * dt - 0.5 * g * dt * dt) - dp
    r_ba = x_j.bias.accel - x_i.bias.accel
    r_bg = x_j.bias.gyro - x_i.bias.gyro
    return np.concatenate([r_rot, r_vel, r_pos, r_ba, r_bg])


def propagate_states(x0: State, times, gyros, accels, gravity=DEFAULT_GRAVITY):
    """Forward-propagate x0 through IMU samples at the sample cadence.

    Returns the list of states at each sample time after x0.t (one output
    per input sample, the IMU-rate odometry stream).  With no samples past
    x0.t the list contains only x0.
    """
    times = np.asarray(times, dtype=float)
    gyros = np.asarray(gyros, dtype=float)
    accels = np.asarray(accels, dtype=float)
    g = np.asarray(gravity, dtype=float)
    out = [x0]
    sel = times > x0.t
    if not np.any(sel):
        return out
    nodes = np.concatenate([[x0.t], times[sel]])
    g_n = np.stack([np.interp(nodes, times, gyros[:, k]) for k in range(3)], axis=1)
    a_n = np.stack([np.interp(nodes, times, accels[:, k]) for k in range(3)], axis=1)
    R, p = x0.R.copy(), x0.p.copy()
    v_w = x0.R @ x0.v
    bg, ba = x0.bias.gyro, x0.bias.accel
    for k in range(len(nodes) - 1):
        dt = nodes[k + 1] - nodes[k]
        if dt <= 0:
            continue
        w = 0.5 * (g_n[k] + g_n[k + 1]) - bg
        R_next = R @ so3_exp(w * dt)
        h0 = R @ (a_n[k] - ba) + g
        h1 = R_next @ (a_n[k + 1] - ba) + g
        p = p + v_w * dt + (h0 / 3.0 + h1 / 6.0) * dt * dt
        v_w = v_w + 0.5 * (h0 + h1) * dt
        R = R_next
        out.append(State(R=R, p=p, v=R.T @ v_w, bias=x0.bias, t=float(nodes[k + 1])))
    return out
