"""Residual functions for every factor kind, numerical Jacobians, and the
dynamic covariance scaling (DCS) robust kernel.

Residuals are plain functions of typed values; the sliding-window smoother
evaluates vectorized equivalents internally and the test suite checks the
two agree.  Plane and line factors are differentiated numerically with the
symmetric difference scheme; their parametrizations make analytic forms
unrewarding.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from .geometry import Pose3
from .imu import State, state_local, state_retract
from .landmarks import (
    LineLandmark,
    PlaneLandmark,
    PointLandmark,
    line_error,
    line_retract,
    line_transform,
    plane_error,
    plane_retract,
    plane_transform,
)

FACTOR_KINDS = (
    "imu",
    "mono_depth",
    "stereo",
    "mono",
    "plane",
    "line",
    "prior",
    "zero_velocity",
    "linear_prior",
)


class CheiralityError(ValueError):
    """Landmark projected behind the camera; the factor must be skipped."""


@dataclass(frozen=True)
class Factor:
    """Graph edge: residual kind, connected variable keys, measurement, noise."""

    kind: str
    keys: tuple
    z: Any
    cov: np.ndarray
    robust: bool = False

    def __post_init__(self):
        if self.kind not in FACTOR_KINDS:
            raise ValueError(f"unknown factor kind '{self.kind}'")
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


@dataclass(frozen=True)
class DcsKernel:
    phi: float = 1.0

    def __post_init__(self):
        if self.phi <= 0:
            raise ValueError("DCS parameter must be positive")

    def weight(self, chi2):
        return dcs_weight(chi2, self.phi)


def dcs_weight(chi2, phi: float):
    """Scaling s in (0, 1] applied to the whitened residual and Jacobian."""
    chi2 = np.asarray(chi2, dtype=float)
    return np.minimum(1.0, 2.0 * phi / (phi + chi2))


def dcs_rho(chi2, phi: float):
    """Robust cost whose IRLS weight is dcs_weight**2.

    Quadratic inside the inlier region, saturating toward 3*phi outside;
    continuously differentiable at the boundary.
    """
    chi2 = np.asarray(chi2, dtype=float)
    return np.where(chi2 <= phi, chi2, 4.0 * phi * chi2 / (phi + chi2) - phi)


# ---------------------------------------------------------------------------
# residuals


def mono_depth_residual(T_i: Pose3, m: PointLandmark, x_tilde):
    """Landmark in the camera frame minus the lidar-depth measurement."""
    return T_i.inverse().act(m.m) - np.asarray(x_tilde, dtype=float)


def project_stereo(X, cam):
    """Pinhole stereo projection (uL, uR, v) of a camera-frame point."""
    x, y, z = X
    if z < 0.01:
        raise CheiralityError(f"point depth {z:.3f} m behind/too close to camera")
    uL = cam.fx * x / z + cam.cx
    uR = cam.fx * (x - cam.baseline) / z + cam.cx
    v = cam.fy * y / z + cam.cy
    return np.array([uL, uR, v])


def stereo_residual(T_i: Pose3, m: PointLandmark, obs, cam):
    """(uL, uR, v) prediction minus observation; T_i maps camera to world."""
    X = T_i.inverse().act(m.m)
    return project_stereo(X, cam) - np.asarray(obs, dtype=float)


def mono_residual(T_i: Pose3, m: PointLandmark, obs, cam):
    """Monocular variant: only the (uL, v) rows."""
    full = stereo_residual(T_i, m, [obs[0], 0.0, obs[1]], cam)
    return full[[0, 2]]


def plane_residual(T_i: Pose3, p_world: PlaneLandmark, p_meas: PlaneLandmark):
    return plane_error(plane_transform(T_i.inverse(), p_world), p_meas)


def line_residual(T_i: Pose3, l_world: LineLandmark, l_meas: LineLandmark):
    return line_error(line_transform(T_i.inverse(), l_world), l_meas)


def zero_velocity_residual(x: State):
    return x.v.copy()


def prior_residual(x: State, prior: State):
    """Manifold difference from the prior, in state chart coordinates."""
    return state_local(x, prior)


# ---------------------------------------------------------------------------
# numerical differentiation


@dataclass(frozen=True)
class VariableSpec:
    """Chart of one optimization variable for numerical differentiation."""

    value: Any
    retract: Callable[[Any, np.ndarray], Any]
    dim: int
    scales: np.ndarray = field(default=None)

    def step_sizes(self, h_base: float):
        s = np.ones(self.dim) if self.scales is None else np.asarray(self.scales, dtype=float)
        return h_base * np.maximum(1.0, np.abs(s))


def var_spec(value) -> VariableSpec:
    """Default chart for the supported variable types."""
    if isinstance(value, State):
        scales = np.concatenate([np.ones(3), np.abs(value.p), np.abs(value.v),
                                 np.ones(6)])
        return VariableSpec(value, state_retract, 15, scales)
    if isinstance(value, PlaneLandmark):
        return VariableSpec(value, plane_retract, 3, np.array([1.0, 1.0, abs(value.d)]))
    if isinstance(value, LineLandmark):
        return VariableSpec(value, line_retract, 4,
                            np.array([1.0, 1.0, abs(value.a), abs(value.b)]))
    if isinstance(value, PointLandmark):
        return VariableSpec(value, lambda p, d: PointLandmark(p.m + d), 3, np.abs(value.m))
    if isinstance(value, Pose3):
        def pose_retract(T, d):
            from .geometry import so3_exp

            return Pose3(T.R @ so3_exp(d[:3]), T.t + d[3:])

        return VariableSpec(value, pose_retract, 6,
                            np.concatenate([np.ones(3), np.abs(value.t)]))
    raise TypeError(f"no default chart for {type(value)}")


def numerical_jacobian(residual_fn: Callable, variables: Sequence[VariableSpec],
                       h_base: float = 1e-6):
    """Symmetric-difference Jacobian blocks of residual_fn, one per variable.

    Differences are taken through each variable's retraction with per
    coordinate steps h = h_base * max(1, |component|).
    """
    values = [v.value for v in variables]
    blocks = []
    for i, spec in enumerate(variables):
        hs = spec.step_sizes(h_base)
        cols = []
        for k in range(spec.dim):
            delta = np.zeros(spec.dim)
            delta[k] = hs[k]
            plus = list(values)
            minus = list(values)
            plus[i] = spec.retract(spec.value, delta)
            minus[i] = spec.retract(spec.value, -delta)
            cols.append((residual_fn(*plus) - residual_fn(*minus)) / (2.0 * hs[k]))
        blocks.append(np.stack(cols, axis=-1))
    return blocks
