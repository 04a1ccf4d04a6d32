import numpy as np
import pytest

from lvio.factors import (
    CheiralityError,
    DcsKernel,
    Factor,
    dcs_rho,
    dcs_weight,
    line_residual,
    mono_depth_residual,
    mono_residual,
    numerical_jacobian,
    plane_residual,
    prior_residual,
    stereo_residual,
    var_spec,
    zero_velocity_residual,
)
from lvio.geometry import Pose3, so3_exp
from lvio.imu import ImuBias, State, state_retract
from lvio.landmarks import (
    PlaneLandmark,
    PointLandmark,
    canonicalize_plane,
    line_from_point_direction,
    line_transform,
    plane_transform,
)


class Cam:
    fx = fy = 100.0
    cx = cy = 0.0
    baseline = 0.1


def random_pose(rng, scale=2.0):
    return Pose3(so3_exp(rng.standard_normal(3) * 0.5), rng.standard_normal(3) * scale)


# --- mono depth ---


def test_mono_depth_zero_at_truth():
    rng = np.random.default_rng(0)
    T = random_pose(rng)
    m = PointLandmark(rng.standard_normal(3) * 3)
    x_tilde = T.inverse().act(m.m)
    assert np.allclose(mono_depth_residual(T, m, x_tilde), 0.0, atol=1e-12)


def test_mono_depth_direct_subtraction():
    r = mono_depth_residual(Pose3.identity(), PointLandmark([1.0, 2.0, 3.0]), [1.0, 2.0, 2.5])
    assert np.allclose(r, [0.0, 0.0, 0.5])


def test_mono_depth_landmark_shift_is_residual_shift():
    rng = np.random.default_rng(1)
    for _ in range(20):
        T = random_pose(rng)
        m = PointLandmark(rng.standard_normal(3))
        x_tilde = rng.standard_normal(3)
        delta = rng.standard_normal(3) * 0.1
        r0 = mono_depth_residual(T, m, x_tilde)
        r1 = mono_depth_residual(T, PointLandmark(m.m + T.R @ delta), x_tilde)
        assert np.allclose(r1 - r0, delta, atol=1e-12)


# --- stereo ---


def test_stereo_closed_form_example():
    m = PointLandmark([0.0, 0.0, 5.0])
    r = stereo_residual(Pose3.identity(), m, [0.0, -2.0, 0.0], Cam)
    assert np.allclose(r, 0.0, atol=1e-12)


def test_stereo_noiseless_synthetic_zero():
    rng = np.random.default_rng(2)
    T = random_pose(rng, scale=0.5)
    m = PointLandmark(T.act([0.3, -0.2, 6.0]))
    from lvio.factors import project_stereo

    obs = project_stereo(T.inverse().act(m.m), Cam)
    assert np.linalg.norm(stereo_residual(T, m, obs, Cam)) < 1e-9


def test_stereo_v_shift_sign():
    m = PointLandmark([0.0, 0.0, 5.0])
    r = stereo_residual(Pose3.identity(), m, [0.0, -2.0, 1.0], Cam)
    assert np.allclose(r, [0.0, 0.0, -1.0])


def test_stereo_behind_camera_raises():
    m = PointLandmark([0.0, 0.0, -1.0])
    with pytest.raises(CheiralityError):
        stereo_residual(Pose3.identity(), m, [0.0, 0.0, 0.0], Cam)


def test_mono_residual_rows():
    m = PointLandmark([1.0, -0.5, 4.0])
    full = stereo_residual(Pose3.identity(), m, [10.0, 0.0, -5.0], Cam)
    two = mono_residual(Pose3.identity(), m, [10.0, -5.0], Cam)
    assert np.allclose(two, full[[0, 2]])


# --- plane / line ---


def test_plane_residual_zero_when_measurement_matches():
    rng = np.random.default_rng(3)
    for _ in range(20):
        T = random_pose(rng)
        p = canonicalize_plane(PlaneLandmark(rng.standard_normal(3), rng.uniform(-5, -1)))
        meas = plane_transform(T.inverse(), p)
        assert np.linalg.norm(plane_residual(T, p, meas)) < 1e-12


def test_plane_residual_translation_along_normal():
    p = canonicalize_plane(PlaneLandmark([0.0, 0.0, 1.0], -3.0))
    T0 = Pose3.identity()
    meas = plane_transform(T0.inverse(), p)
    delta = 0.25
    T1 = Pose3(np.eye(3), delta * p.n)
    r = plane_residual(T1, p, meas)
    assert abs(abs(r[2]) - delta) < 1e-12
    assert np.linalg.norm(r[:2]) < 1e-12


def test_line_residual_zero_when_measurement_matches():
    rng = np.random.default_rng(4)
    for _ in range(20):
        T = random_pose(rng)
        l = line_from_point_direction(rng.standard_normal(3) * 2, rng.standard_normal(3))
        meas = line_transform(T.inverse(), l)
        assert np.linalg.norm(line_residual(T, l, meas)) < 1e-12


def test_line_residual_invariant_to_translation_along_direction():
    l = line_from_point_direction([1.0, 2.0, 0.0], [0.0, 0.0, 1.0])
    T0 = Pose3(np.eye(3), [0.5, -0.3, 0.0])
    meas = line_transform(T0.inverse(), l)
    r0 = line_residual(T0, l, meas)
    T1 = Pose3(np.eye(3), T0.t + np.array([0.0, 0.0, 2.0]))  # slide along the line
    r1 = line_residual(T1, l, meas)
    assert np.allclose(r0, r1, atol=1e-12)


# --- zero velocity / prior ---


def test_zero_velocity_residual():
    x = State(np.eye(3), np.zeros(3), np.zeros(3), ImuBias.zero(), 0.0)
    assert np.allclose(zero_velocity_residual(x), 0.0)
    x2 = State(np.eye(3), np.zeros(3), [0.1, 0.0, 0.0], ImuBias.zero(), 0.0)
    assert np.allclose(zero_velocity_residual(x2), [0.1, 0.0, 0.0])


def test_prior_residual_identity_and_offset():
    prior = State(np.eye(3), np.zeros(3), np.zeros(3), ImuBias.zero(), 0.0)
    assert np.allclose(prior_residual(prior, prior), 0.0)
    x = State(so3_exp([0.0, 0.0, 0.1]), np.zeros(3), np.zeros(3), ImuBias.zero(), 0.0)
    r = prior_residual(x, prior)
    assert np.allclose(r[:3], [0.0, 0.0, 0.1], atol=1e-12)
    assert np.allclose(r[3:], 0.0)


def test_prior_residual_retraction_round_trip():
    rng = np.random.default_rng(5)
    prior = State(so3_exp(rng.standard_normal(3)), rng.standard_normal(3),
                  rng.standard_normal(3), ImuBias.zero(), 0.0)
    delta = rng.standard_normal(15) * 0.2
    x = state_retract(prior, delta)
    assert np.allclose(prior_residual(x, prior), delta, atol=1e-9)


# --- numerical jacobians ---


def fwd_jacobian(residual_fn, variables, h_base):
    """Forward-difference oracle, independent of the symmetric scheme."""
    values = [v.value for v in variables]
    r0 = residual_fn(*values)
    blocks = []
    for i, spec in enumerate(variables):
        hs = spec.step_sizes(h_base)
        cols = []
        for k in range(spec.dim):
            delta = np.zeros(spec.dim)
            delta[k] = hs[k]
            plus = list(values)
            plus[i] = spec.retract(spec.value, delta)
            cols.append((residual_fn(*plus) - r0) / hs[k])
        blocks.append(np.stack(cols, axis=-1))
    return blocks


def rel_err(A, B):
    return np.linalg.norm(A - B) / max(1.0, np.linalg.norm(A))


def test_numerical_jacobian_exact_for_linear_map():
    rng = np.random.default_rng(6)
    A = rng.standard_normal((4, 3))

    def resid(m):
        return A @ m.m

    spec = var_spec(PointLandmark(rng.standard_normal(3)))
    (J,) = numerical_jacobian(resid, [spec])
    assert np.max(np.abs(J - A)) < 1e-10


def test_plane_residual_jacobian_cross_check():
    rng = np.random.default_rng(7)
    for _ in range(30):
        T = random_pose(rng)
        p = canonicalize_plane(PlaneLandmark(rng.standard_normal(3), rng.uniform(-5, -1)))
        meas = plane_transform(T.inverse(), p)

        def resid(pose, lm):
            return plane_residual(pose, lm, meas)

        specs = [var_spec(T), var_spec(p)]
        sym = numerical_jacobian(resid, specs, h_base=1e-6)
        fwd = fwd_jacobian(resid, specs, h_base=1e-7)
        for a, b in zip(sym, fwd):
            assert rel_err(a, b) < 1e-5


def test_line_residual_jacobian_cross_check():
    rng = np.random.default_rng(8)
    for _ in range(30):
        T = random_pose(rng)
        l = line_from_point_direction(rng.standard_normal(3) * 2, rng.standard_normal(3))
        meas = line_transform(T.inverse(), l)

        def resid(pose, lm):
            return line_residual(pose, lm, meas)

        specs = [var_spec(T), var_spec(l)]
        sym = numerical_jacobian(resid, specs, h_base=1e-6)
        fwd = fwd_jacobian(resid, specs, h_base=1e-7)
        for a, b in zip(sym, fwd):
            assert rel_err(a, b) < 1e-5


# --- DCS ---


def test_dcs_weight_values():
    assert dcs_weight(0.0, 1.0) == 1.0
    assert dcs_weight(1.0, 1.0) == 1.0
    assert dcs_weight(3.0, 1.0) == pytest.approx(0.5)


def test_dcs_weight_monotone_and_capped():
    phi = 2.0
    chi = np.linspace(0, 50, 200)
    w = dcs_weight(chi, phi)
    assert np.all(np.diff(w) <= 1e-15)
    assert np.all(w[chi <= phi] == 1.0)
    assert np.all((w > 0) & (w <= 1))


def test_dcs_rho_continuity_and_weight_consistency():
    phi = 1.5
    eps = 1e-8
    assert dcs_rho(phi - eps, phi) == pytest.approx(dcs_rho(phi + eps, phi), abs=1e-6)
    # IRLS weight of rho equals dcs_weight^2: rho'(chi2) = s^2
    chi = np.array([2.0, 5.0, 20.0])
    h = 1e-6
    drho = (dcs_rho(chi + h, phi) - dcs_rho(chi - h, phi)) / (2 * h)
    assert np.allclose(drho, dcs_weight(chi, phi) ** 2, atol=1e-6)


def test_dcs_kernel_validation():
    with pytest.raises(ValueError):
        DcsKernel(0.0)
    assert DcsKernel(2.0).weight(6.0) == pytest.approx(0.5)


def test_factor_kind_validation():
    with pytest.raises(ValueError):
        Factor("bogus", (0,), None, np.eye(3))
