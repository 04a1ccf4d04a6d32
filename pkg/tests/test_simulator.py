import numpy as np
import pytest

from lvio.geometry import Pose3, so3_exp, so3_log
from lvio.imu import DEFAULT_GRAVITY, ImuBias, ImuNoiseParams, preintegrate_sequence
from lvio.simulator import (
    NoiseSpec,
    SensorRates,
    TrajectorySpec,
    analytic_state,
    build_scenario,
    make_corridor_world,
    make_open_world,
    synthesize_imu,
)


def test_analytic_state_zero_twist():
    spec = TrajectorySpec(segments=((np.zeros(6), 5.0),))
    for t in [0.0, 2.5, 5.0]:
        x = analytic_state(spec, t)
        assert np.allclose(x.R, np.eye(3)) and np.allclose(x.p, 0.0)
        assert np.allclose(x.v, 0.0)


def test_analytic_state_pure_translation():
    spec = TrajectorySpec(segments=(([1.0, 0, 0, 0, 0, 0], 2.0),))
    x = analytic_state(spec, 2.0)
    assert np.allclose(x.p, [2.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(x.v, [1.0, 0.0, 0.0])


def test_analytic_state_rotation_heading():
    spec = TrajectorySpec(segments=(([0, 0, 0, 0, 0, 0.5], np.pi),))
    x = analytic_state(spec, np.pi)
    assert np.allclose(so3_log(x.R), [0.0, 0.0, np.pi / 2], atol=1e-12)


def test_analytic_state_out_of_range():
    spec = TrajectorySpec(segments=((np.zeros(6), 1.0),))
    with pytest.raises(ValueError):
        analytic_state(spec, 1.5)


def test_segment_velocity_continuity_enforced():
    with pytest.raises(ValueError):
        TrajectorySpec(
            segments=(([1.0, 0, 0, 0, 0, 0], 1.0), ([0.0, 0, 0, 0, 0, 0], 1.0))
        )


def test_multi_segment_pose_chains():
    spec = TrajectorySpec(
        segments=(
            ([0.5, 0, 0, 0, 0, 0.0], 2.0),
            ([0.5, 0, 0, 0, 0, 0.3], 3.0),
        )
    )
    x = analytic_state(spec, 2.0)
    assert np.allclose(x.p, [1.0, 0, 0], atol=1e-12)
    x2 = analytic_state(spec, 5.0)
    assert x2.t == pytest.approx(5.0)


def test_stationary_imu_values():
    spec = TrajectorySpec(segments=((np.zeros(6), 1.0),))
    times, gyro, accel = synthesize_imu(spec)
    assert np.allclose(gyro, 0.0)
    assert np.allclose(accel, -DEFAULT_GRAVITY)


def test_imu_stream_matches_analytic_through_preintegration():
    spec = TrajectorySpec(
        segments=(([0.5, 0.1, 0.0, 0.05, -0.1, 0.3], 1.2),)
    )
    times, gyro, accel = synthesize_imu(spec)
    pre = preintegrate_sequence(times, gyro, accel, 0.0, 1.0, ImuBias.zero())
    from lvio.imu import predict_state

    got = predict_state(analytic_state(spec, 0.0), pre)
    want = analytic_state(spec, 1.0)
    assert np.linalg.norm(got.p - want.p) < 1e-4
    assert np.linalg.norm(so3_log(got.R.T @ want.R)) < 1e-5


def test_configured_bias_is_mean_of_offset():
    bias_g = np.array([0.01, -0.02, 0.005])
    bias_a = np.array([0.1, 0.05, -0.08])
    spec = TrajectorySpec(
        segments=((np.zeros(6), 2.0),),
        noise=NoiseSpec(imu=ImuNoiseParams(1e-3, 1e-2, 0.0, 0.0),
                        gyro_bias=bias_g, accel_bias=bias_a),
    )
    times, gyro, accel = synthesize_imu(spec, seed=3)
    assert np.allclose(gyro.mean(axis=0), bias_g, atol=3e-3)
    assert np.allclose((accel + DEFAULT_GRAVITY).mean(axis=0), bias_a, atol=3e-2)


def test_noise_is_reproducible_by_seed():
    spec = TrajectorySpec(
        segments=((np.zeros(6), 1.0),),
        noise=NoiseSpec(imu=ImuNoiseParams(1e-3, 1e-2, 0.0, 0.0)),
    )
    a = synthesize_imu(spec, seed=7)
    b = synthesize_imu(spec, seed=7)
    c = synthesize_imu(spec, seed=8)
    assert np.array_equal(a[1], b[1]) and np.array_equal(a[2], b[2])
    assert not np.array_equal(a[1], c[1])


def test_corridor_world_is_plane_degenerate():
    world = make_corridor_world()
    normals = np.stack([p.n for p in world.planes])
    assert np.linalg.matrix_rank(normals, tol=1e-9) == 2
    # junction lines run along the unconstrained axis
    for lf in world.lines:
        assert abs(lf.line.direction @ np.array([1.0, 0, 0])) > 0.99


def test_open_world_fully_constrains():
    world = make_open_world()
    normals = np.stack([p.n for p in world.planes])
    assert np.linalg.matrix_rank(normals, tol=1e-9) == 3


def test_build_scenarios():
    for name in ["open", "corridor", "visual-dropout", "stationary"]:
        world, spec = build_scenario(name)
        assert spec.duration > 0
    with pytest.raises(ValueError):
        build_scenario("nope")
