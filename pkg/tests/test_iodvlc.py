from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dvlnav import attmath, iodvlc, simkit
from dvlnav.errors import InsufficientExcitation, SegmentTooShort, StreamGap
from dvlnav.simkit import DvlSeries
from dvlnav.strapdown import ImuSeries

from conftest import DVL_TRUTH, TABLE_2D, TABLE_3D, polynomial_streams, streams, truth

class TestAccumulate:
    def test_constant_force_and_linear_velocity_give_zero(self):
        imu, dvl, _ = polynomial_streams(np.zeros(3))
        s = iodvlc.accumulate(imu, dvl, (100.0, 130.0))
        assert np.max(np.abs(s.beta)) < 1e-10  # roundoff of a ~300 m/s integral
        assert np.max(np.abs(s.gamma)) < 1e-10

    def test_polynomial_oracle(self):
        rate = np.array([0.01, -0.004, 0.006])
        imu, dvl, beta = polynomial_streams(rate)
        s = iodvlc.accumulate(imu, dvl, (100.0, 130.0))
        np.testing.assert_allclose(s.beta, beta, atol=1e-12)
        resid = 0.9998 * s.beta - s.gamma @ DVL_TRUTH.c_d_b.T
        assert np.max(np.abs(resid)) < 1e-12

    def test_series_start_at_zero(self):
        _, _, imu, dvl = streams("3d", seed=1)
        for seg in TABLE_3D["type1"]:
            s = iodvlc.accumulate(imu, dvl, seg)
            np.testing.assert_array_equal(s.beta[0], 0.0)
            np.testing.assert_array_equal(s.gamma[0], 0.0)
            assert s.time[0] >= seg[0] and s.time[-1] <= seg[1]

    def test_constant_accel_bias_cancels(self):
        imu, dvl, _ = polynomial_streams(np.array([0.01, 0.0, 0.0]))
        biased = ImuSeries(imu.time, imu.gyro, imu.accel + 5e-4)
        a = iodvlc.accumulate(imu, dvl, (100.0, 130.0))
        b = iodvlc.accumulate(biased, dvl, (100.0, 130.0))
        np.testing.assert_allclose(a.beta, b.beta, atol=1e-10)

    def test_segment_too_short(self):
        imu, dvl, _ = polynomial_streams(np.zeros(3))
        with pytest.raises(SegmentTooShort):
            iodvlc.accumulate(imu, dvl, (100.0, 105.0))

    def test_gap_in_dvl_stream(self):
        imu, dvl, _ = polynomial_streams(np.zeros(3))
        keep = (dvl.time < 110.0) | (dvl.time > 112.0)
        with pytest.raises(StreamGap):
            iodvlc.accumulate(imu, DvlSeries(dvl.time[keep], dvl.velocity[keep]), (100.0, 130.0))

    def test_stream_not_covering_segment(self):
        imu, dvl, _ = polynomial_streams(np.zeros(3))
        with pytest.raises(StreamGap):
            iodvlc.accumulate(imu, dvl, (100.0, 160.0))


def test_rate_based_beta_violates_relation():
    rate = np.array([0.01, -0.004, 0.006])
    imu, dvl, _ = polynomial_streams(rate)
    s = iodvlc.accumulate(imu, dvl, (100.0, 130.0))
    force_rate = np.gradient(imu.accel, imu.time, axis=0)
    literal = iodvlc.literal_rate_beta(imu.time, force_rate, imu.time[0])
    assert np.max(np.abs(0.9998 * s.beta - s.gamma @ DVL_TRUTH.c_d_b.T)) < 1e-12
    assert np.max(np.abs(0.9998 * literal - s.gamma @ DVL_TRUTH.c_d_b.T)) > 1e-2


class TestScale:
    def test_unit_scale_on_synthetic_data(self):
        imu, dvl, _ = polynomial_streams(np.array([0.01, 0.003, -0.002]), scale=1.0, c_b_d=np.eye(3))
        k, ratios = iodvlc.estimate_scale(iodvlc.accumulate(imu, dvl, (100.0, 130.0)))
        assert abs(k - 1.0) < 1e-9
        assert ratios.shape[1] == 2 and len(ratios) >= 100

    def test_insufficient_excitation(self):
        _, _, imu, dvl = streams("3d", seed=1)
        with pytest.raises(InsufficientExcitation):
            iodvlc.estimate_scale(iodvlc.accumulate(imu, dvl, (100.0, 200.0)))

    def test_noise_free_three_dimensional_scale(self):
        _, _, imu, dvl = streams("3d", noise_free=True, keep_biases=True)
        cal = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None)
        assert abs(cal.scale_estimate - 0.9998) < 1e-6

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_noisy_three_dimensional_scale(self, seed):
        _, _, imu, dvl = streams("3d", seed=seed)
        cal = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None)
        assert abs(cal.scale_estimate - 0.9998) < 1e-3


class TestMisalignment:
    def test_two_synthetic_directions(self):
        parts = []
        for i, direction in enumerate(([0.01, 0.0, 0.002], [0.0, 0.006, 0.01])):
            imu, dvl, _ = polynomial_streams(np.array(direction), start=100.0 + 100.0 * i)
            parts.append(iodvlc.accumulate(imu, dvl, (imu.time[0], imu.time[-1]), segment_id=i))
        series = iodvlc.BetaGammaSeries.concat(parts)
        cal = iodvlc.estimate_misalignment(series, 0.9998)
        assert cal.free_axis is None
        err = np.rad2deg(np.array(cal.angles) - np.array(DVL_TRUTH.misalignment))
        assert np.max(np.abs(err)) < 1e-3

    def test_single_direction_flags_free_axis(self):
        imu, dvl, _ = polynomial_streams(np.array([0.01, 0.0, 0.0]))
        cal = iodvlc.estimate_misalignment(iodvlc.accumulate(imu, dvl, (100.0, 130.0)), 0.9998)
        assert cal.inestimable_angle == "roll"
        np.testing.assert_allclose(np.abs(cal.free_axis), [1.0, 0.0, 0.0], atol=1e-3)

    def test_noise_free_three_dimensional_angles(self):
        _, _, imu, dvl = streams("3d", noise_free=True, keep_biases=True)
        cal = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None)
        err = np.rad2deg(np.array(cal.angles) - np.array(DVL_TRUTH.misalignment))
        assert np.max(np.abs(err)) < 1e-3
        assert cal.free_axis is None
        assert cal.residual < 1e-6

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_noisy_three_dimensional_angles(self, seed):
        _, _, imu, dvl = streams("3d", seed=seed)
        cal = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None)
        roll, pitch, yaw = np.abs(np.rad2deg(np.array(cal.angles) - np.array(DVL_TRUTH.misalignment)))
        assert yaw < 0.2 and pitch < 0.2 and roll < 0.5

    def test_planar_run_leaves_roll_free(self):
        _, _, imu, dvl = streams("2d", seed=1)
        cal = iodvlc.calibrate(imu, dvl, TABLE_2D["type1"], history_step=None)
        assert cal.inestimable_angle == "roll"
        assert attmath.angle_between(cal.free_axis, [1.0, 0.0, 0.0]) < np.deg2rad(5.0)
        assert abs(cal.scale_estimate - 0.9998) < 1e-3

    def test_rejects_non_positive_scale(self):
        imu, dvl, _ = polynomial_streams(np.array([0.01, 0.0, 0.0]))
        with pytest.raises(ValueError):
            iodvlc.estimate_misalignment(iodvlc.accumulate(imu, dvl, (100.0, 130.0)), 0.0)


class TestCalibrationProperties:
    def test_true_parameters_satisfy_relation_on_first_leg(self):
        # relation holds on 600-660 s with the true parameters once the
        # neglected terms are restored
        _, _, imu, dvl = streams("3d", noise_free=True)
        cal = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None)
        s = cal.history["series"]
        first = s.segment_id == 0
        resid = 0.9998 * s.beta[first] - s.gamma[first] @ DVL_TRUTH.c_d_b.T
        assert np.max(np.linalg.norm(resid, axis=1)) < 1e-6

    def test_residual_shrinks_with_noise(self):
        tr = truth("3d")
        base = simkit.SensorErrorModel(seed=3)
        residuals = []
        for factor in (1.0, 0.1, 0.0):
            errors = replace(base, gyro_noise_density=base.gyro_noise_density * factor,
                             accel_noise_density=base.accel_noise_density * factor,
                             dvl_noise_sigma=base.dvl_noise_sigma * factor)
            imu, dvl = simkit.gen_imu(tr, errors), simkit.gen_dvl(tr, DVL_TRUTH, errors, 100.0)
            residuals.append(iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None).residual)
        assert residuals[0] > residuals[1] > residuals[2]
        assert residuals[2] < 1e-6

    @pytest.mark.parametrize("factor", [0.5, 1.5])
    def test_scale_invariance(self, factor):
        _, _, imu, dvl = streams("3d", seed=1)
        a = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None)
        b = iodvlc.calibrate(imu, dvl.scaled(factor), TABLE_3D["type1"], history_step=None)
        assert b.scale_estimate == pytest.approx(factor * a.scale_estimate, rel=1e-9)
        np.testing.assert_allclose(b.misalignment_estimate, a.misalignment_estimate, atol=1e-9)

    def test_segment_additivity(self):
        _, _, imu, dvl = streams("3d", seed=1)
        segs = TABLE_3D["type1"][:2]
        single = [iodvlc.calibrate(imu, dvl, [s], history_step=None).residual for s in segs]
        joint = iodvlc.calibrate(imu, dvl, segs, history_step=None).residual
        assert joint <= max(single) + 1e-4

    def test_roll_resolves_with_descent(self):
        _, _, imu, dvl = streams("3d", seed=1)
        cal = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"])
        h = cal.history
        assert h["free"][h["time"] < 660.0].all()
        assert not h["free"][h["time"] > 680.0].any()

    def test_estimate_is_rotation(self):
        _, _, imu, dvl = streams("3d", seed=2)
        c = iodvlc.calibrate(imu, dvl, TABLE_3D["type1"], history_step=None).misalignment_estimate
        np.testing.assert_allclose(c.T @ c, np.eye(3), atol=1e-12)
        assert np.linalg.det(c) == pytest.approx(1.0)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02), st.floats(-0.02, 0.02))
def test_polynomial_oracle_for_any_mounting(scale, roll, pitch, yaw):
    c_b_d = attmath.euler_to_dcm([roll, pitch, yaw])
    imu, dvl, _ = polynomial_streams(np.array([0.01, -0.005, 0.004]), scale=scale, c_b_d=c_b_d)
    s = iodvlc.accumulate(imu, dvl, (100.0, 130.0))
    assert np.max(np.abs(scale * s.beta - s.gamma @ c_b_d)) < 1e-11
