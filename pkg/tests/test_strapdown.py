import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from dvlnav import attmath, geo, simkit, strapdown
from dvlnav.errors import PolarSingularity, StepTooLarge
from dvlnav.strapdown import ImuBiases, ImuSample, ImuSeries, NavState

from conftest import INIT_ATTITUDE, ORIGIN, streams

vec3 = st.lists(st.floats(-1e-3, 1e-3), min_size=3, max_size=3).map(np.array)


def rest_sample(attitude, pos, time=0.0):
    gyro, accel = strapdown.invert_dynamics(attitude, np.zeros(3), np.zeros(3), np.zeros(3), pos)
    return ImuSample(time, gyro, accel)


def turn_free_plan():
    prims = simkit.MotionPrimitive, simkit.Kind
    return simkit.MotionPlan((
        prims[0](prims[1].STATIC, 0.0, 100.0),
        prims[0](prims[1].LEVEL, 100.0, 200.0, dict(speed=2.0, climb=0.0, settle=5.0)),
        prims[0](prims[1].DESCEND, 200.0, 400.0, dict(climb=-0.5, settle=5.0)),
        prims[0](prims[1].LEVEL, 400.0, 600.0, dict(climb=0.0, settle=5.0)),
    ))


class TestPropagate:
    def test_static_equilibrium(self):
        att = attmath.euler_to_dcm(INIT_ATTITUDE).T
        state = NavState(att, np.zeros(3), ORIGIN)
        sample = rest_sample(att, ORIGIN)
        for _ in range(100):
            state = strapdown.propagate(state, sample, 0.01)
        assert np.max(np.abs(state.velocity)) < 1e-12
        assert np.linalg.norm(attmath.rotation_vector(state.attitude @ att.T)) < 1e-9
        assert state.time == pytest.approx(1.0)

    def test_level_cruise_follows_meridian(self):
        speed, height = 2.0, ORIGIN.height
        rate = 100.0
        times = np.arange(0.0, 60.0 + 0.5 / rate, 1.0 / rate)

        # latitude of a northbound track at constant speed and height
        sol = solve_ivp(lambda t, lat: speed / (geo.radii_of_curvature(lat[0])[0] + height),
                        (0.0, 60.0), [ORIGIN.lat], t_eval=times, rtol=1e-13, atol=1e-16)
        lat = sol.y[0]
        pos = np.column_stack([np.full_like(lat, ORIGIN.lon), lat, np.full_like(lat, height)])
        vel = np.tile([speed, 0.0, 0.0], (len(times), 1))
        att = np.tile(np.eye(3), (len(times), 1, 1))
        gyro, accel = strapdown.invert_dynamics(att, np.zeros((len(times), 3)), vel, np.zeros_like(vel), pos)
        nav = strapdown.integrate(NavState(np.eye(3), vel[0], ORIGIN), ImuSeries(times, gyro, accel))

        rn = geo.radii_of_curvature(lat[-1])[0] + height
        north_error = (nav.position[-1, 1] - lat[-1]) * rn
        assert abs(north_error) < 1e-3
        assert abs(nav.position[-1, 0] - ORIGIN.lon) * rn < 1e-3
        np.testing.assert_allclose(nav.velocity[-1], [speed, 0.0, 0.0], atol=1e-6)

    def test_halving_step_changes_velocity_little(self):
        finals = []
        for rate in (100.0, 200.0):
            truth = simkit.synthesize_truth(turn_free_plan(), ORIGIN, INIT_ATTITUDE, rate)
            imu = simkit.gen_imu(truth, simkit.SensorErrorModel.noise_free())
            finals.append(strapdown.integrate(truth.state(0), imu).velocity[-1])
        assert np.max(np.abs(finals[0] - finals[1])) < 1e-6

    def test_second_order_through_a_turn(self):
        # first turn of the planar plan, 1080-1110 s
        errors = []
        for rate in (50.0, 100.0, 200.0):
            truth = simkit.synthesize_truth(simkit.build_plan_2d(), ORIGIN, INIT_ATTITUDE, rate)
            imu = simkit.gen_imu(truth, simkit.SensorErrorModel.noise_free()).between(1070.0, 1120.0)
            i0, i1 = np.searchsorted(truth.time, [1070.0 - 1e-9, 1120.0 - 1e-9])
            nav = strapdown.integrate(truth.state(i0), imu)
            errors.append(np.max(np.abs(nav.velocity[-1] - truth.velocity[i1])))
        np.testing.assert_allclose(np.array(errors[:-1]) / errors[1:], 4.0, rtol=0.05)
        assert errors[1] < 1e-4

    @settings(max_examples=25)
    @given(vec3, vec3, vec3, vec3)
    def test_bias_equivalence(self, gyro, accel, bias_g, bias_a):
        att = attmath.euler_to_dcm(INIT_ATTITUDE).T
        state = NavState(att, np.array([1.0, 0.1, -0.5]), ORIGIN)
        sample = rest_sample(att, ORIGIN)
        sample = ImuSample(0.0, sample.gyro + gyro, sample.accel + accel)
        biases = ImuBiases(bias_g, bias_a)
        a = strapdown.propagate(state, sample, 0.01, biases)
        b = strapdown.propagate(state, sample - biases, 0.01, ImuBiases.zeros())
        np.testing.assert_array_equal(a.attitude, b.attitude)
        np.testing.assert_array_equal(a.velocity, b.velocity)
        np.testing.assert_array_equal(a.position.as_array(), b.position.as_array())

    @pytest.mark.parametrize("seconds", [1.0, 5.0, 10.0])
    def test_free_fall(self, seconds):
        state = NavState(np.eye(3), np.zeros(3), ORIGIN)
        g = geo.gravity_magnitude(ORIGIN.lat, ORIGIN.height)
        zero = ImuSample(0.0, np.zeros(3), np.zeros(3))
        for _ in range(int(round(seconds / 0.01))):
            state = strapdown.propagate(state, zero, 0.01)
        assert state.velocity[1] == pytest.approx(-g * seconds, rel=1e-3)

    def test_orthonormal_after_long_run(self):
        n = 200_001
        rng = np.random.default_rng(3)
        time = np.arange(n) * 0.01
        gyro = 0.3 * np.sin(np.outer(time, [0.011, 0.017, 0.013])) + 1e-3 * rng.normal(size=(n, 3))
        accel = np.tile([0.0, 9.79, 0.0], (n, 1))
        nav = strapdown.integrate(NavState(np.eye(3), np.zeros(3), geo.GeoPosition(0.0, 0.1, 0.0)),
                                  ImuSeries(time, gyro, accel))
        c = nav.attitude
        err = np.einsum("nji,njk->nik", c, c) - np.eye(3)
        assert np.max(np.abs(err)) < 1e-9

    @pytest.mark.parametrize("dt, exc", [(0.2, StepTooLarge), (0.0, ValueError), (-0.01, ValueError)])
    def test_step_bounds(self, dt, exc):
        state = NavState(np.eye(3), np.zeros(3), ORIGIN)
        with pytest.raises(exc):
            strapdown.propagate(state, ImuSample(0.0, np.zeros(3), np.zeros(3)), dt)

    def test_polar_state(self):
        state = NavState(np.eye(3), np.zeros(3), geo.GeoPosition(0.0, np.pi / 2, 0.0))
        with pytest.raises(PolarSingularity):
            strapdown.propagate(state, ImuSample(0.0, np.zeros(3), np.zeros(3)), 0.01)


class TestInvertDynamics:
    def test_rest_case(self):
        att = attmath.euler_to_dcm(INIT_ATTITUDE).T
        gyro, accel = strapdown.invert_dynamics(att, np.zeros(3), np.zeros(3), np.zeros(3), ORIGIN)
        np.testing.assert_allclose(accel, -att.T @ geo.gravity_n(ORIGIN), atol=1e-15)
        np.testing.assert_allclose(gyro, att.T @ geo.earth_rate_n(ORIGIN.lat), atol=1e-20)

    def test_level_acceleration(self):
        a = 0.2
        _, accel = strapdown.invert_dynamics(np.eye(3), np.zeros(3), np.zeros(3), [a, 0.0, 0.0], ORIGIN)
        g = geo.gravity_magnitude(ORIGIN.lat, ORIGIN.height)
        np.testing.assert_allclose(accel, [a, g, 0.0], atol=1e-4 * a)

    def test_round_trip_over_full_plan(self, truth_3d):
        imu = simkit.gen_imu(truth_3d, simkit.SensorErrorModel.noise_free())
        nav = strapdown.integrate(truth_3d.state(0), imu)
        assert np.max(np.abs(nav.velocity - truth_3d.velocity)) < 1e-3

    def test_round_trip_on_two_dimensional_plan(self):
        truth, _, imu, _ = streams("2d", noise_free=True)
        nav = strapdown.integrate(truth.state(0), imu)
        assert np.max(np.abs(nav.velocity - truth.velocity)) < 1e-3

    def test_broadcasts_over_series(self, truth_3d):
        idx = np.arange(0, len(truth_3d), 20_000)
        gyro, accel = strapdown.invert_dynamics(truth_3d.attitude[idx], truth_3d.att_rate[idx],
                                                truth_3d.velocity[idx], truth_3d.accel_n[idx],
                                                truth_3d.position[idx])
        for j, i in enumerate(idx):
            g1, a1 = strapdown.invert_dynamics(truth_3d.attitude[i], truth_3d.att_rate[i], truth_3d.velocity[i],
                                               truth_3d.accel_n[i], geo.GeoPosition.from_array(truth_3d.position[i]))
            np.testing.assert_allclose(gyro[j], g1, rtol=1e-14, atol=1e-20)
            np.testing.assert_allclose(accel[j], a1, rtol=1e-14, atol=1e-16)
