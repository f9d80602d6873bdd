from functools import lru_cache

import numpy as np
import pytest

from dvlnav import attmath, ekf, geo, simkit
from dvlnav.attmath import EulerYZX
from dvlnav.ekf import EkfState
from dvlnav.simkit import DvlSeries
from dvlnav.strapdown import ImuBiases, ImuSample, ImuSeries, NavState

ORIGIN = geo.GeoPosition.from_degrees(120.0, 30.0, -50.0)
INIT_ATTITUDE = EulerYZX.from_degrees(3.0, 0.0, 10.0)
DVL_TRUTH = simkit.DvlParams()

# Table 1 boundaries of the two scenarios
TABLE_3D = {"type1": [(600.0, 660.0), (660.0, 720.0), (720.0, 750.0), (1970.0, 2000.0), (2000.0, 2060.0)],
            "square": (750.0, 1970.0)}
TABLE_2D = {"type1": [(600.0, 800.0)], "square": (800.0, 2040.0)}


@lru_cache(maxsize=None)
def truth(plan: str = "3d", rate: float = 100.0):
    builder = simkit.build_plan_3d if plan == "3d" else simkit.build_plan_2d
    return simkit.synthesize_truth(builder(), ORIGIN, INIT_ATTITUDE, rate)


@lru_cache(maxsize=None)
def streams(plan: str = "3d", seed: int = 0, noise_free: bool = False, keep_biases: bool = False,
            dvl_rate: float = 100.0):
    """(truth, errors, imu, dvl) for a scenario; cached across the session."""
    tr = truth(plan)
    errors = (simkit.SensorErrorModel.noise_free(seed, keep_biases=keep_biases) if noise_free
              else simkit.SensorErrorModel(seed=seed))
    imu = simkit.gen_imu(tr, errors)
    dvl = simkit.gen_dvl(tr, DVL_TRUTH, errors, dvl_rate)
    return tr, errors, imu, dvl


@pytest.fixture(scope="session")
def truth_3d():
    return truth("3d")


@pytest.fixture(scope="session")
def truth_2d():
    return truth("2d")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_rotation(rng) -> np.ndarray:
    from scipy.spatial.transform import Rotation

    return Rotation.random(random_state=rng).as_matrix()


HOLD = 5.0  # initial stretch with constant force, so the fitted slope is exact


def polynomial_streams(force_rate, scale=0.9998, c_b_d=None, duration=30.0, start=100.0, rate=100.0):
    """IMU and DVL streams for a force that starts ramping linearly after ``HOLD`` s.

    Returns the streams and the closed-form ``beta``.
    """
    c_b_d = DVL_TRUTH.c_b_d if c_b_d is None else c_b_d
    tau = np.arange(int(round(duration * rate)) + 1) / rate
    late = np.maximum(tau - HOLD, 0.0)
    f0 = np.array([0.05, 9.79, -0.02])
    accel = f0 + np.outer(late, force_rate)
    gyro = np.tile([1e-5, 3e-5, -2e-5], (len(tau), 1))
    beta = np.outer(late**2 / 2.0, force_rate)
    y0, slope0 = np.array([1.0, 0.2, -0.3]), np.array([0.01, 0.0, 0.02])
    y = y0 + np.outer(tau, slope0) + scale * beta @ c_b_d.T
    time = start + tau
    return ImuSeries(time, gyro, accel), DvlSeries(time, y), beta


# finite-difference step per error-state component
FD_STEPS = 1e-2 * np.array([1e-3] * 3 + [1e-2] * 3 + [1e-4, 1e-4, 100.0] + [1e-5] * 3 + [1e-3] * 3
                           + [1e-2] + [1e-3] * 3)


def random_ekf_state(rng) -> tuple:
    c = attmath.euler_to_dcm(rng.uniform(-1.0, 1.0, 3)).T
    v = rng.normal(0.0, 3.0, 3)
    p = np.array([rng.uniform(-3.0, 3.0), rng.uniform(-1.2, 1.2), rng.uniform(-500.0, 100.0)])
    state = EkfState(NavState(c, v, geo.GeoPosition.from_array(p)),
                     ImuBiases(rng.normal(0.0, 1e-5, 3), rng.normal(0.0, 1e-3, 3)),
                     rng.uniform(0.8, 1.2), attmath.euler_to_dcm(rng.normal(0.0, 0.02, 3)), np.eye(19))
    sample = ImuSample(0.0, rng.normal(0.0, 0.1, 3), rng.normal([0.0, 9.8, 0.0], 1.0))
    return state, sample


def column_errors(analytic, numeric):
    scale = np.abs(numeric).max(axis=0)
    err = np.abs(analytic - numeric).max(axis=0)
    return np.where(scale > 0, err / np.where(scale > 0, scale, 1.0), err)


def numeric_jacobians(state, sample):
    """Central-difference state-transition and measurement Jacobians."""
    f_num, h_num = np.zeros((19, 19)), np.zeros((3, 19))
    for j in range(19):
        d = np.zeros(19)
        d[j] = FD_STEPS[j]
        f_num[:, j] = (ekf.error_rate(state, sample, d) - ekf.error_rate(state, sample, -d)) / (2 * d[j])
        h_num[:, j] = (ekf.measurement(ekf.perturb(state, d)) - ekf.measurement(ekf.perturb(state, -d))) / (2 * d[j])
    return f_num, h_num


# one summary line per acceptance criterion, shown at the end of the run
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: int(k[1:])):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
