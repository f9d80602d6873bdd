"""CSV logs for sensor streams, truth and filter output.

Values are written with 17 significant digits, which reproduces every
float64 exactly when read back. Lines starting with ``#`` are comments.
"""

from __future__ import annotations

import hashlib
import io
from pathlib import Path

import numpy as np

from .attmath import dcm_to_euler, euler_to_dcm
from .errors import ValidationError
from .simkit import DvlSeries
from .strapdown import ImuSeries, NavTrajectory

IMU_COLUMNS = ("t_s", "gyro_x", "gyro_y", "gyro_z", "accel_x", "accel_y", "accel_z")
DVL_COLUMNS = ("t_s", "y_x", "y_y", "y_z")
TRUTH_COLUMNS = ("t_s", "lon_rad", "lat_rad", "h_m", "vN", "vU", "vE", "roll", "pitch", "yaw")
FLOAT_FORMAT = "%.17g"


def write_csv(path, columns, data, comments=()) -> str:
    """Write a table and return the SHA-256 of the file contents."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != len(columns):
        raise ValueError(f"{len(columns)} columns named but data has {data.shape[1]}")
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    buf.write(",".join(columns) + "\n")
    np.savetxt(buf, data, delimiter=",", fmt=FLOAT_FORMAT)
    text = buf.getvalue().encode()
    Path(path).write_bytes(text)
    return hashlib.sha256(text).hexdigest()


def read_csv(path, expected=None):
    """Read a table written by :func:`write_csv`.

    Returns
    -------
    columns : tuple of str
    data : ndarray, shape (n, len(columns))

    Raises
    ------
    ValidationError
        When the header differs from ``expected`` or rows are malformed.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ValidationError(f"{path}: {exc.strerror}") from exc
    body = [ln for ln in lines if ln.strip() and not ln.startswith("#")]
    if not body:
        raise ValidationError(f"{path}: empty file")
    columns = tuple(c.strip() for c in body[0].split(","))
    if expected is not None and columns[:len(expected)] != tuple(expected):
        raise ValidationError(f"{path}: expected columns {','.join(expected)}, got {','.join(columns)}")
    try:
        data = np.loadtxt(io.StringIO("\n".join(body[1:])), delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"{path}: {exc}") from exc
    if data.size == 0:
        data = np.empty((0, len(columns)))
    if data.shape[1] != len(columns):
        raise ValidationError(f"{path}: rows have {data.shape[1]} fields, header has {len(columns)}")
    return columns, data


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_imu(path, imu: ImuSeries, comments=()) -> str:
    return write_csv(path, IMU_COLUMNS, np.column_stack([imu.time, imu.gyro, imu.accel]), comments)


def read_imu(path) -> ImuSeries:
    _, d = read_csv(path, IMU_COLUMNS)
    return ImuSeries(d[:, 0], d[:, 1:4], d[:, 4:7])


def write_dvl(path, dvl: DvlSeries, comments=()) -> str:
    return write_csv(path, DVL_COLUMNS, np.column_stack([dvl.time, dvl.velocity]), comments)


def read_dvl(path) -> DvlSeries:
    _, d = read_csv(path, DVL_COLUMNS)
    return DvlSeries(d[:, 0], d[:, 1:4])


def truth_table(truth: NavTrajectory) -> np.ndarray:
    euler = np.asarray(dcm_to_euler(np.swapaxes(truth.attitude, 1, 2)))
    return np.column_stack([truth.time, truth.position, truth.velocity, euler])


def write_truth(path, truth: NavTrajectory, comments=()) -> str:
    return write_csv(path, TRUTH_COLUMNS, truth_table(truth), comments)


def read_truth(path) -> NavTrajectory:
    """Truth trajectory; the attitude is rebuilt from the Euler angles."""
    _, d = read_csv(path, TRUTH_COLUMNS)
    attitude = np.swapaxes(euler_to_dcm(d[:, 7:10]), 1, 2)
    return NavTrajectory(d[:, 0], attitude, d[:, 4:7], d[:, 1:4])
