"""End-to-end pipelines shared by the command line and the demos."""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import csvlog, ekf, geo, iodvlc, obscheck, simkit
from .config import ScenarioConfig
from .errors import InsufficientTurning, NoExcitation, NoTypeISegments, UnknownFigure

FIGURES = tuple(range(1, 17))
TABLE_SEGMENTS_3D = ((600.0, 660.0), (660.0, 720.0), (720.0, 750.0), (1970.0, 2000.0), (2000.0, 2060.0))


@dataclass
class Simulation:
    truth: simkit.TruthSeries
    imu: object
    dvl: simkit.DvlSeries
    config: ScenarioConfig


def simulate(cfg: ScenarioConfig) -> Simulation:
    """Truth, IMU and DVL streams for a scenario."""
    truth = simkit.synthesize_truth(cfg.plan(), cfg.origin, cfg.init_attitude, cfg.imu_rate)
    imu = simkit.gen_imu(truth, cfg.sensors)
    dvl = simkit.gen_dvl(truth, cfg.dvl, cfg.sensors, cfg.dvl_rate)
    return Simulation(truth, imu, dvl, cfg)


def provenance(cfg: ScenarioConfig) -> list:
    return [f"config sha256 {cfg.digest()}", f"seed {cfg.seed}"]


def write_manifest(out_dir: Path, digests: dict, extra: dict | None = None) -> Path:
    """Record emitted files and their SHA-256 digests."""
    out_dir = Path(out_dir)
    entries = dict(sorted(digests.items()))
    for name, digest in entries.items():
        if csvlog.file_digest(out_dir / name) != digest:
            raise RuntimeError(f"{name} changed while writing the manifest")
    payload = {"files": entries, **(extra or {})}
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_json(path: Path, payload) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_jsonable) + "\n"
    Path(path).write_text(text)
    return csvlog.file_digest(path)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(type(x))


def write_simulation(sim: Simulation, out_dir: Path) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    notes = provenance(sim.config)
    return {"truth.csv": csvlog.write_truth(out_dir / "truth.csv", sim.truth, notes),
            "imu.csv": csvlog.write_imu(out_dir / "imu.csv", sim.imu, notes),
            "dvl.csv": csvlog.write_dvl(out_dir / "dvl.csv", sim.dvl, notes)}


# ---------------------------------------------------------------------------
# calibration and observability


def detect_segments(imu) -> list:
    """Excited constant-attitude intervals found in the IMU stream."""
    segs = obscheck.type1_segments(obscheck.classify_segments(imu))
    if not segs:
        raise NoTypeISegments("no excited constant-attitude segment in the IMU stream")
    return [s.interval for s in segs]


def calibrate(imu, dvl, segments=None, history_step: float | None = 1.0) -> iodvlc.DvlCalibration:
    segments = detect_segments(imu) if segments is None else list(segments)
    if not segments:
        raise NoTypeISegments("no constant-attitude segments given")
    cal = iodvlc.calibrate(imu, dvl, segments, history_step=history_step)
    cal.history["segments"] = segments
    return cal


def calibration_summary(cal: iodvlc.DvlCalibration, params: simkit.DvlParams | None = None) -> dict:
    out = {"scale": cal.scale_estimate,
           "misalignment_deg": dict(zip(("roll", "pitch", "yaw"), np.rad2deg(np.array(cal.angles)))),
           "residual": cal.residual,
           "free_axis": None if cal.free_axis is None else list(cal.free_axis),
           "inestimable_angle": cal.inestimable_angle,
           "segments": [list(s) for s in cal.history.get("segments", [])]}
    if params is not None:
        out["scale_error"] = cal.scale_estimate - params.scale
        err = np.rad2deg(np.array(cal.angles) - np.array(params.misalignment))
        out["misalignment_error_deg"] = dict(zip(("roll", "pitch", "yaw"), err))
    return out


def write_calibration(cal: iodvlc.DvlCalibration, out_dir: Path, notes=(), params=None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    digests = {"calibration.json": write_json(out_dir / "calibration.json", calibration_summary(cal, params))}
    if len(cal.scale_samples):
        digests["calib_scale_ratio.csv"] = csvlog.write_csv(
            out_dir / "calib_scale_ratio.csv", ("t_s", "k_ratio"), cal.scale_samples, notes)
    if "time" in cal.history:
        h = cal.history
        table = np.column_stack([h["time"], h["scale"], h["angles"], h["free"].astype(float)])
        digests["calib_history.csv"] = csvlog.write_csv(
            out_dir / "calib_history.csv", ("t_s", "k", "roll", "pitch", "yaw", "roll_free"), table, notes)
    return digests


def observability(imu, dvl, cal: iodvlc.DvlCalibration | None = None, gyro_bias=None):
    """Segments, both checks and the verdict.

    The calibration supplies ``k`` and ``C_d^b`` for the turning check; it
    is computed when not given and replaced by nominal values if it fails.
    """
    segments = obscheck.classify_segments(imu)
    if cal is None:
        try:
            cal = calibrate(imu, dvl, history_step=None)
        except (NoTypeISegments, NoExcitation) + _numerical():
            cal = None
    k, c_d_b = (1.0, np.eye(3)) if cal is None else (cal.scale_estimate, cal.misalignment_estimate)
    try:
        t1 = obscheck.check_type1(segments, dvl)
    except NoExcitation:
        t1 = None
    try:
        t2 = obscheck.check_type2(imu, dvl, k, c_d_b, np.zeros(3) if gyro_bias is None else gyro_bias, segments)
    except InsufficientTurning:
        t2 = None
    return segments, t1, t2, obscheck.theorem1_verdict(t1, t2)


def _numerical():
    from .errors import NumericalError, ValidationError

    return (NumericalError, ValidationError)


def report_dict(segments, t1, t2, report) -> dict:
    return {"segments": [{"kind": s.kind.value, "start": s.start, "end": s.end,
                          "excited": s.excited} for s in segments],
            "type1_rank": report.type1_rank,
            "type1_free_axis": None if report.type1_free_axis is None else list(report.type1_free_axis),
            "type2_min_eigenvalue": report.type2_min_eigenvalue,
            "type2_threshold": None if t2 is None else t2.threshold,
            "type2_turning_s": None if t2 is None else t2.turning_duration,
            "estimable": report.estimable}


def format_report(segments, t1, t2, report) -> str:
    lines = ["kind      start [s]   end [s]  excited"]
    for s in segments:
        lines.append(f"{s.kind.value:8s} {s.start:9.1f} {s.end:9.1f}  {'yes' if s.excited else '-'}")
    lines.append(f"type-I rank: {report.type1_rank}")
    if report.type1_free_axis is not None:
        lines.append("free axis (DVL frame): " + " ".join(f"{v:+.4f}" for v in report.type1_free_axis))
    if t2 is None:
        lines.append("turning check: not enough turning")
    else:
        lines.append(f"turning check: min eigenvalue {t2.min_eigenvalue:.4g} "
                     f"(threshold {t2.threshold:.4g}, {t2.turning_duration:.0f} s of turns)")
    for name, ok in report.estimable.items():
        lines.append(f"  {name:12s} {'estimable' if ok else 'NOT estimable'}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# filter


def run_filter(imu, dvl, cfg: ScenarioConfig, truth=None, monitor: bool = False) -> ekf.EkfHistory:
    """EKF over the streams; truth (when given) drives alignment and errors."""
    ekf_cfg = cfg.ekf
    initial = None
    if truth is None:
        i0 = int(np.searchsorted(imu.time, ekf_cfg.start_time - 1e-9))
        static = type(imu)(imu.time[:i0], imu.gyro[:i0], imu.accel[:i0])
        att = ekf.coarse_alignment(static) if i0 > 1 else np.eye(3)
        initial = ekf.init(ekf_cfg, att, cfg.origin, np.zeros(3), float(imu.time[min(i0, len(imu) - 1)]))
        full_truth = None
    else:
        full_truth = ekf.with_sensor_truth(truth, cfg.sensors)
    return ekf.run(imu, dvl, ekf_cfg, truth=full_truth, initial=initial, seed=cfg.seed,
                   monitor=monitor, dvl_truth=cfg.dvl if truth is not None else None)


def history_columns(with_errors: bool) -> tuple:
    cols = ["t_s", *ekf.ESTIMATE_LABELS, *(f"sigma_{s}" for s in ekf.STATE_LABELS)]
    if with_errors:
        cols += [f"err_{s}" for s in ekf.STATE_LABELS]
    return tuple(cols)


def history_table(h: ekf.EkfHistory) -> tuple:
    parts = [h.time[:, None], h.estimates, h.sigmas]
    if h.errors is not None:
        parts.append(h.errors)
    return history_columns(h.errors is not None), np.hstack(parts)


def write_history(h: ekf.EkfHistory, out_dir: Path, notes=()) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cols, table = history_table(h)
    digests = {"estimate_history.csv": csvlog.write_csv(out_dir / "estimate_history.csv", cols, table, notes)}
    norm = np.column_stack([h.time, h.normalized_sigmas()])
    digests["normalized_sigmas.csv"] = csvlog.write_csv(
        out_dir / "normalized_sigmas.csv", ("t_s", *(f"norm_{s}" for s in ekf.STATE_LABELS)), norm, notes)
    return digests


def _settle_time(time, err, limit):
    bad = np.flatnonzero(~(np.abs(err) < limit))
    if len(bad) == 0:
        return float(time[0])
    return None if bad[-1] == len(time) - 1 else float(time[bad[-1] + 1])


def filter_summary(h: ekf.EkfHistory, cfg: ScenarioConfig) -> dict:
    final = h.estimates[-1]
    out = {"final_scale": final[15], "final_scale_sigma": h.sigmas[-1, 15],
           "final_misalignment_deg": dict(zip(("roll", "pitch", "yaw"), np.rad2deg(h.misalignment_angles[-1]))),
           "rejected_updates": int((~h.accepted).sum()), "updates": int(len(h.accepted))}
    if h.errors is not None:
        mis = np.rad2deg(h.misalignment_errors)
        out.update({
            "final_scale_error": h.errors[-1, 15],
            "final_misalignment_error_deg": dict(zip(("roll", "pitch", "yaw"), mis[-1])),
            "final_attitude_error_deg": list(np.rad2deg(h.errors[-1, 0:3])),
            "final_gyro_bias_error_deg_h": list(h.errors[-1, 9:12] / simkit.DEG_PER_HOUR),
            "final_accel_bias_error_ug": list(h.errors[-1, 12:15] / simkit.MICRO_G),
            "final_horizontal_error_m": list(horizontal_error(h)[-1]),
            "scale_settle_time_s": _settle_time(h.time, h.errors[:, 15], 1e-3),
            "misalignment_settle_time_s": {name: _settle_time(h.time, mis[:, i], 0.1)
                                           for i, name in enumerate(("roll", "pitch", "yaw"))},
        })
    return out


def horizontal_error(h: ekf.EkfHistory) -> np.ndarray:
    """North and east position errors [m]."""
    lat, height = h.estimates[:, 7], h.estimates[:, 8]
    rn, re = geo.radii_of_curvature(lat)
    return np.column_stack([h.errors[:, 7] * (rn + height), h.errors[:, 6] * (re + height) * np.cos(lat)])


def horizontal_sigma(h: ekf.EkfHistory) -> np.ndarray:
    lat, height = h.estimates[:, 7], h.estimates[:, 8]
    rn, re = geo.radii_of_curvature(lat)
    return np.column_stack([h.sigmas[:, 7] * (rn + height), h.sigmas[:, 6] * (re + height) * np.cos(lat)])


# ---------------------------------------------------------------------------
# figure data


def _track(truth) -> np.ndarray:
    p0 = truth.position[0]
    rn, re = geo.radii_of_curvature(truth.position[:, 1])
    north = (truth.position[:, 1] - p0[1]) * (rn + truth.position[:, 2])
    east = (truth.position[:, 0] - p0[0]) * (re + truth.position[:, 2]) * np.cos(truth.position[:, 1])
    return np.column_stack([truth.time, north, east, truth.position[:, 2]])


def _every(x, time, step):
    dt = float(np.median(np.diff(time)))
    return x[::max(1, int(round(step / dt)))]


def figure_data(figure: int, cfg: ScenarioConfig) -> tuple:
    """Columns and rows of the series plotted in a figure of the study.

    Figures 1-12 use the scenario as configured (3D by default); 13-16
    rerun it on the 2D plan.
    """
    if figure not in FIGURES:
        raise UnknownFigure(f"figure {figure} is not reproducible (choose 1-16)")
    from dataclasses import replace

    if figure == 1:
        rows = []
        for run, name in enumerate(("3d", "2d")):
            truth = simkit.synthesize_truth(replace(cfg, plan_name=name).plan(), cfg.origin,
                                            cfg.init_attitude, 10.0)
            track = _track(truth)
            rows.append(np.column_stack([np.full(len(track), run), track]))
        return ("run_2d", "t_s", "north_m", "east_m", "h_m"), np.vstack(rows)

    if figure >= 13:
        cfg = replace(cfg, plan_name="2d")
    sim = simulate(cfg)
    if figure == 2:
        d = sim.dvl
        return csvlog.DVL_COLUMNS, _every(np.column_stack([d.time, d.velocity]), d.time, 0.1)
    if figure == 3:
        m = sim.imu
        return csvlog.IMU_COLUMNS, _every(np.column_stack([m.time, m.gyro, m.accel]), m.time, 0.1)
    if figure in (4, 5):
        cal = calibrate(sim.imu, sim.dvl)
        if figure == 4:
            return ("t_s", "k_ratio"), cal.scale_samples
        h = cal.history
        return (("t_s", "roll", "pitch", "yaw", "roll_free"),
                np.column_stack([h["time"], h["angles"], h["free"].astype(float)]))

    h = run_filter(sim.imu, sim.dvl, cfg, truth=sim.truth)
    t = h.time[:, None]
    if figure in (6, 13):
        return ("t_s", "k_hat", "k_sigma"), np.hstack([t, h.estimates[:, 15:16], h.sigmas[:, 15:16]])
    if figure in (7, 14):
        return (("t_s", "roll", "pitch", "yaw", "roll_sigma", "pitch_sigma", "yaw_sigma"),
                np.hstack([t, h.misalignment_angles, h.misalignment_sigmas]))
    if figure == 8:
        return (("t_s", "bg_x", "bg_y", "bg_z", "sigma_x", "sigma_y", "sigma_z"),
                np.hstack([t, h.estimates[:, 9:12], h.sigmas[:, 9:12]]))
    if figure == 9:
        return (("t_s", "ba_x", "ba_y", "ba_z", "sigma_x", "sigma_y", "sigma_z"),
                np.hstack([t, h.estimates[:, 12:15], h.sigmas[:, 12:15]]))
    if figure in (10, 15):
        return (("t_s", "err_phi_n", "err_phi_u", "err_phi_e", "sigma_phi_n", "sigma_phi_u", "sigma_phi_e"),
                np.hstack([t, h.errors[:, 0:3], h.sigmas[:, 0:3]]))
    if figure in (11, 16):
        return (("t_s", "err_north_m", "err_east_m", "sigma_north_m", "sigma_east_m"),
                np.hstack([t, horizontal_error(h), horizontal_sigma(h)]))
    # figure 12
    idx = [0, 1, 2, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18]
    return (("t_s", *(f"norm_{ekf.STATE_LABELS[i]}" for i in idx)),
            np.hstack([t, h.normalized_sigmas()[:, idx]]))


# ---------------------------------------------------------------------------
# batch


def seed_summary(cfg: ScenarioConfig) -> dict:
    """Simulate, calibrate, check and filter one seed."""
    sim = simulate(cfg)
    out = {"seed": cfg.seed}
    try:
        cal = calibrate(sim.imu, sim.dvl, history_step=None)
        out["calibration"] = calibration_summary(cal, cfg.dvl)
    except (NoTypeISegments,) + _numerical() as exc:
        cal = None
        out["calibration"] = {"error": str(exc)}
    segments, t1, t2, report = observability(sim.imu, sim.dvl, cal)
    out["observability"] = report_dict(segments, t1, t2, report)
    h = run_filter(sim.imu, sim.dvl, cfg, truth=sim.truth)
    out["ekf"] = filter_summary(h, cfg)
    return out


def batch(cfg: ScenarioConfig, seeds, workers: int = 1) -> list:
    configs = [cfg.with_seed(s) for s in seeds]
    if workers <= 1:
        return [seed_summary(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(seed_summary, configs))
