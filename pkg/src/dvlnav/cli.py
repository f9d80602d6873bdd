"""Command-line interface: ``dvlnav <command> [options]``.

Exit status is 0 on success, 1 for invalid input (bad configuration,
malformed files, unknown figure) and 2 for numerical or runtime failures.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import csvlog, pipeline
from .errors import NumericalError, ValidationError

log = logging.getLogger("dvlnav")


def _seed_list(text: str) -> list:
    seeds = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    if not seeds:
        raise argparse.ArgumentTypeError("empty seed list")
    return seeds


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="scenario file (TOML or JSON)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory [default: out]")


def _inputs(p: argparse.ArgumentParser, truth: bool = False):
    p.add_argument("--imu", type=Path, help="IMU CSV [default: <out-dir>/imu.csv]")
    p.add_argument("--dvl", type=Path, help="DVL CSV [default: <out-dir>/dvl.csv]")
    if truth:
        p.add_argument("--truth", type=Path, help="truth CSV; enables error columns "
                       "[default: <out-dir>/truth.csv if present]")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dvlnav", description="DVL calibration and SINS/DVL navigation tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write truth, IMU and DVL streams")
    _common(p)

    p = sub.add_parser("calibrate", help="in-motion DVL scale and misalignment calibration")
    _common(p)
    _inputs(p)
    p.add_argument("--segment", nargs=2, type=float, action="append", metavar=("START", "END"),
                   help="constant-attitude segment; repeatable [default: detected]")

    p = sub.add_parser("ekf", help="run the 19-state SINS/DVL filter")
    _common(p)
    _inputs(p, truth=True)
    p.add_argument("--monitor", action="store_true", help="check covariance symmetry and definiteness")

    p = sub.add_parser("check", help="observability analysis of a run")
    _common(p)
    _inputs(p)

    p = sub.add_parser("reproduce", help="write the data series behind one figure")
    _common(p)
    p.add_argument("figure", type=int, help="figure number (1-16)")

    p = sub.add_parser("batch", help="Monte-Carlo over seeds")
    _common(p)
    p.add_argument("--seeds", type=_seed_list, default=list(range(20)), help="e.g. 0-19 or 1,4,7 [default: 0-19]")
    p.add_argument("--workers", type=int, default=1)
    return parser


def _streams(args):
    imu = csvlog.read_imu(args.imu or args.out_dir / "imu.csv")
    dvl = csvlog.read_dvl(args.dvl or args.out_dir / "dvl.csv")
    return imu, dvl


def cmd_simulate(args, cfg):
    sim = pipeline.simulate(cfg)
    digests = pipeline.write_simulation(sim, args.out_dir)
    digests["config.json"] = pipeline.write_json(args.out_dir / "config.json", cfg.to_dict())
    pipeline.write_manifest(args.out_dir, digests, {"seed": cfg.seed, "config_sha256": cfg.digest()})
    print(f"wrote {len(sim.imu)} IMU and {len(sim.dvl)} DVL samples to {args.out_dir}")


def cmd_calibrate(args, cfg):
    imu, dvl = _streams(args)
    cal = pipeline.calibrate(imu, dvl, args.segment)
    digests = pipeline.write_calibration(cal, args.out_dir, pipeline.provenance(cfg))
    pipeline.write_manifest(args.out_dir, digests, {"seed": cfg.seed, "config_sha256": cfg.digest()})
    roll, pitch, yaw = np.rad2deg(np.array(cal.angles))
    print(f"scale      {cal.scale_estimate:.6f}")
    print(f"roll       {roll:+.4f} deg" + ("  (not estimable)" if cal.inestimable_angle == "roll" else ""))
    print(f"pitch      {pitch:+.4f} deg" + ("  (not estimable)" if cal.inestimable_angle == "pitch" else ""))
    print(f"yaw        {yaw:+.4f} deg" + ("  (not estimable)" if cal.inestimable_angle == "yaw" else ""))
    print(f"residual   {cal.residual:.4g} m/s")


def cmd_ekf(args, cfg):
    imu, dvl = _streams(args)
    truth_path = args.truth or args.out_dir / "truth.csv"
    truth = csvlog.read_truth(truth_path) if (args.truth or truth_path.exists()) else None
    hist = pipeline.run_filter(imu, dvl, cfg, truth=truth, monitor=args.monitor)
    notes = pipeline.provenance(cfg)
    digests = pipeline.write_history(hist, args.out_dir, notes)
    summary = pipeline.filter_summary(hist, cfg)
    if args.monitor:
        summary["worst_covariance_eigenvalue"] = hist.worst_eigenvalue
        summary["worst_covariance_asymmetry"] = hist.worst_asymmetry
    digests["ekf_summary.json"] = pipeline.write_json(args.out_dir / "ekf_summary.json", summary)
    pipeline.write_manifest(args.out_dir, digests, {"seed": cfg.seed, "config_sha256": cfg.digest()})
    mis = summary["final_misalignment_deg"]
    print(f"final scale {summary['final_scale']:.6f} +- {summary['final_scale_sigma']:.2g}")
    print("final mounting angles [deg]: " + ", ".join(f"{k} {v:+.4f}" for k, v in mis.items()))
    print(f"rejected updates: {summary['rejected_updates']} of {summary['updates']}")


def cmd_check(args, cfg):
    imu, dvl = _streams(args)
    segments, t1, t2, report = pipeline.observability(imu, dvl)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    digests = {"observability.json": pipeline.write_json(
        args.out_dir / "observability.json", pipeline.report_dict(segments, t1, t2, report))}
    pipeline.write_manifest(args.out_dir, digests, {"seed": cfg.seed, "config_sha256": cfg.digest()})
    print(pipeline.format_report(segments, t1, t2, report))


def cmd_reproduce(args, cfg):
    columns, data = pipeline.figure_data(args.figure, cfg)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    name = f"figure{args.figure:02d}.csv"
    digest = csvlog.write_csv(args.out_dir / name, columns, data, pipeline.provenance(cfg))
    pipeline.write_manifest(args.out_dir, {name: digest}, {"seed": cfg.seed, "config_sha256": cfg.digest()})
    print(f"wrote {len(data)} rows to {args.out_dir / name}")


def cmd_batch(args, cfg):
    reports = pipeline.batch(cfg, args.seeds, args.workers)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    digest = pipeline.write_json(args.out_dir / "batch_report.json",
                                 {"config_sha256": cfg.digest(), "runs": reports})
    pipeline.write_manifest(args.out_dir, {"batch_report.json": digest}, {"seeds": args.seeds})
    errs = [abs(r["ekf"]["final_scale_error"]) for r in reports]
    print(f"{len(reports)} runs; final |scale error| median {np.median(errs):.3g}, max {np.max(errs):.3g}")


COMMANDS = {"simulate": cmd_simulate, "calibrate": cmd_calibrate, "ekf": cmd_ekf,
            "check": cmd_check, "reproduce": cmd_reproduce, "batch": cmd_batch}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_mod.load(args.config, args.seed)
        COMMANDS[args.command](args, cfg)
    except ValidationError as exc:
        print(f"dvlnav: error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, RuntimeError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"dvlnav: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
