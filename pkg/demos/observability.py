"""Which states can the 3D and 2D runs estimate?

Splits each run into constant-attitude and turning stretches, checks how
many independent directions the constant-attitude stretches excite and
whether the turns tilt gravity enough in the body frame, and prints the
resulting verdict. The planar run only ever accelerates along the body
x axis, which leaves the DVL roll angle undetermined.

    python3 demos/observability.py
"""
import argparse
from dataclasses import replace

from dvlnav import config, pipeline


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    for plan in ("3d", "2d"):
        cfg = replace(config.load(seed=args.seed), plan_name=plan)
        sim = pipeline.simulate(cfg)
        segments, t1, t2, report = pipeline.observability(sim.imu, sim.dvl)
        print(f"===== {plan.upper()} run =====")
        print(pipeline.format_report(segments, t1, t2, report))
        print()


if __name__ == "__main__":
    main()
