"""Drop a model on the ground and report touchdown, impacts and penetration."""
import argparse
import math

import numpy as np

from floatsim import cli
from floatsim.sim import run


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("scenario", nargs="?", default="scenarios/drop_point_mass.json")
    ap.add_argument("--dt", type=float, default=None)
    args = ap.parse_args()
    overrides = {"dt": args.dt} if args.dt else None
    m, s, cfg = cli.prepare(cli.load_scenario(args.scenario), overrides)
    logs = run(m, s, cfg)
    impacts = [e for e in logs if e.impact]
    touch = next((e.time for e in logs if e.min_gap <= 1e-6), None)
    print(f"model {m.name}: {len(logs)} steps, dt {cfg.dt:g}")
    if touch is not None:
        h0 = logs[0].min_gap
        print(f"first touchdown at t={touch:.4f} s (free fall from the lowest point: "
              f"{math.sqrt(2 * max(h0, 0.0) / 9.81):.4f} s)")
    print(f"impact steps: {len(impacts)}")
    for e in impacts[:5]:
        print(f"  t={e.time:.4f}  total impulse {np.abs(e.impulses).sum(axis=0)}  "
              f"post-impact max |v_n| {e.normal_velocity:.2e}")
    print(f"deepest penetration {min(e.min_gap for e in logs):.3e} m")


if __name__ == "__main__":
    main()
