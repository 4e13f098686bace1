"""Pendulum energy drift against the step size (first-order integrator check)."""
import argparse

import numpy as np

from floatsim import fleet, kindyn
from floatsim.model import SimState
from floatsim.sim import SimConfig, run


def drift_rate(dt, theta0, duration):
    m = fleet.build("pendulum")
    s = SimState.zeros(1)
    s.joint_positions = np.array([theta0])
    e0 = kindyn.compute_cache(m, s).potential_energy
    logs = run(m, s, SimConfig(dt=dt, duration=duration, ground=False))
    return max(abs(e.energy - e0) for e in logs) / duration


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--theta0", type=float, default=0.5)
    ap.add_argument("--duration", type=float, default=5.0)
    ap.add_argument("--dts", type=float, nargs="+", default=[4e-3, 2e-3, 1e-3])
    args = ap.parse_args()
    prev = None
    for dt in args.dts:
        r = drift_rate(dt, args.theta0, args.duration)
        ratio = f"  ratio {prev / r:.3f}" if prev else ""
        print(f"dt={dt:.1e}  drift rate {r:.4e} J/s{ratio}")
        prev = r


if __name__ == "__main__":
    main()
