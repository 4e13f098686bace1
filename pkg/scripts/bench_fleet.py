"""Time every scenario under scenarios/ and print the real-time factor."""
import argparse
from pathlib import Path

from floatsim import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dir", default="scenarios")
    ap.add_argument("--repeats", type=int, default=1)
    ap.add_argument("--duration", type=float, default=1.0)
    args = ap.parse_args()
    print(f"{'scenario':<18}{'dofs':>5}{'ms/step':>10}{'p95':>10}{'RTF':>8}")
    for path in sorted(Path(args.dir).glob("*.json")):
        r = cli.bench(cli.load_scenario(path), args.repeats, {"duration": args.duration})
        print(f"{r['scenario']:<18}{r['dofs']:>5}{1e3 * r['median_step_time']:>10.3f}"
              f"{1e3 * r['p95_step_time']:>10.3f}{r['real_time_factor']:>8.2f}")


if __name__ == "__main__":
    main()
