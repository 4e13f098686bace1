"""Write the model files and scenario files under scenarios/ from the built-in fleet."""
import argparse
import json
import math
from pathlib import Path

from floatsim import fleet

MODELS = {
    "point_mass": {}, "cube": {}, "block": {}, "pendulum": {}, "four_bar": {},
    "walker": {}, "quadruped": {}, "arm6": {},
}


def scenarios():
    closure = [float(x) for x in fleet.four_bar_closure(0.8)]
    stand = fleet.walker_standing_state(0.05)
    return {
        "drop_point_mass": dict(model="point_mass", duration=1.0,
                                initial_state={"base_position": [0, 0, 1.0]}),
        "drop_cube": dict(model="cube", duration=1.5,
                          initial_state={"base_position": [0, 0, 0.5], "base_rpy": [0.2, 0.1, 0.0],
                                         "base_angular_velocity": [0.0, 1.0, 0.5]}),
        "resting_cube": dict(model="cube", duration=5.0,
                             initial_state={"base_position": [0, 0, 0.05]}),
        "block_push": dict(model="block", duration=4.0,
                           initial_state={"base_position": [0, 0, 0.05]},
                           external_force={"table": {"t": [0.0, 4.0],
                                                     "values": [[0, 0, 0, 0, 0, 0],
                                                                [1.2 * 0.5 * 9.81, 0, 0, 0, 0, 0]]}}),
        "pendulum": dict(model="pendulum", duration=5.0, ground=False,
                         initial_state={"joint_positions": [0.05]},
                         analytic_reference={"type": "pendulum", "length": 1.0}),
        "four_bar": dict(model="four_bar", duration=5.0, ground=False,
                         initial_state={"joint_positions": closure}),
        "walker_drop": dict(model="walker", duration=2.0,
                            initial_state={"base_position": stand.base_position.tolist(),
                                           "joint_positions": stand.joint_positions.tolist()}),
        "quadruped_bench": dict(model="quadruped", duration=1.0,
                                initial_state={"base_position": [0, 0, 0.42]}),
        "arm6_drop": dict(model="arm6", duration=1.0,
                          initial_state={"base_position": [0, 0, 0.6],
                                         "joint_positions": [0.1, -0.3, 0.5, 0.2, -0.4, 0.3]},
                          torque={"constant": [0.0, 0.5, -0.2, 0.0, 0.1, 0.0]}),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "scenarios"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    (out / "models").mkdir(parents=True, exist_ok=True)
    for name, kw in MODELS.items():
        urdf, side = fleet.BUILDERS[name](**kw)
        (out / "models" / f"{name}.urdf").write_text(urdf)
        (out / "models" / f"{name}.json").write_text(side + "\n")
    for name, sc in scenarios().items():
        model = sc.pop("model")
        data = {"urdf": f"models/{model}.urdf", "sidecar": f"models/{model}.json",
                "dt": 1e-3, "output_dir": f"../out/{name}"}
        data.update(sc)
        (out / f"{name}.json").write_text(json.dumps(data, indent=2) + "\n")
        print("wrote", out / f"{name}.json")


if __name__ == "__main__":
    main()
