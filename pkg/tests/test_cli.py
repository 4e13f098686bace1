import json
import math

import numpy as np
import pytest

from floatsim import cli
from floatsim.qp import QpError, QpProblem

from broken_models import corpus
from conftest import SCENARIOS

MODELS = SCENARIOS / "models"


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), [l.split(",") for l in lines[1:]]


def scenario_file(tmp_path, **data):
    data.setdefault("urdf", str(MODELS / "cube.urdf"))
    data.setdefault("sidecar", str(MODELS / "cube.json"))
    p = tmp_path / "sc.json"
    p.write_text(json.dumps(data))
    return p


def test_run_drop_cube(tmp_path):
    out = tmp_path / "o"
    assert run_cli("run", SCENARIOS / "drop_cube.json", "--duration", 0.2, "--out-dir", out) == 0
    assert sorted(p.name for p in out.iterdir()) == ["forces.csv", "summary.json", "trajectory.csv"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["real_time_factor"] > 0
    assert cli._finite(summary)
    for key in ("final_state", "peak_contact_force", "max_loop_drift", "energy", "wall_time"):
        assert key in summary


def test_csv_schema_and_rows(tmp_path):
    out = tmp_path / "o"
    assert run_cli("run", SCENARIOS / "walker_drop.json", "--duration", 0.4, "--out-dir", out) == 0
    head, rows = read_csv(out / "trajectory.csv")
    assert head[:8] == ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"]
    assert len(head) == 1 + 7 + 3 + 6 + 3
    assert len(rows) == 400 + 1 and float(rows[0][0]) == 0.0
    fhead, frows = read_csv(out / "forces.csv")
    assert fhead[:5] == ["t", "c0_active", "c0_fx", "c0_fy", "c0_fz"]
    assert fhead[-4:] == ["loop0_fx", "loop0_fy", "loop0_fz", "impact"]
    impacts = [r for r in frows if r[-1] == "1"]
    summary = json.loads((out / "summary.json").read_text())
    assert len(impacts) == summary["impacts"] >= 1
    assert len(frows) == len(rows) + len(impacts)


def test_log_cadence_rows(tmp_path):
    out = tmp_path / "o"
    sc = scenario_file(tmp_path, duration=0.05, log_every=5,
                       initial_state={"base_position": [0, 0, 1.0]})
    assert run_cli("run", sc, "--out-dir", out) == 0
    _, rows = read_csv(out / "trajectory.csv")
    assert len(rows) == 50 // 5 + 1


def test_bit_identical_outputs(tmp_path):
    for d in ("a", "b"):
        assert run_cli("run", SCENARIOS / "walker_drop.json", "--duration", 0.3,
                       "--out-dir", tmp_path / d) == 0
    for f in ("trajectory.csv", "forces.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_urdf(tmp_path, capsys):
    missing = tmp_path / "nowhere" / "robot.urdf"
    sc = scenario_file(tmp_path, urdf=str(missing))
    assert run_cli("run", sc) == 1
    assert str(missing) in capsys.readouterr().err


@pytest.mark.parametrize("text", ["{not json", "[1, 2]", '{"sidecar": "x.json"}'])
def test_malformed_scenario(tmp_path, text):
    p = tmp_path / "bad.json"
    p.write_text(text)
    assert run_cli("run", p) == 1


def test_unknown_key(tmp_path, capsys):
    assert run_cli("run", scenario_file(tmp_path, dtt=0.001)) == 1
    assert "dtt" in capsys.readouterr().err


def test_bad_initial_state(tmp_path, capsys):
    assert run_cli("run", scenario_file(tmp_path, initial_state={"joint_positions": [0.1]})) == 1
    assert "joint_positions" in capsys.readouterr().err


def test_simulation_failure_dumps_qp(tmp_path, monkeypatch, capsys):
    def boom(self, state, t=0.0):
        raise QpError("contact QP failed: max_iter", QpProblem(np.eye(2), [1.0, 2.0]))

    monkeypatch.setattr(cli.Simulator, "step", boom)
    out = tmp_path / "o"
    assert run_cli("run", SCENARIOS / "drop_cube.json", "--out-dir", out) == 2
    err = capsys.readouterr().err
    assert "step 0" in err and "qp_dump.json" in err
    dump = json.loads((out / "qp_dump.json").read_text())
    assert dump["gradient"] == [1.0, 2.0]


def test_pendulum_analytic_reference(tmp_path):
    out = tmp_path / "o"
    assert run_cli("run", SCENARIOS / "pendulum.json", "--out-dir", out) == 0
    ref = json.loads((out / "summary.json").read_text())["analytic_reference"]
    # 5 s at theta0 = 0.05: first-order integration and the amplitude-dependent
    # period together give about 7e-5 rad
    assert 0 < ref["max_angle_error"] < 2e-4
    assert ref["max_position_error"] <= ref["max_angle_error"]


def test_pendulum_reference_formula():
    t = np.array([0.0, math.pi / 2])
    np.testing.assert_allclose(cli.pendulum_reference(t, 0.1, 9.81, 9.81), [0.1, 0.0], atol=1e-15)


def test_overrides(tmp_path):
    out = tmp_path / "o"
    assert run_cli("run", SCENARIOS / "drop_cube.json", "--dt", 0.002, "--duration", 0.02,
                   "--solver", "active_set", "--out-dir", out) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["dt"] == 0.002 and summary["steps"] == 10


# ---------------------------------------------------------------------------
# validate

def test_validate_ok(capsys):
    assert run_cli("validate", MODELS / "cube.urdf", MODELS / "cube.json") == 0
    assert "OK" in capsys.readouterr().out


@pytest.mark.parametrize("name, urdf, sidecar, code", corpus(), ids=[c[0] for c in corpus()])
def test_validate_corpus(tmp_path, capsys, name, urdf, sidecar, code):
    u, s = tmp_path / "m.urdf", tmp_path / "m.json"
    u.write_text(urdf)
    s.write_text(sidecar)
    assert run_cli("validate", u, s) == 1
    assert code in capsys.readouterr().out


def test_validate_missing_file(tmp_path):
    assert run_cli("validate", tmp_path / "none.urdf") == 1


# ---------------------------------------------------------------------------
# bench

def test_bench_repeats(tmp_path, capsys):
    assert run_cli("bench", SCENARIOS / "quadruped_bench.json", "--repeats", 5,
                   "--duration", 0.02, "--out-dir", tmp_path) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["repeats"] == 5 and len(report["samples_wall_time"]) == 5
    assert report["dofs"] == 12 and report["real_time_factor"] > 0
    assert report["p95_step_time"] >= report["median_step_time"] > 0
    assert (tmp_path / "bench.json").exists()


def test_bench_zero_duration(capsys):
    assert run_cli("bench", SCENARIOS / "quadruped_bench.json", "--duration", 0) == 1
    assert "duration >= dt" in capsys.readouterr().err


def test_log_level_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SIM_LOG_LEVEL", "debug")
    assert run_cli("run", SCENARIOS / "drop_cube.json", "--duration", 0.01, "--out-dir", tmp_path) == 0
