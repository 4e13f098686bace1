import sys
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from floatsim import fleet

sys.path.insert(0, str(Path(__file__).parent))

hypothesis.settings.register_profile("default", deadline=None, max_examples=40)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]
SCENARIOS = ROOT / "scenarios"

_models = {}


def model(name, **kw):
    key = (name, tuple(sorted(kw.items())))
    if key not in _models:
        _models[key] = fleet.build(name, **kw)
    return _models[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["point_mass", "cube", "arm6", "four_bar", "walker", "quadruped", "pendulum"])
def fleet_model(request):
    return model(request.param)


# acceptance criteria report: one line per criterion, printed after the run
ACCEPTANCE = {}


def record(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
