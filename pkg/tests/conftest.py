import json
from pathlib import Path

import hypothesis
import pytest

from freqcoord import netmodel as nm
from freqcoord import sim

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.load_profile("default")

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def oracle():
    return json.loads((DATA / "oracles.json").read_text())


@pytest.fixture(scope="session")
def case():
    return nm.read_case(nm.default_case_path())


@pytest.fixture(scope="session")
def grid(case):
    return sim.build_grid(case)


@pytest.fixture(scope="session")
def grid_no_farm(case):
    from dataclasses import replace
    return sim.build_grid(replace(case, windfarm={}))


@pytest.fixture(scope="session")
def step_traces(grid):
    """10% load step at bus 8, t = 1 s, 60 s horizon, for the uncoordinated modes."""
    out = {}
    for mode in ("none", "inertial"):
        cfg = sim.SimConfig(t_end=60.0, events=(nm.LoadStep(8, 0.1, 1.0),), controller_mode=mode)
        out[mode] = sim.run_scenario(grid, cfg)
    return out


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    def record(label: str, passed: bool, detail: str):
        line = f"[{'PASS' if passed else 'FAIL'}] {label}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
