import sys
import numpy as np
import pytest

from semsim import scenario


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def load_bundled(name):
    return scenario.load(scenario.bundled_path(name))


def scn_text(body, **over):
    """Scenario text with a short default horizon."""
    base = {"sim.duration_s": 1.0, "graph.0.preset": "complete", "graph.0.n": 7}
    base.update(over)
    head = "\n".join(f"{k} = {v}" for k, v in base.items())
    return head + "\n" + body


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[num])
