import numpy as np
import pytest

from roughflow.rough_core import TimeGrid, lift_linear, lift_smooth, refine_grid


def loglog_slope(h, err) -> float:
    """Least-squares slope of log(err) against log(h)."""
    return float(np.polyfit(np.log(np.asarray(h, float)), np.log(np.asarray(err, float)), 1)[0])


def smooth_lift(func, T, n_steps, refinement=64, alpha=0.5):
    """Lift ``func(t) -> (len(t), d)`` sampled on a refined uniform grid."""
    coarse = TimeGrid.uniform(T, n_steps)
    fine = refine_grid(coarse, refinement)
    return lift_smooth(fine, func(fine), coarse, alpha)


@pytest.fixture
def unit_linear():
    def make(n_steps, T=1.0, velocity=(1.0,)):
        return lift_linear(TimeGrid.uniform(T, n_steps), list(velocity))
    return make


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
