import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from weakhj import CouplingLaw, SystemSpec, make_grid, quadratic

settings.register_profile(
    "weakhj",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("weakhj")


@pytest.fixture
def grid64():
    return make_grid(64)


@pytest.fixture
def grid128():
    return make_grid(128)


@pytest.fixture
def weak_linear_spec():
    """Two equations, cross ratios 0.4, first potential sin x."""
    def build(n=128):
        law = CouplingLaw.linear([[1.0, -0.4], [-0.4, 1.0]], monotone=True)
        return SystemSpec((quadratic(np.sin), quadratic()), law, make_grid(n), "weak linear")
    return build


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report_criterion(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    def report(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
