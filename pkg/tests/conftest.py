import pytest

from wncs.model import ContinuousPlant, SystemConfig

ACCEPTANCE_LINES: list[str] = []


def general_config() -> SystemConfig:
    return SystemConfig(
        (ContinuousPlant(6.5137), ContinuousPlant(5.8265), ContinuousPlant(8.8964)),
        (0.7690, 0.7277, 0.2846), (5, 5, 5), 0.01)


def perfect_config(h: int = 3) -> SystemConfig:
    a = (3.7482, 8.7512, 7.7711, 8.5482, 6.8823, 5.6830)
    return SystemConfig(tuple(ContinuousPlant(v) for v in a), (1.0,) * 6, (h,) * 6, 0.0114)


def mixed_period_config(a: float = 0.1) -> SystemConfig:
    return SystemConfig((ContinuousPlant(a),) * 3, (1.0, 1.0, 1.0), (1, 2, 3), 0.01)


@pytest.fixture
def general():
    return general_config()


@pytest.fixture
def perfect():
    return perfect_config()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
