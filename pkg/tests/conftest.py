import pytest

from robinflux.geometry import build_ball_domain, build_prefractal_domain, surface_measure


@pytest.fixture(scope="session")
def ball25():
    d = build_ball_domain(4.0, 0.25)
    return d, surface_measure(d)


@pytest.fixture(scope="session")
def ball125():
    d = build_ball_domain(4.0, 0.125)
    return d, surface_measure(d)


@pytest.fixture(scope="session")
def cube():
    d = build_prefractal_domain(10.0, 0, 0.5)
    return d, surface_measure(d)


@pytest.fixture(scope="session")
def pf1():
    d = build_prefractal_domain(10.0, 1, 10 / 3 / 4)
    return d, surface_measure(d)


@pytest.fixture(scope="session")
def pf2():
    d = build_prefractal_domain(10.0, 2, 10 / 9 / 4)
    return d, surface_measure(d)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
