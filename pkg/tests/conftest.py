import numpy as np
import pytest

from pistonsim.geometry import Container


@pytest.fixture(scope="session")
def square():
    return Container.rectangle(1.0)


@pytest.fixture(scope="session")
def stadium():
    return Container.stadium(1.0)


@pytest.fixture(scope="session")
def cube():
    return Container.box(1.0, 1.0)


@pytest.fixture(scope="session")
def domes():
    return Container.box_with_domes()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
