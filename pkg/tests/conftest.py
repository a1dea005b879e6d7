from pathlib import Path

import pytest

from pertsmp import corpus

DATA = Path(__file__).parent / "data"

# lines appended by test_acceptance, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def geometric():
    return corpus.load("geometric")


@pytest.fixture(scope="session")
def quasi():
    return corpus.load("quasi")


@pytest.fixture(scope="session")
def pseudo3():
    return corpus.load("pseudo3")


@pytest.fixture(scope="session")
def quasi3():
    return corpus.load("quasi3")


@pytest.fixture(scope="session")
def cycle4():
    return corpus.load("cycle4")


@pytest.fixture(scope="session")
def bundled():
    return corpus.load_all()


@pytest.fixture(scope="session")
def random_kernels():
    return corpus.random_corpus()


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
