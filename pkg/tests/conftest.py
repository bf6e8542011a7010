import pytest

from introsect.observer import PseudonymKey


@pytest.fixture(scope="session")
def key():
    return PseudonymKey.generate()


@pytest.fixture(scope="session")
def small_key():
    # 1024-bit keeps the property tests quick; the construction is unchanged
    return PseudonymKey.generate(1024)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
