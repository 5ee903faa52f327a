import pytest

# lines reported by tests/test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def gasket_tree():
    from fractalwalk import build, builtin
    return build(builtin("gasket2"), max_level=4)


@pytest.fixture(scope="session")
def interval_tree():
    from fractalwalk import build, builtin
    return build(builtin("interval"), max_level=8)
