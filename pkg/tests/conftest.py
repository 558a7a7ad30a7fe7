import pytest

from rucop.contact_model import reroute_example

S, A, B, C, D, E = range(6)


@pytest.fixture
def net():
    return reroute_example()


@pytest.fixture
def net_no_detour():
    return reroute_example(include_detour=False)


# one line per acceptance criterion, printed after the run
CRITERIA: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
