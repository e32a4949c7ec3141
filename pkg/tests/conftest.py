import pytest

from mirrornoise.devmodel import ProcessParams


@pytest.fixture
def process():
    return ProcessParams()


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS  # noqa: imported lazily; tests/ is on sys.path

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
