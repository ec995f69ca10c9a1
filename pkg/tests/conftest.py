import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

#: criterion number -> (passed, detail), filled by the acceptance tests
CRITERIA = {}


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def small_example():
    from ddlshaped.cli import bundled_example

    return bundled_example()
