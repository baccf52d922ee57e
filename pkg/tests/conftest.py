import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from roleflow.fixtures import case_studies, synthetic_suite, write_fixtures  # noqa: E402

_acceptance: dict[str, str] = {}


@pytest.fixture
def fixture_dir(tmp_path):
    """Case studies plus a small synthetic suite written as cassettes."""
    write_fixtures(case_studies() + synthetic_suite(12, seed=3), tmp_path)
    return tmp_path


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance[report.nodeid] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, outcome in sorted(_acceptance.items()):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{outcome} {name}")
