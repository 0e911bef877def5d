import re
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {
    1: "admissibility agrees with feasibility",
    2: "envelope exponent regression",
    3: "scheme and closed-form agreement with the reference solver",
    4: "partition count bound",
    5: "contraction and geometric decay",
    6: "embedding stability",
    7: "energy-estimate stability",
    8: "criticality",
    9: "CLI determinism and exit status",
    10: "uniqueness and decomposition invariance",
}
_OUTCOMES: dict = {}
_NOTES: dict = {}


def _criterion_of(nodeid):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", nodeid)
    return int(m.group(1)) if m else None


def pytest_runtest_logreport(report):
    k = _criterion_of(report.nodeid)
    if k is None:
        return
    if report.when == "call" or report.outcome != "passed":
        ok = report.outcome == "passed"
        _OUTCOMES[k] = _OUTCOMES.get(k, True) and ok


@pytest.fixture
def note(request):
    """Record a measured value for the acceptance summary line of the current criterion."""
    k = _criterion_of(request.node.nodeid)

    def add(text):
        _NOTES.setdefault(k, []).append(str(text))

    return add


def pytest_terminal_summary(terminalreporter):
    if not _OUTCOMES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        if k not in _OUTCOMES:
            status = "NOT RUN"
        else:
            status = "PASS" if _OUTCOMES[k] else "FAIL"
        notes = _NOTES.get(k, [])
        tail = f"  [{'; '.join(notes)}]" if notes else ""
        terminalreporter.write_line(f"criterion {k:2d} {status:7s} {_CRITERIA[k]}{tail}")
