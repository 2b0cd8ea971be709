import math
import re

import numpy as np
import pytest

LN2 = math.log(2)

_criteria = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)_(\w+)", report.nodeid)
    if m is None:
        return
    key = (int(m.group(1)), m.group(2))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _criteria[key] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_criteria.items()):
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {name:<40s} {status}")
