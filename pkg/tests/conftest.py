import os

import numpy as np
import pytest

from mdsttl.scenario import RequestTrace


def pytest_collection_modifyitems(config, items):
    if os.environ.get("MDSTTL_FULL_SCALE") == "1":
        return
    skip = pytest.mark.skip(reason="full-scale run; set MDSTTL_FULL_SCALE=1")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)


def make_trace(times, files, coverage, num_files):
    """Hand-built trace; ``coverage`` rows are lists of 0-based SBS indices or bool rows."""
    cov = coverage
    if not isinstance(cov, np.ndarray):
        width = max(max(row) for row in coverage if len(row)) + 1
        cov = np.zeros((len(times), width), dtype=bool)
        for i, row in enumerate(coverage):
            cov[i, list(row)] = True
    return RequestTrace(np.asarray(times, float), np.asarray(files), cov, num_files)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then assert it."""
    def record(number, name, ok, detail):
        ACCEPTANCE_LINES.append(f"criterion {number} [{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
