import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from confair.dataio import TabularDataset  # noqa: E402


def make_dataset(X, y, s=None, groups=None, name="fixture"):
    """Dataset from a feature matrix; appends a sensitive column when ``groups`` is given."""
    X = np.asarray(X, dtype=float)
    if groups is not None:
        X = np.column_stack([X, np.asarray(groups, dtype=float)])
        s = X.shape[1] - 1
    return TabularDataset(X, np.asarray(y, dtype=float), s, (), (), name)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, filled by test_acceptance.py and printed at the end
VERDICTS = {}


def record(criterion: int, passed: bool, detail: str):
    # criteria checked per dataset keep every part; one failing part fails the line
    VERDICTS.setdefault(criterion, []).append((passed, detail))
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(VERDICTS):
        parts = VERDICTS[c]
        passed = all(p for p, _ in parts)
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {c}: {'PASS' if passed else 'FAIL'}  {detail}")
