import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion label -> (passed, check lines), filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for label in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        passed, lines = ACCEPTANCE[label]
        tr.write_line(f"{'PASS' if passed else 'FAIL'} criterion {label}")
        for line in lines:
            tr.write_line(f"    {line}")
