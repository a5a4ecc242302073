import numpy as np
import pytest

from clicklab.oracles import SmallInstance

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tdi_fixture():
    return SmallInstance.three_doc((1.0, 0.9, 0.8), 0.1, 1.0)


@pytest.fixture
def pi_fixture():
    return SmallInstance.three_doc((1.0, 0.9, 0.3), 0.5, 1.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
