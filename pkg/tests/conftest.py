import numpy as np
import pytest

from qdfr import proto

ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def quench():
    return proto.quench_protocol()


@pytest.fixture(scope="session")
def quench_b(quench):
    return proto.build_backward(quench)


@pytest.fixture(scope="session")
def equal_gap():
    return proto.quench_protocol(omegas=(2.0, 2.0))


@pytest.fixture
def rng():
    return np.random.default_rng(20231014)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
