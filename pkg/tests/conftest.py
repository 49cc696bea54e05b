import numpy as np
import pytest

from ethlab.models import build_hamiltonian, default_spec
from ethlab.spectral import diagonalize, diagonalize_bath

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_model():
    """Default chain with one system spin and five bath spins (d = 64)."""
    h = build_hamiltonian(default_spec(1, 5))
    return h, diagonalize(h), diagonalize_bath(h)


@pytest.fixture(scope="session")
def mid_model():
    """Default 1+7 chain (d = 256)."""
    h = build_hamiltonian(default_spec(1, 7))
    return h, diagonalize(h), diagonalize_bath(h)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
