import numpy as np
import pytest

from beamrl.codebook import PanelConfig, build_codebook, correlation_matrix
from beamrl.config import desk_preset


@pytest.fixture(scope="session")
def desk_codebook():
    panels = [PanelConfig(8, 0.5, off, 8.0, 10.0, 65.0) for off in (-30.0, 0.0, 30.0)]
    return build_codebook(panels, 8)


@pytest.fixture(scope="session")
def desk_rho(desk_codebook):
    return correlation_matrix(desk_codebook)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def short_desk():
    def make(**kw):
        base = dict(duration_s=2.0)
        base.update(kw)
        return desk_preset(**base)
    return make


# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[cid]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {cid}: {detail}")
