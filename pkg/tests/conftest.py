import warnings

import numpy as np
import pytest

from maplessplan.grid import BevGrid, GridSpec
from maplessplan.online_map import OnlineMap

warnings.filterwarnings("ignore", message=".*TBB.*")

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def bank():
    from maplessplan.trajectory import default_bank

    return default_bank()


@pytest.fixture(scope="session")
def shipped_weights():
    from maplessplan.costs import default_config

    return default_config()[0]


def uniform_map(spec: GridSpec, *, drivable=1.0, inter=0.0, mu=0.0, sigma=0.2, loc=0.0, conc=50.0,
                route=None) -> OnlineMap:
    """Map whose layers are constants (arrays are accepted too)."""
    g = lambda v: BevGrid(spec, np.broadcast_to(np.asarray(v, dtype=float), spec.shape).copy())  # noqa: E731
    return OnlineMap(g(drivable), g(inter), g(mu), g(sigma), g(loc), g(conc),
                     None if route is None else g(route))
