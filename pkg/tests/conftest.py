import numpy as np
import pytest

from twodpsm.core import Quad


def twin_quad(points, outcomes=None):
    """Quad whose four groups share the covariate block ``points`` (exact twins)."""
    x = np.asarray(points, dtype=float)
    n, k = x.shape
    outcomes = np.zeros((4, n)) if outcomes is None else np.asarray(outcomes, dtype=float)
    groups = {}
    for g, name in enumerate(("bt", "bc", "at", "ac")):
        groups[name] = (np.arange(n) + 100 * g, x, outcomes[g])
    return Quad.from_arrays(k, **groups)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# Acceptance criteria record a verdict here; the terminal summary prints them.
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")
