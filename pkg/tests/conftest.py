from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from linkaudit.data import make_schema
from linkaudit.linkage import scheme_from_tokens
from linkaudit.simulator import SimConfig, generate

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

DEFAULT_TOKENS = ["age_bin:10", "region_level:1", "gender"]


@pytest.fixture(scope="session")
def scheme():
    return scheme_from_tokens(DEFAULT_TOKENS)


@pytest.fixture(scope="session")
def small():
    return generate(SimConfig(n_records=400, seed=3))


@pytest.fixture(scope="session")
def medium():
    return generate(SimConfig(n_records=1000, seed=5))


@pytest.fixture(scope="session")
def full():
    return generate(SimConfig())


@pytest.fixture
def qi_schema():
    return make_schema([("age", "numeric", "quasi-identifier"),
                        ("gender", "categorical", "quasi-identifier"),
                        ("region", "categorical", "quasi-identifier")])


def rows_close(a, b, tol=1e-12):
    return np.allclose(np.asarray(a, float), np.asarray(b, float), atol=tol, rtol=0)


# -- acceptance report ----------------------------------------------------------------

_LINES = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record a one-line verdict for an acceptance criterion, then assert it."""
    lines = request.config.stash.setdefault(_LINES, {})

    def record(number: int, ok: bool, detail: str) -> None:
        lines[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(lines[number])
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
