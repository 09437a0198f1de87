import os

import pytest
from hypothesis import HealthCheck, settings

from airloc.synthworld import WorldConfig, generate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture(scope="session")
def frozen_world():
    """The default synthetic world (seed 2024, 150 references, 200 queries)."""
    return generate(WorldConfig())


SMALL = dict(seed=7, num_points=800, num_reference_images=40, num_queries=24)


@pytest.fixture(scope="session")
def small_world():
    return generate(WorldConfig(**SMALL))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
