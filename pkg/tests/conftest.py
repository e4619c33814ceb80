import math
import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from roadgen.camgeom import Intrinsics, make_rig

settings.register_profile(
    "default", deadline=None, suppress_health_check=[HealthCheck.too_slow], derandomize=True
)
settings.register_profile("thorough", deadline=None, max_examples=1000)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_CRITERIA_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA_KEY] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    results = item.config.stash[_CRITERIA_KEY]
    prev = results.get(number, (title, True))[1]
    if report.when == "call" or report.failed:
        results[number] = (title, prev and report.passed)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash[_CRITERIA_KEY]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, ok = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def rig():
    """A 320x180 roadside camera 6 m up, pitched 12 degrees down."""
    return make_rig(Intrinsics(240.0, 240.0, 160.0, 90.0), 6.0, math.radians(12.0), image_size=(320, 180))


@pytest.fixture
def wide_rig():
    return make_rig(
        Intrinsics(1000.0, 1000.0, 768.0, 432.0), 5.5, math.radians(10.0), math.radians(3.0), math.radians(-1.0)
    )
