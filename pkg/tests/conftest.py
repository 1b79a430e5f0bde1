import functools
import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pmp_sweep.fbsm import SweepConfig, solve  # noqa: E402
from pmp_sweep.registry import registry_get  # noqa: E402

# problems that converge with default settings, with their overrides
CONVERGED_FIXTURES = {
    "linear_growth": {},
    "linear_growth_saturated": {},
    "double_integrator": {},
    "lqr_scalar": {},
    "isoperimetric": {},
    "harvest": {},
    "tracking_saturated": {},
    "second_order": {"T": 1.0},
}

PROBLEMS_DIR = os.path.join(os.path.dirname(os.path.dirname(__file__)), "problems")


@functools.lru_cache(maxsize=None)
def _solve(name):
    p = registry_get(name, **CONVERGED_FIXTURES[name])
    return p, solve(p, SweepConfig())


@pytest.fixture(scope="session")
def solved():
    """``solved(name) -> (problem, SweepResult)``, cached across the session."""
    return _solve


@pytest.fixture(scope="session")
def problems_dir():
    return PROBLEMS_DIR


# -- acceptance summary ---------------------------------------------------
# tests marked ``criterion(k)`` contribute to one pass/fail line per k,
# printed after the run; details come from ``request.node.user_properties``

_ACCEPTANCE: dict = {}
_RUNTIME_LIMIT = 60.0


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")
    config._acceptance_start = time.perf_counter()


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    if report.when == "call" or report.failed:
        entry = _ACCEPTANCE.setdefault(marker, {"ok": True, "details": []})
        entry["ok"] &= report.passed
        entry["details"] += [v for k, v in report.user_properties if k == "detail"]
        if report.failed and report.when != "call":
            entry["details"].append(f"{report.when} failed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        outcome.get_result()._criterion = mark.args[0]


def pytest_collection_finish(session):
    files = {item.path.name for item in session.items}
    session.config._acceptance_full_run = "test_acceptance.py" in files and len(files) > 1


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - session.config._acceptance_start
    session.config._acceptance_elapsed = elapsed
    if _ACCEPTANCE and getattr(session.config, "_acceptance_full_run", False):
        ok = elapsed <= _RUNTIME_LIMIT
        entry = _ACCEPTANCE.setdefault(6, {"ok": True, "details": []})
        entry["ok"] &= ok
        entry["details"].append(f"full suite {elapsed:.1f} s (limit {_RUNTIME_LIMIT:.0f} s)")
        if not ok and session.exitstatus == 0:
            session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[k]
        status = "PASS" if entry["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {k}: {status}  " + "; ".join(entry["details"]))
