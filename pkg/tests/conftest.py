import os
import warnings

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=50, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        if "criterion" in props:
            _CRITERIA.append((props["criterion"], props.get("title", ""), report.outcome, props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for num, title, outcome, detail in sorted(_CRITERIA):
        status = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {num:2d} {status}  {title}"
        if detail:
            line += f"  [{detail}]"
        tr.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_step_size_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="step size h=", category=RuntimeWarning)
        yield
