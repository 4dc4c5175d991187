import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import acceptance_report

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    if not acceptance_report.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(acceptance_report.RESULTS):
        terminalreporter.write_line(acceptance_report.format_line(criterion))
