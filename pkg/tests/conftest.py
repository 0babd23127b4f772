import os

import pytest
from hypothesis import HealthCheck, settings

from htgn import _accel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(params=["numba", "numpy"])
def backend(request):
    """Run a test once per kernel backend, restoring the original afterwards."""
    before = _accel.backend()
    if request.param == "numba" and not _accel.HAVE_NUMBA:
        pytest.skip("numba not importable")
    _accel.set_backend(request.param)
    yield request.param
    _accel.set_backend(before)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_htgn_acceptance", None)
    if not results:
        return
    from test_acceptance import NAMES

    terminalreporter.section("acceptance criteria")
    for n, name in NAMES.items():
        res = results.get(n)
        if res is None:
            terminalreporter.write_line(f"criterion {n} ({name}): NOT RUN")
        elif res == "crashed":
            terminalreporter.write_line(f"criterion {n} ({name}): FAIL - raised before completing")
        else:
            ok, detail = res
            terminalreporter.write_line(f"criterion {n} ({name}): {'PASS' if ok else 'FAIL'} - {detail}")
