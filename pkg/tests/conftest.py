import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from flyvox._backend import available_backends

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

BACKENDS = available_backends()


@pytest.fixture(params=BACKENDS, ids=[m.NAME for m in BACKENDS])
def kernels(request):
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance summary -------------------------------------------------------

ACCEPTANCE: dict[int, tuple[str, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        status, line = ACCEPTANCE[k]
        terminalreporter.write_line(f"[{status}] criterion {k:2d}: {line}")


@pytest.fixture
def criterion():
    """``criterion(k, ok, line)`` records and prints one acceptance line."""

    def record(k: int, ok: bool, line: str, status: str | None = None):
        status = status or ("PASS" if ok else "FAIL")
        ACCEPTANCE[k] = (status, line)
        print(f"[{status}] criterion {k:2d}: {line}")
        return ok

    return record
