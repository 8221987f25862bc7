import numpy as np
import pytest

from symradio.model import ChannelSet, NetworkInstance, ScheduleFrame
from symradio.scenarios import Geometry, build_instance, tsr_schedule


def scalar_instance(C=0.5):
    """N=1, I=1, J=2 with unit channels; slot 0 harvests, slot 1 transmits."""
    inst = NetworkInstance(ChannelSet(h=[[1.0]], g=[1.0]), rate_targets=[C], spreading_factor=10,
                           frame_length=10.0, efficiency=0.8, receiver_noise=1e-3, slot_count=2)
    return inst, ScheduleFrame(((1,),), 2)


def seeded_instance(N=4, I=4, C=0.05, seed=0):
    inst = build_instance(Geometry(), N, I, C, seed)
    return inst, tsr_schedule(I)


@pytest.fixture
def scalar():
    return scalar_instance()


@pytest.fixture
def seeded():
    return seeded_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_psd(rng, n, rank=None):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return A @ A.conj().T


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion, printed after the run

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    n = marker.args[0]
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    prev = _CRITERIA.get(n)
    if prev is not None and prev[0] == "FAIL":
        status = "FAIL"
    details = detail if prev is None else "; ".join(d for d in (prev[1], detail) if d)
    _CRITERIA[n] = (status, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        status, detail = _CRITERIA[n]
        terminalreporter.write_line(f"criterion {n}: {status}" + (f" ({detail})" if detail else ""))
