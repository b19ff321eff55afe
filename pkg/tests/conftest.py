import numpy as np
import pytest

from statecc import analytics
from statecc.channel import DiscreteStateChannel, FadingModel


@pytest.fixture
def two_state():
    return DiscreteStateChannel(("A", "B"), np.array([0.5, 0.5]), np.array([[2.0, 1.0], [1.0, 2.0]]))


@pytest.fixture
def fig1_model():
    return FadingModel(K=3, P=4.0)


@pytest.fixture(scope="session")
def fig1_solutions():
    """Calibrated waterfilling for K=3, P=4 (2e5 samples), keyed by (scheme, policy, t)."""
    model = FadingModel(K=3, P=4.0)
    out = {}
    for scheme in ("state-adaptive", "blockwise"):
        for policy in ("opportunistic", "time-shared"):
            for t in range(3):
                out[scheme, policy, t] = analytics.calibrate_lambda(
                    model, t, 200_000, scheme=scheme, policy=policy, seed=0
                )
    return out


def single_state(rates):
    rates = np.atleast_2d(np.asarray(rates, dtype=float))
    return DiscreteStateChannel(("s0",), np.array([1.0]), rates)


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[int, tuple[bool, str, list[str]]] = {}


def record_criterion(number: int, title: str, checks: list[tuple[bool, str]]) -> bool:
    ok = all(c for c, _ in checks)
    ACCEPTANCE[number] = (ok, title, [f"{'ok  ' if c else 'MISS'} {d}" for c, d in checks])
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, title, lines = ACCEPTANCE[n]
        tr.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
        for line in lines:
            tr.write_line(f"    {line}")
