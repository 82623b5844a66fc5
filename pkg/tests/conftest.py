import numpy as np
import pytest

from trajformer.geometry import BoxState

_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""

    def _report(number: int, name: str, passed: bool, detail: str = "") -> None:
        status = "PASS" if passed else "FAIL"
        _ACCEPTANCE.append(f"[{status}] criterion {number}: {name}" + (f" ({detail})" if detail else ""))

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def car(x=0.0, y=0.0, heading=0.0, t=0, **kw) -> BoxState:
    return BoxState(x, y, 0.8, kw.get("l", 4.5), kw.get("w", 1.9), kw.get("h", 1.6), heading, t=t, score=kw.get("score"))
