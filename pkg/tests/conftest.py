import numpy as np
import pytest

from relightcc.color import Domain, LinearImage


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def awb(pixels, mask=None):
    return LinearImage(np.asarray(pixels, dtype=np.float64), Domain.AWB, mask)


def const_image(value, h=4, w=4, domain=Domain.AWB):
    return LinearImage(np.broadcast_to(np.asarray(value, dtype=np.float64), (h, w, 3)).copy(), domain)


# ------------------------------------------------------------ acceptance log

_ACCEPTANCE: list[str] = []


@pytest.fixture
def criterion():
    """record(number, ok, detail) -> prints and keeps a PASS/FAIL line for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
