import numpy as np
import pytest

ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, d, scale=1.0, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = scale * np.exp(rng.uniform(0.0, np.log(cond), d))
    return (q * lam) @ q.T
