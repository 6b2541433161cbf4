import numpy as np
import pytest

from anonmimo.model import SystemConfig


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_config():
    return SystemConfig(K=4, N_r=6, N_t=3, N_s=2, L=8)


ACCEPTANCE_LINES = []


def record_criterion(number: int, ok: bool, detail: str, soft: bool = False) -> str:
    tag = "PASS" if ok else ("WARN" if soft else "FAIL")
    line = f"[{tag}] criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
