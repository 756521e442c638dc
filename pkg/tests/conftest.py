import numpy as np
import pytest

from crowdflux.flow_io import FlowField

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d} {name}" + (f": {detail}" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_flow(rng, width=16, height=12, scale=3.0) -> FlowField:
    u = (rng.standard_normal((height, width)) * scale).astype(np.float32)
    v = (rng.standard_normal((height, width)) * scale).astype(np.float32)
    return FlowField(u, v)
