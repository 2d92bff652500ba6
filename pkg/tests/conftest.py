import functools

import numpy as np
import pytest
from hypothesis import settings

from regimedefault import hjb, market

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

# (criterion number, verdict line) filled in by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, list[str]] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.setdefault(number, []).append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        for line in ACCEPTANCE_LINES[k]:
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def solved(h1=0.1, h2=0.1, steps=2000, a12=0.7, a21=0.1, R=2.0):
    spec = market.table1(h=(h1, h2), a12=a12, a21=a21, maturity=R, horizon=R)
    return spec, hjb.solve_log(spec, steps=steps)


@pytest.fixture(scope="session")
def table1_solution():
    return solved(0.1, 0.3)


def random_two_regime(rng: np.random.Generator, **fixed) -> market.MarketSpec:
    """A random valid two-regime homogeneous spec (gen_p = gen_q, h_hist = h)."""
    kw = dict(
        a12=rng.uniform(0.05, 2.0), a21=rng.uniform(0.05, 2.0),
        r=tuple(rng.uniform(0.0, 0.06, 2)), mu=tuple(rng.uniform(-0.05, 0.12, 2)),
        sigma=tuple(rng.uniform(0.1, 0.4, 2)), h=tuple(rng.uniform(0.01, 0.6, 2)),
        loss=tuple(rng.uniform(0.1, 1.0, 2)),
    )
    R = rng.uniform(0.5, 4.0)
    kw.update(maturity=R, horizon=R)
    kw.update(fixed)
    return market.two_regime(**kw)
