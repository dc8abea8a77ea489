from dataclasses import dataclass
import time

import numpy as np
import pytest

from gevrey_renorm import mcf
from gevrey_renorm.conjugacy import compose_chain, normalize_translation, renorm_chain
from gevrey_renorm.fourier import GevreyParams
from gevrey_renorm.renorm import RenormParams, run, synthetic_field


@dataclass
class GoldenRun:
    freq: object
    omega: np.ndarray
    X0: object
    v: object
    params: object
    states: list
    elims: list
    sd: object
    gs: list
    h: object
    seconds: float


@pytest.fixture(scope="session")
def golden_run():
    """Golden frequency, s = 2, K = 16, ||X0 - omega||'_0 = 1e-4, five steps.

    The schedule's eps_n are far below double precision here, so the run
    uses strict=False; the acceptance suite reports that separately.
    """
    t0 = time.perf_counter()
    freq = mcf.Frequency.preset("golden")
    omega = freq.omega.astype(float)
    X0, v = synthetic_field(omega, 1e-4, 16, seed=0)
    params = RenormParams(GevreyParams.with_defaults(2.0, 1.0, 16), strict=False)
    states, elims, sd = run(X0, freq, params, 5)
    gs = renorm_chain(elims, sd.steps)
    h = normalize_translation(compose_chain(gs, K_out=32))
    return GoldenRun(freq, omega, X0, v, params, states, elims, sd, gs, h, time.perf_counter() - t0)


ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line; printed in the terminal summary."""
    def record(n, ok, detail):
        ACCEPTANCE[n] = (bool(ok), detail)
        print(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
