import numpy as np
import pytest

from ccphase import GateContext, default_device
from ccphase import evolution as ev
from ccphase.hilbert import COUPLER, QUBITS
from ccphase.shifts import PhaseVector

CPHASE13 = PhaseVector(0.0, np.pi, 0.0, 0.0)
CCPHASE = PhaseVector(0.0, 0.0, 0.0, np.pi)
NOISE = dict(t1=84.0, t_phi=124.0, charge_noise=6e-5)

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def reference_noise(**changes):
    kw = dict(NOISE)
    kw.update(changes)
    modes = (COUPLER,) + tuple(QUBITS)
    return ev.NoiseModel.uniform(modes, kw["t1"], kw["t_phi"], kw["charge_noise"])


@pytest.fixture(scope="session")
def device():
    return default_device()


@pytest.fixture(scope="session")
def ctx():
    return GateContext()


@pytest.fixture(scope="session")
def cphase_plan(ctx):
    return ctx.plan(CPHASE13, "cphase", (0, 2))


@pytest.fixture(scope="session")
def cphase_report(ctx, cphase_plan):
    return ctx.run_plan(cphase_plan)


@pytest.fixture(scope="session")
def ccphase_plan(ctx):
    return ctx.plan(CCPHASE, "ccphase")


@pytest.fixture(scope="session")
def ccphase_schedule(ctx, ccphase_plan):
    return ctx.plan_schedule(ccphase_plan)


@pytest.fixture(scope="session")
def ccphase_report(ctx, ccphase_plan, ccphase_schedule):
    return ctx.run_plan(ccphase_plan, schedule=ccphase_schedule)


@pytest.fixture(scope="session")
def ccphase_budget(ctx, ccphase_plan, ccphase_schedule):
    return ctx.error_budget(ccphase_plan, reference_noise(), ccphase_schedule)
