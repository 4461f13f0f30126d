import numpy as np
import pytest

from semprobe.builtin import builtin_spec
from semprobe.emcore import EMConfig, run_em
from semprobe.harness import fit_builtin, multinomial_linkage_fixture, simulate_data


@pytest.fixture(scope="session")
def fixture_model():
    return multinomial_linkage_fixture()


@pytest.fixture(scope="session")
def fixture_run(fixture_model):
    return run_em(fixture_model, np.array([0.5]), EMConfig(rel_ll_tolerance=1e-13))


@pytest.fixture(scope="session")
def m2pl5_fit():
    """One fitted m2pl5 replicate shared across tests."""
    bm = builtin_spec("m2pl5")
    data = simulate_data(bm, 1)
    model, run = fit_builtin(bm, data, EMConfig(rel_ll_tolerance=1e-11))
    return bm, model, run


@pytest.fixture(scope="session")
def grm20_fit():
    """One fitted grm20 replicate shared across tests (about a second)."""
    bm = builtin_spec("grm20")
    data = simulate_data(bm, 1)
    model, run = fit_builtin(bm, data, EMConfig(rel_ll_tolerance=1e-11))
    return bm, model, run


# --- acceptance reporting ----------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_RESULTS[number] = (passed, detail)
    status = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {number}: {status} - {detail}")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        passed, detail = ACCEPTANCE_RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"ACCEPTANCE {number}: {status} - {detail}")
