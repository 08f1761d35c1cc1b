import numpy as np
import pytest

from rbmlrom import fom as fom_mod
from rbmlrom import rb
from rbmlrom.param_space import default_domain, sample


@pytest.fixture(scope="session")
def small_fom():
    return fom_mod.assemble(fom_mod.FomSpec(grid_n=10, num_steps=20))


@pytest.fixture(scope="session")
def small_rm(small_fom):
    basis = rb.ReducedBasis.empty(small_fom.n_dofs)
    for mu in sample(default_domain(), 0, 3):
        basis = rb.extend_basis_hapod(basis, fom_mod.solve(small_fom, mu), small_fom, 1e-3)
    return rb.project_operators(small_fom, basis)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE = {}


def record(criterion: int, passed: bool, detail: str):
    ACCEPTANCE[criterion] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if passed else 'FAIL'} ({detail})")
