import numpy as np
import pytest

from asprom.hdm import DesignSpace, HdmConfig, generate_hdm

ROLES_10 = ["fluid_shape"] * 4 + ["struct_stiffness"] * 3 + ["struct_damping"] * 3
ROLES_6 = ["fluid_shape"] * 2 + ["struct_stiffness"] * 2 + ["struct_damping"] * 2


def make_config(nf=40, ns=5, dim=10, seed=7, half_width=0.3, planted_rank=4, **kw):
    roles = ROLES_10 if dim == 10 else ROLES_6 if dim == 6 else None
    if roles is None:
        roles = (["fluid_shape", "struct_stiffness", "struct_damping"] * dim)[:dim]
    return HdmConfig(
        nf=nf, ns=ns, design_space=DesignSpace.symmetric(dim, half_width),
        parameter_roles=roles, seed=seed, planted_rank=planted_rank, **kw,
    )


@pytest.fixture(scope="session")
def hdm_small():
    return generate_hdm(make_config(nf=20, ns=4, seed=3))


@pytest.fixture(scope="session")
def hdm_mid():
    return generate_hdm(make_config(nf=40, ns=5, seed=7))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (passed, detail), filled by test_acceptance.py
RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(RESULTS):
        ok, detail = RESULTS[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
