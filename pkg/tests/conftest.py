import numpy as np
import pytest

from metpeel import parse_ensemble

RA_TEXT = "nu = r1*x1^2 + 1/3*r0*x2^3 ; mu = x1^2*x2"
REG36_TEXT = "nu = r1*x1^3 ; mu = 1/2*x1^6"
PROTO3_TEXT = "nu = 1/2*r1*x1*x2 + 1/2*r0*x2*x3^2 ; mu = 1/2*x1*x3^2 + 1/2*x2^2"
IDENT_TEXT = "nu = r1*x1 ; mu = x1"


@pytest.fixture(scope="session")
def ra():
    return parse_ensemble(RA_TEXT)


@pytest.fixture(scope="session")
def reg36():
    return parse_ensemble(REG36_TEXT)


@pytest.fixture(scope="session")
def proto3():
    return parse_ensemble(PROTO3_TEXT)


@pytest.fixture(scope="session")
def ident():
    return parse_ensemble(IDENT_TEXT)


@pytest.fixture(scope="session")
def all_specs(ra, reg36, proto3):
    return {"ra": ra, "reg36": reg36, "proto3": proto3}


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)


def random_point(spec, rng, eps_low=0.05, x_low=0.05):
    """A random interior (eps, x) pair for a spec."""
    eps = np.concatenate(([1.0], rng.uniform(eps_low, 1.0, size=spec.nr)))
    x = rng.uniform(x_low, 1.0, size=spec.ne)
    return eps, x
