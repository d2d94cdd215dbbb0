import numpy as np
import pytest

from perronfem import BoundaryMode, CoefficientSet, assemble, \
    generate_structured

MIXED_TAGS = {"bottom": "D", "right": "N", "top": "N", "left": "N"}


@pytest.fixture(scope="session")
def robin_mesh8():
    return generate_structured("unit_square", 8, "flux")


@pytest.fixture(scope="session")
def dirichlet_mesh8():
    return generate_structured("unit_square", 8, "dirichlet")


@pytest.fixture(scope="session")
def mixed_mesh8():
    return generate_structured("unit_square", 8, MIXED_TAGS)


@pytest.fixture(scope="session")
def robin_op8(robin_mesh8):
    coeffs = CoefficientSet.constant(robin_mesh8, beta=1.0)
    return assemble(robin_mesh8, coeffs, BoundaryMode.ROBIN)


@pytest.fixture(scope="session")
def neumann_op8(robin_mesh8):
    coeffs = CoefficientSet.constant(robin_mesh8)
    return assemble(robin_mesh8, coeffs, BoundaryMode.NEUMANN)


@pytest.fixture(scope="session")
def dirichlet_op8(dirichlet_mesh8):
    coeffs = CoefficientSet.constant(dirichlet_mesh8)
    return assemble(dirichlet_mesh8, coeffs, BoundaryMode.DIRICHLET)


def dense_ie_step(op, dt):
    """Independent dense implicit Euler step matrix (lumped mass)."""
    M = np.diag(op.mass_lumped)
    A = op.stiffness.toarray().real
    return np.linalg.solve(M + dt * A, M)
