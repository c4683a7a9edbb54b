import os
import sys

import numpy as np
import pytest

# Add the project root to Python path to import loopcont and givenData
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from loopcont.continuation import trace_branch
from loopcont.eigen import principal_eigs
from loopcont.mesh import assemble_laplacian, build_grid
from loopcont.nonlin import make_spec
from loopcont.nsolve import ProblemContext
from loopcont.weights import sample_weights

PI = "3.141592653589793"
SIN3 = f"sin(3*{PI}*x)"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: end-to-end runs taking tens of seconds or more")


@pytest.fixture(scope="session")
def dirichlet_grid():
    return build_grid(1, 200, [[0.0, 1.0]], "dirichlet")


@pytest.fixture(scope="session")
def dirichlet_lap(dirichlet_grid):
    return assemble_laplacian(dirichlet_grid)


@pytest.fixture(scope="session")
def sqrt_spec():
    # f = s^0.5 (f0/q = 1), g = s^2
    return make_spec("pure_power", 0.5, "pure_power", 2.0)


@pytest.fixture(scope="session")
def dirichlet_field(dirichlet_grid):
    return sample_weights(SIN3, "1", dirichlet_grid, pos_balls=([0.10, 0.23], [0.40, 0.60]))


@pytest.fixture(scope="session")
def dirichlet_ctx(dirichlet_lap, dirichlet_field, sqrt_spec):
    return ProblemContext(dirichlet_lap, dirichlet_field, sqrt_spec)


@pytest.fixture(scope="session")
def dirichlet_pair(dirichlet_lap, dirichlet_field, sqrt_spec):
    return principal_eigs(dirichlet_lap, dirichlet_field, sqrt_spec, 1e-2)


@pytest.fixture(scope="session")
def dirichlet_mushroom(dirichlet_ctx, dirichlet_pair):
    """Branches at eps = 1e-2 traced from lambda_plus and from lambda_minus"""
    return {side: trace_branch(dirichlet_pair, side, dirichlet_ctx, 1e-3, 0.01, 20000)
            for side in ("plus", "minus")}


@pytest.fixture(scope="session")
def neumann_grid():
    return build_grid(1, 200, [[0.0, 1.0]], "neumann")


@pytest.fixture(scope="session")
def neumann_field(neumann_grid):
    return sample_weights(f"cos({PI}*x) - 0.2", f"cos({PI}*x) - 0.1", neumann_grid)


@pytest.fixture(scope="session")
def neumann_ctx(neumann_grid, neumann_field, sqrt_spec):
    return ProblemContext(assemble_laplacian(neumann_grid), neumann_field, sqrt_spec)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
