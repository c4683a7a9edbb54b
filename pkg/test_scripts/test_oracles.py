import numpy as np
import pytest

from loopcont.mesh import assemble_laplacian, build_grid
from loopcont.nonlin import make_spec
from loopcont.nsolve import ProblemContext, deflated_solve
from loopcont.oracles import DENSE_CAP, LATTICE_CAP, dense_weighted_eig, exhaustive_small_solutions
from loopcont.weights import sample_weights


def test_dense_residuals_are_small(dirichlet_lap, dirichlet_field):
    dense = dense_weighted_eig(dirichlet_lap, dirichlet_field.a_vals)
    assert np.all(dense.residuals <= 1e-8 * dirichlet_lap.max_entry)
    assert np.all(np.diff(dense.eigenvalues) >= 0)
    assert dense.eigenvalues.min() < 0 < dense.eigenvalues.max()


def test_dense_neumann_skips_constant_mode(neumann_grid, neumann_field):
    dense = dense_weighted_eig(assemble_laplacian(neumann_grid), neumann_field.a_vals)
    mu, phi = dense.principal(positive=True)
    assert mu > 1e-6 and phi.min() > 0 and phi.max() == pytest.approx(1.0)
    assert dense.principal(positive=False) is None


def test_dense_cap():
    grid = build_grid(1, DENSE_CAP + 1, [0.0, 1.0], "dirichlet")
    with pytest.raises(ValueError):
        dense_weighted_eig(assemble_laplacian(grid), np.ones(grid.size))


def test_lattice_cap(sqrt_spec):
    grid = build_grid(1, LATTICE_CAP + 1, [0.0, 1.0], "dirichlet")
    ctx = ProblemContext(assemble_laplacian(grid), sample_weights("x - 0.5", "1", grid), sqrt_spec)
    with pytest.raises(ValueError):
        exhaustive_small_solutions(ctx, 0.0, 1e-2, 10.0)


def test_lattice_search_solutions_solve_the_system(sqrt_spec):
    grid = build_grid(1, 3, [0.0, 1.0], "dirichlet")
    ctx = ProblemContext(assemble_laplacian(grid), sample_weights("x - 0.5", "1", grid), sqrt_spec)
    solutions = exhaustive_small_solutions(ctx, 0.0, 1e-2, u_cap=40.0)
    assert len(solutions) == 2
    norms = [np.max(np.abs(u)) for u in solutions]
    assert norms == sorted(norms)
    for u in solutions:
        assert np.max(np.abs(ctx.residual(u, 0.0, 1e-2))) <= 10 * ctx.tol_res(u)
    # the positive solution is symmetric about x = 1/2
    assert solutions[1] == pytest.approx(solutions[1][::-1], rel=1e-8)


def lattice_ctx(n, p):
    grid = build_grid(1, n, [0.0, 1.0], "dirichlet")
    return ProblemContext(assemble_laplacian(grid), sample_weights("x - 0.5", "1", grid),
                          make_spec("pure_power", 0.5, "pure_power", p))


@pytest.mark.parametrize("n, p", [(2, 2.0), (3, 2.0), (4, 2.0), (2, 3.0), (3, 3.0), (4, 3.0),
                                  pytest.param(5, 3.0, marks=pytest.mark.slow)])
def test_deflation_covers_lattice_solutions(n, p, rng):
    ctx = lattice_ctx(n, p)
    exhaustive = exhaustive_small_solutions(ctx, 0.0, 1e-2, u_cap=40.0)
    trivial = [u for u in exhaustive if np.max(np.abs(u)) < 1e-8]
    nontrivial = [u for u in exhaustive if np.max(np.abs(u)) >= 1e-8]
    assert len(trivial) == 1 and nontrivial
    found = deflated_solve(trivial, 0.0, 1e-2, ctx, rng=rng)
    assert len(found) >= len(nontrivial)
    sep = ctx.sep_tol(exhaustive)
    for u in nontrivial:
        assert min(np.max(np.abs(r.u - u)) for r in found) <= sep
