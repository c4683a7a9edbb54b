import numpy as np
import pytest

from conftest import PI, SIN3
from loopcont.eigen import MARGIN_FLAG, margin_flagged, principal_eigs, transversality_margin
from loopcont.errors import NoPositivePrincipalEigenvalueError
from loopcont.mesh import BoundaryCondition, assemble_laplacian, build_grid
from loopcont.oracles import dense_weighted_eig
from loopcont.weights import sample_weights


def test_matches_dense_oracle(dirichlet_lap, dirichlet_field, dirichlet_pair):
    dense = dense_weighted_eig(dirichlet_lap, dirichlet_field.a_vals)
    mu_plus, phi_plus = dense.principal(positive=True)
    mu_minus, _ = dense.principal(positive=False)
    assert dirichlet_pair.mu_plus == pytest.approx(mu_plus, rel=1e-8)
    assert dirichlet_pair.mu_minus == pytest.approx(mu_minus, rel=1e-8)
    assert dirichlet_pair.phi_plus == pytest.approx(phi_plus, abs=1e-6)
    assert dirichlet_pair.phi_plus.min() > 0 and dirichlet_pair.phi_minus.min() > 0
    assert dirichlet_pair.mu_minus < 0 < dirichlet_pair.mu_plus


def test_eps_scaling_law(dirichlet_pair):
    q = 0.5
    scaled = [dirichlet_pair.scaled(eps) for eps in (1e-1, 1e-2, 1e-3, 1e-4)]
    invariants = [p.lam_plus * p.eps ** (q - 1.0) for p in scaled]
    assert np.ptp(invariants) <= 1e-10 * abs(invariants[0])
    assert scaled[1].lam_plus == pytest.approx(0.1 * dirichlet_pair.mu_plus)
    assert scaled[3].lam_minus == pytest.approx(0.01 * dirichlet_pair.mu_minus)
    lam, phi = scaled[1].side("minus")
    assert lam == scaled[1].lam_minus and phi is dirichlet_pair.phi_minus


def test_small_problem_uses_dense_pencil(sqrt_spec):
    grid = build_grid(1, 40, [0.0, 1.0], "dirichlet")
    lap = assemble_laplacian(grid)
    field_ = sample_weights(SIN3, "1", grid)
    pair = principal_eigs(lap, field_, sqrt_spec, 1e-2)
    mu_plus, _ = dense_weighted_eig(lap, field_.a_vals).principal(positive=True)
    assert pair.mu_plus == pytest.approx(mu_plus, rel=1e-10)


def test_constant_weight_gives_laplacian_eigenvalue():
    grid = build_grid(1, 50, [0.0, 1.0], "dirichlet")
    dense = dense_weighted_eig(assemble_laplacian(grid), np.ones(grid.size))
    mu, phi = dense.principal(positive=True)
    assert mu == pytest.approx(np.pi ** 2, rel=1e-3)
    assert dense.residuals.max() <= 1e-10 * assemble_laplacian(grid).max_entry


def test_negative_weight_has_no_positive_principal_eigenvalue(sqrt_spec):
    grid = build_grid(1, 50, [0.0, 1.0], "dirichlet")
    lap = assemble_laplacian(grid)
    field_ = sample_weights("-1", "1", grid, strict=False)
    assert dense_weighted_eig(lap, field_.a_vals).principal(positive=True) is None
    with pytest.raises(NoPositivePrincipalEigenvalueError):
        principal_eigs(lap, field_, sqrt_spec, 1e-2)


def test_neumann_principal_pair(neumann_ctx, neumann_field, sqrt_spec):
    pair = principal_eigs(neumann_ctx.laplacian, neumann_field, sqrt_spec, 1e-2)
    assert pair.bc is BoundaryCondition.NEUMANN
    assert pair.mu_minus == 0.0
    assert pair.phi_minus == pytest.approx(np.ones(neumann_field.grid.size))
    assert pair.mu_plus > 0 and pair.phi_plus.min() > 0
    mu_plus, _ = dense_weighted_eig(neumann_ctx.laplacian, neumann_field.a_vals).principal(positive=True)
    assert pair.mu_plus == pytest.approx(mu_plus, rel=1e-8)
    margin = transversality_margin(pair)
    assert margin > MARGIN_FLAG and not margin_flagged(margin)


def test_neumann_nonnegative_integral_is_rejected(neumann_grid, sqrt_spec):
    lap = assemble_laplacian(neumann_grid)
    field_ = sample_weights(f"cos({PI}*x) + 0.2", "1", neumann_grid)
    with pytest.raises(NoPositivePrincipalEigenvalueError):
        principal_eigs(lap, field_, sqrt_spec, 1e-2)


def test_critical_neumann_shift(neumann_grid, sqrt_spec):
    lap = assemble_laplacian(neumann_grid)
    field_ = sample_weights(f"cos({PI}*x)", "1", neumann_grid)
    assert abs(field_.a_int) < 1e-10
    pair = principal_eigs(lap, field_, sqrt_spec, 1e-2, weight_shift=0.05)
    assert pair.weight_shift == 0.05 and pair.mu_plus > 0


def test_transversality_margin_dirichlet(dirichlet_pair):
    margin = transversality_margin(dirichlet_pair)
    assert 0 < margin < np.inf
    assert not margin_flagged(margin)
    assert margin_flagged(0.5 * MARGIN_FLAG)


def test_invalid_eps(dirichlet_lap, dirichlet_field, sqrt_spec):
    with pytest.raises(ValueError):
        principal_eigs(dirichlet_lap, dirichlet_field, sqrt_spec, 0.0)
