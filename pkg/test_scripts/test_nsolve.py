import numpy as np
import pytest

from loopcont.errors import ConvergenceError, GuardViolationError, OrderingError, SubSupError
from loopcont.mesh import assemble_laplacian, build_grid
from loopcont.nsolve import (ProblemContext, default_seeds, deflated_solve, eps_homotopy, monotone_solve,
                             newton_solve, reaction_slope_bound)
from loopcont.oracles import exhaustive_small_solutions
from loopcont.weights import sample_weights

LAM = 4.0


@pytest.fixture(scope="module")
def sublinear_ctx(sqrt_spec):
    # a = 1, b = 0: A u = lam u (u+eps)^(-1/2), one positive solution once lam eps^(-1/2) > mu_1
    grid = build_grid(1, 50, [0.0, 1.0], "dirichlet")
    field_ = sample_weights("1", "0", grid, strict=False)
    return ProblemContext(assemble_laplacian(grid), field_, sqrt_spec)


@pytest.fixture(scope="module")
def sub_sup(sublinear_ctx):
    x = sublinear_ctx.grid.node_coords[:, 0]
    sub = 1e-3 * np.sin(np.pi * x)
    sup = 20.0 * (x * (1.0 - x) / 2.0 + 1.0)
    return sub, sup


@pytest.fixture(scope="module")
def monotone_result(sublinear_ctx, sub_sup):
    return monotone_solve(*sub_sup, LAM, 1e-2, sublinear_ctx)


def test_jacobian_matches_central_differences(dirichlet_ctx):
    x = dirichlet_ctx.grid.node_coords[:, 0]
    u = 0.3 + 0.1 * np.sin(np.pi * x)
    v = np.cos(2 * np.pi * x)
    h = 1e-6
    J = dirichlet_ctx.jacobian(u, 5.0, 1e-2)
    numeric = (dirichlet_ctx.residual(u + h * v, 5.0, 1e-2) - dirichlet_ctx.residual(u - h * v, 5.0, 1e-2)) / (2 * h)
    assert np.max(np.abs(J @ v - numeric)) <= 1e-5 * (1.0 + np.max(np.abs(numeric)))


def test_d_lambda_is_linear_part(dirichlet_ctx):
    u = np.full(dirichlet_ctx.size, 0.2)
    diff = dirichlet_ctx.residual(u, 3.0, 1e-2) - dirichlet_ctx.residual(u, 2.0, 1e-2)
    assert diff == pytest.approx(dirichlet_ctx.d_lambda(u, 1e-2), abs=1e-9)


def test_newton_converges_to_trivial_solution(dirichlet_ctx):
    x = dirichlet_ctx.grid.node_coords[:, 0]
    result = newton_solve(1e-2 * np.sin(np.pi * x), 0.0, 1e-2, dirichlet_ctx)
    assert result.converged and result.iterations <= 10
    assert result.norm_inf < 1e-8
    assert result.lam == 0.0 and result.method == "newton"


def test_newton_rejects_inadmissible_start(dirichlet_ctx):
    u0 = np.full(dirichlet_ctx.size, -0.01)
    with pytest.raises(GuardViolationError):
        newton_solve(u0, 1.0, 1e-2, dirichlet_ctx)


def test_newton_reports_exhausted_iterations(dirichlet_ctx):
    result = newton_solve(np.ones(dirichlet_ctx.size), 1.0, 1e-2, dirichlet_ctx, max_iter=0)
    assert not result.converged and result.message == "max_iter reached"


def test_monotone_iteration_stays_between_bounds(monotone_result, sublinear_ctx, sub_sup):
    sub, sup = sub_sup
    assert monotone_result.converged and monotone_result.method == "monotone"
    assert np.all(monotone_result.u >= sub) and np.all(monotone_result.u <= sup)
    assert monotone_result.residual_inf <= sublinear_ctx.tol_res(monotone_result.u)
    # increasing reaction, so no shift is needed
    assert reaction_slope_bound(sublinear_ctx, LAM, 1e-2, float(sup.max())) == 0.0


def test_monotone_agrees_with_newton(monotone_result, sublinear_ctx):
    polished = newton_solve(monotone_result.u, LAM, 1e-2, sublinear_ctx)
    assert polished.converged
    assert polished.u == pytest.approx(monotone_result.u, abs=1e-7)


def test_monotone_ordering_errors(sublinear_ctx, sub_sup):
    sub, sup = sub_sup
    with pytest.raises(OrderingError) as info:
        monotone_solve(sup + 1.0, sup, LAM, 1e-2, sublinear_ctx)
    assert "node" in str(info.value)
    x = sublinear_ctx.grid.node_coords[:, 0]
    with pytest.raises(SubSupError):
        monotone_solve(sup * 0.0 + 15.0 * np.sin(np.pi * x), sup, LAM, 1e-2, sublinear_ctx)



def test_slope_shift_grows_like_eps_power(dirichlet_ctx):
    # the reaction slope at s = 0 is lam a eps^(q-1) (f0/q), so M blows up as eps -> 0
    assert reaction_slope_bound(dirichlet_ctx, 1.0, 1e-6, 1.0) == pytest.approx(1e3, rel=1e-3)
    assert reaction_slope_bound(dirichlet_ctx, 1.0, 1e-2, 1.0) == pytest.approx(10.0, rel=1e-3)


def test_monotone_converges_at_small_eps(sublinear_ctx, sub_sup):
    sub, sup = sub_sup
    result = monotone_solve(sub, sup, LAM, 1e-6, sublinear_ctx)
    assert result.converged and result.method in ("monotone", "monotone+newton")
    assert np.all(result.u >= sub - 1e-8) and np.all(result.u <= sup + 1e-8)
    assert result.residual_inf <= sublinear_ctx.tol_res(result.u)
    polished = newton_solve(result.u, LAM, 1e-6, sublinear_ctx)
    assert polished.u == pytest.approx(result.u, abs=1e-7)


def test_stalled_monotone_iteration_is_finished_by_newton(sublinear_ctx, sub_sup):
    sub, sup = sub_sup
    result = monotone_solve(sub, sup, LAM, 1e-6, sublinear_ctx, max_iter=5)
    assert result.converged and result.method == "monotone+newton"
    assert result.iterations > 5
    assert np.all(result.u >= sub - 1e-8) and np.all(result.u <= sup + 1e-8)
    assert result.residual_inf <= sublinear_ctx.tol_res(result.u)


def test_stalled_monotone_iteration_raises_without_polish(sublinear_ctx, sub_sup):
    sub, sup = sub_sup
    with pytest.raises(ConvergenceError) as info:
        monotone_solve(sub, sup, LAM, 1e-6, sublinear_ctx, max_iter=3, polish=False)
    assert "stalled" in str(info.value)


def test_deflation_finds_positive_root(monotone_result, sublinear_ctx, rng):
    found = deflated_solve([np.zeros(sublinear_ctx.size)], LAM, 1e-2, sublinear_ctx, rng=rng)
    assert found
    assert all(r.converged for r in found)
    assert any(np.max(np.abs(r.u - monotone_result.u)) < 1e-6 for r in found)
    for i, r in enumerate(found):
        assert np.max(np.abs(r.u)) > 1e-6
        for other in found[i + 1:]:
            assert np.max(np.abs(r.u - other.u)) > sublinear_ctx.sep_tol([r.u, other.u])


def test_deflation_matches_lattice_search(sqrt_spec, rng):
    # lam = 0 leaves A u = g(u): only the trivial and one positive solution
    grid = build_grid(1, 4, [0.0, 1.0], "dirichlet")
    ctx = ProblemContext(assemble_laplacian(grid), sample_weights("x - 0.5", "1", grid), sqrt_spec)
    exhaustive = exhaustive_small_solutions(ctx, 0.0, 1e-2, u_cap=40.0)
    assert len(exhaustive) == 2
    assert np.max(np.abs(exhaustive[0])) < 1e-8
    found = deflated_solve([exhaustive[0]], 0.0, 1e-2, ctx, rng=rng)
    assert len(found) == 1
    assert found[0].u == pytest.approx(exhaustive[1], abs=1e-6)


def test_eps_homotopy_follows_solution(monotone_result, sublinear_ctx):
    homotopy = eps_homotopy(monotone_result.u, LAM, [1e-2, 1e-3, 1e-4], sublinear_ctx)
    assert homotopy.eps == 1e-4
    assert homotopy.result.converged
    norms = [norm for _, norm in homotopy.path]
    assert len(norms) == 3
    # weaker regularization means a stronger sublinear term
    assert norms[0] < norms[1] < norms[2]


def test_eps_homotopy_reports_failed_first_level(sublinear_ctx):
    homotopy = eps_homotopy(np.ones(sublinear_ctx.size), LAM, [1e-2, 1e-3], sublinear_ctx, max_iter=0)
    assert not homotopy.result.converged
    assert homotopy.result.message == "first level failed" and homotopy.path == []


def test_default_seeds(sublinear_ctx, rng):
    seeds = default_seeds(sublinear_ctx, rng, count=20)
    assert len(seeds) == 20
    assert all(s.shape == (sublinear_ctx.size,) and s.min() > 0 for s in seeds)
    assert np.max(seeds[0]) == pytest.approx(1e-2)
