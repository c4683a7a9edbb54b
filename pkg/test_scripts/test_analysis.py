import numpy as np
import pytest

from conftest import SIN3
from loopcont.analysis import (QScanRow, build_supersolution, check_floor, check_positivity_continuation,
                               check_supersolution_bound, classify_positivity, compute_lambda_bar,
                               compute_small_solution_floor, estimate_q_threshold, summarize_scan)
from loopcont.continuation import Branch, BranchPoint, trace_branch
from loopcont.eigen import principal_eigs
from loopcont.mesh import assemble_laplacian, build_grid
from loopcont.nonlin import make_spec
from loopcont.nsolve import ProblemContext, default_seeds, deflated_solve
from loopcont.weights import sample_weights

PARABOLA = "x*(1-x) - 3/16"


@pytest.fixture(scope="module")
def bounds(dirichlet_field, sqrt_spec):
    return compute_lambda_bar(dirichlet_field, sqrt_spec)


@pytest.fixture(scope="module")
def parabola_ctx(sqrt_spec):
    grid = build_grid(1, 199, [0.0, 1.0], "dirichlet")
    field_ = sample_weights(SIN3, PARABOLA, grid)
    return ProblemContext(assemble_laplacian(grid), field_, sqrt_spec)


def branch_of(states, lams, eps=1e-2):
    points = [BranchPoint(lam=lam, eps=eps, u=u, norm_inf=float(np.max(np.abs(u)))) for u, lam in zip(states, lams)]
    return Branch(points=points, eps=eps)


def test_lambda_bar_constants(bounds):
    # B = [0.10, 0.23], g = s^2, F(s) = s
    assert bounds.lam_B == pytest.approx((np.pi / 0.13) ** 2)
    assert bounds.lam_B == pytest.approx(584.0, rel=1e-3)
    assert bounds.a0 == pytest.approx(0.833, abs=1e-2)
    assert bounds.b0 == 1.0 and bounds.b_inf == 1.0
    assert bounds.s0 == pytest.approx(bounds.lam_B, rel=1e-8)
    assert bounds.K0 == pytest.approx(bounds.s0, rel=1e-6)
    assert bounds.M1 == pytest.approx(1.0, rel=1e-6)
    expected = (bounds.lam_B + bounds.K0) * (bounds.s0 + 1.0) ** 0.5 / (bounds.a0 * bounds.M1)
    assert bounds.lambda_bar == pytest.approx(expected, rel=1e-12)
    assert 1e4 < bounds.lambda_bar < 1e5


def test_lambda_bar_negative_side(bounds, dirichlet_field, sqrt_spec):
    assert bounds.lambda_bar_neg > 0
    assert bounds.lambda_limit == min(bounds.lambda_bar, bounds.lambda_bar_neg)
    minus = compute_lambda_bar(dirichlet_field, sqrt_spec, side="minus")
    assert minus.side == "minus"
    assert minus.lam_B == pytest.approx((np.pi / 0.2) ** 2)
    assert minus.lambda_bar_neg == pytest.approx(bounds.lambda_bar_neg)
    assert minus.to_dict()["ball"]["radius"] == pytest.approx(0.1)


def test_supersolution_on_parabola_weight(parabola_ctx, sqrt_spec):
    cert = build_supersolution(parabola_ctx.field, sqrt_spec, 1.0, None, parabola_ctx)
    assert cert.case == "constructed" and cert.ok
    # -w0'' = 1 on (0, 1/4) with zero ends peaks at 1/128
    assert cert.w0.max() == pytest.approx(1.0 / 128.0, rel=1e-9)
    assert cert.s1 == pytest.approx(cert.delta ** -2, rel=1e-8)
    assert cert.C == cert.s1
    assert cert.w_bar == pytest.approx(cert.C * (cert.w0 + 1.0))
    assert cert.min_residual >= 0
    assert cert.to_dict()["w0_max"] == pytest.approx(1.0 / 128.0, rel=1e-9)


def test_supersolution_respects_C1(parabola_ctx, sqrt_spec):
    cert = build_supersolution(parabola_ctx.field, sqrt_spec, [-2.0, 1.0], 50.0, parabola_ctx)
    assert cert.Lambda == 2.0 and cert.C == 50.0 and cert.ok


def test_supersolution_trivial_and_invalid(dirichlet_field, dirichlet_ctx, sqrt_spec):
    cert = build_supersolution(dirichlet_field, sqrt_spec, 10.0, None, dirichlet_ctx)
    assert cert.case == "trivial" and cert.ok
    with pytest.raises(ValueError):
        build_supersolution(dirichlet_field, sqrt_spec, 0.0, None, dirichlet_ctx)


def test_supersolution_bound_check(parabola_ctx, sqrt_spec):
    cert = build_supersolution(parabola_ctx.field, sqrt_spec, 1.0, 5.0, parabola_ctx)
    positive = parabola_ctx.field.b_vals > 0
    inside = np.where(positive, 1.0, 10.0)
    unbounded = np.where(positive, 100.0, 10.0)
    branch = branch_of([inside, unbounded, np.where(positive, 1.0, 2.0)], [1.0, 2.0, 3.0])
    violations = check_supersolution_bound(branch, cert, parabola_ctx.field)
    assert [v["step"] for v in violations] == [0]
    assert violations[0]["excess"] > 0


def test_floor_closed_form(dirichlet_field, sqrt_spec, bounds):
    cert = compute_small_solution_floor(dirichlet_field, sqrt_spec, 1000.0, bounds=bounds)
    assert cert.K2 == pytest.approx(2.0 * bounds.s0, rel=1e-6)
    assert cert.M0 == 0.0
    expected = (1000.0 * cert.a0 / (cert.lam_B + bounds.b_inf * cert.K2)) ** 2
    assert cert.s1 == pytest.approx(expected, rel=1e-8)
    assert cert.C_Lambda == pytest.approx(expected, rel=1e-8)


def test_floor_caps_at_s0(dirichlet_field, sqrt_spec, bounds):
    cert = compute_small_solution_floor(dirichlet_field, sqrt_spec, 1e8, bounds=bounds)
    assert cert.C_Lambda == cert.s0
    with pytest.raises(ValueError):
        compute_small_solution_floor(dirichlet_field, sqrt_spec, 0.0, bounds=bounds)


def test_check_floor(dirichlet_field, dirichlet_grid, sqrt_spec, bounds):
    cert = compute_small_solution_floor(dirichlet_field, sqrt_spec, 1000.0, bounds=bounds)
    n = dirichlet_grid.size
    branch = branch_of([np.full(n, 1e-6), np.full(n, 10.0), np.full(n, 1e-6), np.zeros(n)],
                       [2000.0, 2000.0, 10.0, 2000.0])
    violations = check_floor([branch], cert, dirichlet_grid)
    assert [(v["step"], v["kind"]) for v in violations] == [(0, "ball_floor")]
    near = check_floor([branch], cert, dirichlet_grid, lambda0=10.0, window=1.0)
    assert (2, "norm_floor") in [(v["step"], v["kind"]) for v in near]


def test_classify_positivity(dirichlet_grid, neumann_grid):
    x = dirichlet_grid.node_coords[:, 0]
    positive = classify_positivity(np.sin(np.pi * x), dirichlet_grid)
    assert positive.klass == "strictly_positive"
    assert positive.hopf_margin == pytest.approx(np.pi, rel=1e-2)
    dead = classify_positivity(np.maximum(np.sin(3 * np.pi * x), 0.0), dirichlet_grid)
    assert dead.klass == "dead_core" and dead.dead_nodes.size > 50
    assert classify_positivity(np.zeros_like(x), dirichlet_grid).klass == "trivial"
    assert classify_positivity(np.ones(neumann_grid.size), neumann_grid).klass == "strictly_positive"
    assert dead.to_dict()["class"] == "dead_core"


def test_isolated_dead_core_is_flagged(dirichlet_grid):
    x = dirichlet_grid.node_coords[:, 0]
    bump = np.sin(np.pi * x)
    cored = np.maximum(np.sin(3 * np.pi * x), 0.0)
    branch = branch_of([bump, cored, bump, cored, cored], [1.0, 2.0, 3.0, 4.0, 5.0])
    anomalies = check_positivity_continuation(branch, dirichlet_grid)
    assert [a["step"] for a in anomalies] == [1]


def test_scan_summary():
    rows = [QScanRow(q=0.9, verdict="all_positive", lam=1.0, n_solutions=1),
            QScanRow(q=0.1, verdict="dead_core_found", lam=1.0, n_solutions=2),
            QScanRow(q=0.5, verdict="all_positive", lam=1.0, n_solutions=1)]
    table = summarize_scan(rows)
    assert [r.q for r in table.rows] == [0.1, 0.5, 0.9]
    assert table.interval == [0.5, 0.9] and table.warnings == []
    assert table.verdict(0.1) == "dead_core_found"


def test_scan_summary_flags_inconsistent_order():
    rows = [QScanRow(q=0.3, verdict="all_positive", lam=1.0, n_solutions=1),
            QScanRow(q=0.7, verdict="dead_core_found", lam=1.0, n_solutions=1),
            QScanRow(q=0.9, verdict="no_nontrivial_found", lam=1.0, n_solutions=0)]
    table = summarize_scan(rows)
    assert table.interval is None
    assert len(table.warnings) == 1 and "q=0.3" in table.warnings[0]
    assert table.to_dict()["all_positive_interval"] is None


@pytest.mark.slow
def test_q_scan_runs_on_small_grid(sqrt_spec):
    grid = build_grid(1, 30, [0.0, 1.0], "dirichlet")
    field_ = sample_weights(SIN3, "1", grid)
    ctx = ProblemContext(assemble_laplacian(grid), field_, sqrt_spec)
    table = estimate_q_threshold(field_, ctx, [0.9, 0.5], eps_final=1e-6)
    assert [r.q for r in table.rows] == [0.5, 0.9]
    for row in table.rows:
        assert row.verdict in ("all_positive", "dead_core_found", "no_nontrivial_found")
        assert row.n_solutions == len(row.classes) == len(row.eps_reached)


@pytest.mark.slow
def test_branches_stay_inside_a_priori_box(dirichlet_mushroom, bounds):
    limit = bounds.lambda_limit
    for branch in dirichlet_mushroom.values():
        assert np.all(np.abs(branch.lambdas) < limit)


@pytest.mark.slow
@pytest.mark.parametrize("side", ["plus", "minus"])
def test_no_positive_solution_beyond_lambda_bar(dirichlet_ctx, bounds, side, rng):
    lam = 1.1 * bounds.lambda_bar if side == "plus" else -1.1 * bounds.lambda_bar_neg
    seeds = default_seeds(dirichlet_ctx, rng, count=20)
    found = deflated_solve([np.zeros(dirichlet_ctx.size)], lam, 1e-2, dirichlet_ctx, seeds=seeds)
    for result in found:
        assert result.u.min() < -1e-8 * result.norm_inf, result.norm_inf


@pytest.mark.slow
def test_traced_branch_respects_small_solution_floor(dirichlet_mushroom, dirichlet_field, dirichlet_grid,
                                                     dirichlet_ctx, sqrt_spec, bounds):
    floor = compute_small_solution_floor(dirichlet_field, sqrt_spec, 0.25 * bounds.lambda_bar,
                                         ctx=dirichlet_ctx, bounds=bounds)
    branches = list(dirichlet_mushroom.values())
    assert check_floor(branches, floor, dirichlet_grid) == []
    near = check_floor(branches, floor, dirichlet_grid, lambda0=0.5 * bounds.lambda_bar,
                       window=0.05 * bounds.lambda_bar)
    assert [v for v in near if v["kind"] == "norm_floor"] == []


@pytest.mark.slow
def test_near_linear_branch_stays_strictly_positive(dirichlet_lap, dirichlet_field, dirichlet_grid):
    spec = make_spec("pure_power", 0.9, "pure_power", 2.0)
    ctx = ProblemContext(dirichlet_lap, dirichlet_field, spec)
    pair = principal_eigs(dirichlet_lap, dirichlet_field, spec, 1e-2)
    branch = trace_branch(pair, "plus", ctx, 1e-3, 0.02, 20000)
    assert branch.closed_mushroom, branch.anomalies
    classes = {classify_positivity(p.u, dirichlet_grid).klass for p in branch.points}
    assert classes == {"strictly_positive"}
    assert check_positivity_continuation(branch, dirichlet_grid) == []
