import numpy as np
import pytest

from loopcont.errors import GuardViolationError
from loopcont.nonlin import (FAIL, G_KINDS, INCONCLUSIVE, PASS, RegularizedTerm, estimate_f0_g0, eval_F,
                             eval_reaction, eval_reaction_jacobian, exponent_clauses, make_spec,
                             sampled_negative_slope, strong_convexity_threshold, validate_hypotheses)

POINTS = np.array([0.1, 1.0, 10.0])


def test_pure_power_values(sqrt_spec):
    assert sqrt_spec.f0 == 0.5 and sqrt_spec.f0_over_q == 1.0
    assert sqrt_spec.f(4.0) == pytest.approx(2.0)
    assert eval_F(sqrt_spec, 3.0) == pytest.approx(3.0)
    # linear extension below zero
    assert eval_F(sqrt_spec, -0.25) == pytest.approx(-0.25)
    assert sqrt_spec.g(-1.0) == 0.0


def test_F_is_scaled_f_with_linear_extension():
    spec = make_spec("inv_one_plus_sr", 0.5)
    # F(s) = s^(1-q) f(s) = s / (1 + s) for s >= 0, no eps shift
    assert eval_F(spec, 1.0) == pytest.approx(0.5)
    assert eval_F(spec, 3.0) == pytest.approx(0.75)
    assert eval_F(spec, 0.0) == 0.0
    assert eval_F(spec, -2.0) == pytest.approx(-2.0)


def test_regularized_term_value(sqrt_spec):
    term = RegularizedTerm(eps=0.01, spec=sqrt_spec)
    assert eval_reaction(term, 1.0, 1.0, 1.0, 0.0) == pytest.approx(1.01 ** -0.5, rel=1e-12)
    assert eval_reaction(term, 0.0, 1.0, 1.0, 1.0) == 0.0


@pytest.mark.parametrize("f_family", ["pure_power", "inv_one_plus_sr", "exp_neg"])
@pytest.mark.parametrize("g_family", G_KINDS)
def test_reaction_jacobian_matches_central_differences(f_family, g_family):
    spec = make_spec(f_family, 0.5, g_family, 2.0, f_r=1.5, g_r=1.0, g_k=4.0)
    term = RegularizedTerm(eps=0.01, spec=spec)
    h = 1e-6
    analytic = eval_reaction_jacobian(term, POINTS, 0.7, 1.0, 1.0)
    numeric = (eval_reaction(term, POINTS + h, 0.7, 1.0, 1.0)
               - eval_reaction(term, POINTS - h, 0.7, 1.0, 1.0)) / (2 * h)
    assert np.all(np.abs(analytic - numeric) < 1e-6 * (1.0 + np.abs(analytic)))


def test_guard(sqrt_spec):
    term = RegularizedTerm(eps=0.01, spec=sqrt_spec)
    term.check_guard(np.array([-0.004, 1.0]))
    with pytest.raises(GuardViolationError):
        term.check_guard(np.array([1.0, -0.006]))
    with pytest.raises(GuardViolationError):
        RegularizedTerm(eps=0.0, spec=sqrt_spec).check_guard(np.array([0.0]), derivative=True)


def test_make_spec_rejects_bad_parameters():
    with pytest.raises(ValueError):
        make_spec(q=1.0)
    with pytest.raises(ValueError):
        make_spec(p=1.0)
    with pytest.raises(ValueError):
        make_spec(f_family="cubic")


def test_admissible_families_pass(sqrt_spec):
    report = validate_hypotheses(sqrt_spec, 1)
    assert report.ok, report.failed
    for name in ("inv_one_plus_sr", "exp_neg"):
        report = validate_hypotheses(make_spec(name, 0.3, "one_minus_exp_neg", 2.5), 2)
        assert report.ok, (name, report.failed)
        assert report.verdict("g_power_decay") == PASS


def test_oscillatory_family_fails():
    report = validate_hypotheses(make_spec("oscillatory", 0.5), 1)
    assert report.verdict("f_positive") == PASS
    for clause in ("f_power_limit", "f_slope_condition", "f_strong_concavity", "f_factorization"):
        assert report.verdict(clause) == FAIL, clause


def test_kps_strong_convexity_threshold():
    assert strong_convexity_threshold(4.0) == pytest.approx(4.0 / 3.0)
    below = validate_hypotheses(make_spec(g_family="kps_over_1ps", p=1.3, g_k=4.0), 1)
    above = validate_hypotheses(make_spec(g_family="kps_over_1ps", p=1.4, g_k=4.0), 1)
    at = validate_hypotheses(make_spec(g_family="kps_over_1ps", p=4.0 / 3.0, g_k=4.0), 1)
    assert below.verdict("g_strong_convexity") == FAIL
    assert above.verdict("g_strong_convexity") == PASS
    assert at.verdict("g_strong_convexity") == INCONCLUSIVE


def test_exponent_clauses():
    spec = make_spec(p=6.0)
    assert exponent_clauses(spec, 2)["p_subcritical"].verdict == PASS
    clauses = exponent_clauses(spec, 3, gamma=1.0)
    assert clauses["p_subcritical"].verdict == FAIL
    assert clauses["p_hb_subcritical"].verdict == FAIL
    assert exponent_clauses(make_spec(p=1.9), 3)["p_neumann_subcritical"].verdict == PASS
    assert exponent_clauses(make_spec(p=2.1), 3)["p_neumann_subcritical"].verdict == FAIL
    assert not validate_hypotheses(spec, 3).ok


def test_limit_estimates():
    f0, sigma, g0 = estimate_f0_g0(make_spec("pure_power", 0.5, "pure_power", 2.0))
    assert (f0, sigma, g0) == pytest.approx((0.5, 2.0, 1.0), rel=1e-6)
    est = estimate_f0_g0(make_spec("exp_neg", 0.5, "one_minus_exp_neg", 2.0))
    assert est.converged and all(est.flags.values())
    assert est.sigma_est == pytest.approx(3.0, rel=1e-5)
    assert est.g0_est == pytest.approx(1.0, rel=1e-4)


def test_sampled_negative_slope():
    assert sampled_negative_slope(lambda t: -2.0 * t, 0.0, 1.0) == pytest.approx(2.0)
    assert sampled_negative_slope(np.sqrt, 0.0, 1.0) == 0.0
    assert sampled_negative_slope(np.sqrt, 1.0, 1.0) == 0.0


@pytest.mark.parametrize("g_family, sigma, g0", [
    ("pure_power", 2.0, 1.0),
    ("one_minus_exp_neg", 3.0, 1.0),
    ("arctan_shift", 2.0, np.pi / 4.0),
    ("rational_sr", 3.0, 1.0),
    ("kps_over_1ps", 2.0, 4.0),
])
def test_g_family_limits(g_family, sigma, g0):
    spec = make_spec("pure_power", 0.5, g_family, 2.0)
    assert spec.sigma == pytest.approx(sigma)
    assert spec.g0 == pytest.approx(g0)
    est = estimate_f0_g0(spec)
    assert est.converged, est.flags
    assert est.sigma_est == pytest.approx(sigma, rel=1e-5)
    assert est.g0_est == pytest.approx(g0, rel=1e-4)
    report = validate_hypotheses(spec, 1)
    assert report.ok, report.failed


def test_rational_sigma_follows_r():
    spec = make_spec(g_family="rational_sr", p=2.0, g_r=0.5)
    assert spec.sigma == pytest.approx(2.5)
    assert estimate_f0_g0(spec).sigma_est == pytest.approx(2.5, rel=1e-5)


def test_f0_of_bounded_ratio_family():
    # f(s) = s^0.5 / (1 + s): s^(1-q) f'(s) -> q
    est = estimate_f0_g0(make_spec("inv_one_plus_sr", 0.5, "pure_power", 2.0))
    assert est.f0_est == pytest.approx(0.5, rel=1e-6)
    assert make_spec("inv_one_plus_sr", 0.5).f0 == pytest.approx(0.5)
