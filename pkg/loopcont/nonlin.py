"""
Nonlinearity families f(s) = s^q h(s), g(s) = s^p m(s), the extension F, the
regularized reaction term and sampled checks of the growth/shape hypotheses.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .errors import GuardViolationError

logger = logging.getLogger(__name__)

F_KINDS = ("pure_power", "inv_one_plus_sr", "exp_neg", "oscillatory")
G_KINDS = ("pure_power", "one_minus_exp_neg", "arctan_shift", "rational_sr", "kps_over_1ps")

LADDER = 2.0 ** np.arange(-30, 31)


def _as_array(s) -> np.ndarray:
    return np.asarray(s, dtype=float)


def _positive_part(s: np.ndarray) -> np.ndarray:
    """s where s > 0 and 1 elsewhere, so closed forms never see s <= 0"""
    return np.where(s > 0, s, 1.0)


@dataclass(frozen=True)
class FFamily:
    """f(s) = s^q h(s)"""

    kind: str
    q: float
    r: float = 1.0

    @property
    def h0(self) -> float:
        """h(0+); the oscillatory family has no limit and reports its mean value"""
        return 2.0 if self.kind == "oscillatory" else 1.0

    @property
    def admissible(self) -> bool:
        return self.kind != "oscillatory"

    def h(self, s) -> np.ndarray:
        s = _as_array(s)
        if self.kind == "pure_power":
            return np.ones_like(s)
        if self.kind == "inv_one_plus_sr":
            return 1.0 / (1.0 + s ** self.r)
        if self.kind == "exp_neg":
            return np.exp(-s)
        return np.sin(1.0 / s) + 2.0

    def dh(self, s) -> np.ndarray:
        s = _as_array(s)
        if self.kind == "pure_power":
            return np.zeros_like(s)
        if self.kind == "inv_one_plus_sr":
            return -self.r * s ** (self.r - 1.0) / (1.0 + s ** self.r) ** 2
        if self.kind == "exp_neg":
            return -np.exp(-s)
        return -np.cos(1.0 / s) / s ** 2

    def derivative_ratio(self, s) -> np.ndarray:
        """s^{1-q} f'(s) = q h(s) + s h'(s)"""
        s = _as_array(s)
        if self.kind == "inv_one_plus_sr":
            sr = s ** self.r
            return self.q / (1.0 + sr) - self.r * sr / (1.0 + sr) ** 2
        return self.q * self.h(s) + s * self.dh(s)

    def label(self) -> str:
        if self.kind == "pure_power":
            return f"s^{self.q:g}"
        if self.kind == "inv_one_plus_sr":
            return f"s^{self.q:g}/(1+s^{self.r:g})"
        if self.kind == "exp_neg":
            return f"s^{self.q:g}*exp(-s)"
        return f"s^{self.q:g}*(sin(1/s)+2)"


@dataclass(frozen=True)
class GFamily:
    """g(s) = s^p m(s)"""

    kind: str
    p: float
    r: float = 1.0
    k: float = 4.0

    @property
    def sigma(self) -> float:
        if self.kind == "one_minus_exp_neg":
            return self.p + 1.0
        if self.kind == "rational_sr":
            return self.p + self.r
        return self.p

    @property
    def g0(self) -> float:
        if self.kind == "arctan_shift":
            return float(np.pi / 4.0)
        if self.kind == "kps_over_1ps":
            return float(self.k)
        if self.kind == "rational_sr" and self.r == 0:
            return 0.5
        return 1.0

    def m(self, s) -> np.ndarray:
        s = _as_array(s)
        if self.kind == "pure_power":
            return np.ones_like(s)
        if self.kind == "one_minus_exp_neg":
            return -np.expm1(-s)
        if self.kind == "arctan_shift":
            return np.arctan(s + 1.0)
        if self.kind == "rational_sr":
            sr = s ** self.r
            return sr / (1.0 + sr)
        return (self.k + s) / (1.0 + s)

    def dm(self, s) -> np.ndarray:
        s = _as_array(s)
        if self.kind == "pure_power":
            return np.zeros_like(s)
        if self.kind == "one_minus_exp_neg":
            return np.exp(-s)
        if self.kind == "arctan_shift":
            return 1.0 / (1.0 + (s + 1.0) ** 2)
        if self.kind == "rational_sr":
            return self.r * s ** (self.r - 1.0) / (1.0 + s ** self.r) ** 2
        return (1.0 - self.k) / (1.0 + s) ** 2

    def value(self, s) -> np.ndarray:
        s = _as_array(s)
        if self.kind == "rational_sr":
            return s ** (self.p + self.r) / (1.0 + s ** self.r)
        return s ** self.p * self.m(s)

    def derivative(self, s) -> np.ndarray:
        s = _as_array(s)
        if self.kind == "rational_sr":
            sr = s ** self.r
            return s ** (self.p + self.r - 1.0) * (self.p + self.r + self.p * sr) / (1.0 + sr) ** 2
        return s ** (self.p - 1.0) * (self.p * self.m(s) + s * self.dm(s))

    def label(self) -> str:
        return {
            "pure_power": f"s^{self.p:g}",
            "one_minus_exp_neg": f"s^{self.p:g}*(1-exp(-s))",
            "arctan_shift": f"s^{self.p:g}*arctan(s+1)",
            "rational_sr": f"s^{self.p + self.r:g}/(1+s^{self.r:g})",
            "kps_over_1ps": f"s^{self.p:g}*({self.k:g}+s)/(1+s)",
        }[self.kind]


def strong_convexity_threshold(k: float) -> float:
    """Smallest p for which s^p (k+s)/(1+s) has (g/s)' > 0 on (0, inf), k > 1"""
    return 2.0 * np.sqrt(k) / (np.sqrt(k) + 1.0)


@dataclass(frozen=True)
class NonlinSpec:
    f_family: FFamily
    g_family: GFamily

    @property
    def q(self) -> float:
        return self.f_family.q

    @property
    def f0(self) -> float:
        return self.q * self.f_family.h0

    @property
    def p(self) -> float:
        return self.g_family.p

    @property
    def sigma(self) -> float:
        return self.g_family.sigma

    @property
    def g0(self) -> float:
        return self.g_family.g0

    @property
    def f0_over_q(self) -> float:
        return self.f_family.h0

    def f(self, s) -> np.ndarray:
        s = _as_array(s)
        sp_ = _positive_part(s)
        return np.where(s > 0, sp_ ** self.q * self.f_family.h(sp_), 0.0)

    def df(self, s) -> np.ndarray:
        s = _as_array(s)
        sp_ = _positive_part(s)
        return np.where(s > 0, sp_ ** (self.q - 1.0) * self.f_family.derivative_ratio(sp_), np.inf)

    def F(self, s) -> np.ndarray:
        s = _as_array(s)
        sp_ = _positive_part(s)
        return np.where(s > 0, sp_ * self.f_family.h(sp_), self.f0_over_q * s)

    def dF(self, s) -> np.ndarray:
        s = _as_array(s)
        sp_ = _positive_part(s)
        fam = self.f_family
        return np.where(s > 0, fam.h(sp_) + sp_ * fam.dh(sp_), self.f0_over_q)

    def g(self, s) -> np.ndarray:
        s = _as_array(s)
        sp_ = _positive_part(s)
        return np.where(s > 0, self.g_family.value(sp_), self.g_prime_zero * s)

    def dg(self, s) -> np.ndarray:
        s = _as_array(s)
        sp_ = _positive_part(s)
        return np.where(s > 0, self.g_family.derivative(sp_), self.g_prime_zero)

    @property
    def g_prime_zero(self) -> float:
        # sigma > 1 for every family
        return 0.0

    def describe(self) -> Dict[str, object]:
        return {
            "f": self.f_family.label(), "g": self.g_family.label(),
            "q": self.q, "f0": self.f0, "p": self.p, "sigma": self.sigma, "g0": self.g0,
        }


def make_spec(f_family: str = "pure_power", q: float = 0.5, g_family: str = "pure_power",
              p: float = 2.0, f_r: float = 1.0, g_r: float = 1.0, g_k: float = 4.0) -> NonlinSpec:
    if f_family not in F_KINDS:
        raise ValueError(f"Unknown f family {f_family!r}; expected one of {F_KINDS}")
    if g_family not in G_KINDS:
        raise ValueError(f"Unknown g family {g_family!r}; expected one of {G_KINDS}")
    if not 0 < q < 1:
        raise ValueError(f"q must lie in (0, 1), got {q}")
    if p <= 1:
        raise ValueError(f"p must exceed 1, got {p}")
    return NonlinSpec(FFamily(f_family, q, f_r), GFamily(g_family, p, g_r, g_k))


def eval_F(spec: NonlinSpec, s):
    """F(s) = s^{1-q} f(s) for s >= 0 and (f0/q) s for s < 0"""
    out = spec.F(s)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class RegularizedTerm:
    """s -> (s + eps)^{q-1} F(s) and the reaction built from it"""

    eps: float
    spec: NonlinSpec

    def check_guard(self, s: np.ndarray, derivative: bool = False) -> None:
        s = _as_array(s)
        if self.eps > 0:
            bad = s <= -self.eps / 2.0
        elif derivative:
            bad = s <= 0
        else:
            bad = s < 0
        if np.any(bad):
            node = int(np.flatnonzero(np.atleast_1d(bad))[0])
            raise GuardViolationError(
                f"State {float(np.atleast_1d(s)[node]):.3g} at node {node} outside the admissible region "
                f"(eps={self.eps:g})")

    def value(self, s) -> np.ndarray:
        s = _as_array(s)
        q, eps = self.spec.q, self.eps
        if eps > 0:
            return (s + eps) ** (q - 1.0) * self.spec.F(s)
        sp_ = _positive_part(s)
        return np.where(s > 0, sp_ ** q * self.spec.f_family.h(sp_), 0.0)

    def derivative(self, s) -> np.ndarray:
        s = _as_array(s)
        q, eps = self.spec.q, self.eps
        if eps > 0:
            base = s + eps
            return ((q - 1.0) * base ** (q - 2.0) * self.spec.F(s)
                    + base ** (q - 1.0) * self.spec.dF(s))
        return self.spec.df(s)

    def reaction(self, s, lam: float, a_vals, b_vals, check: bool = True) -> np.ndarray:
        if check:
            self.check_guard(s)
        return lam * a_vals * self.value(s) + b_vals * self.spec.g(s)

    def reaction_jacobian(self, s, lam: float, a_vals, b_vals, check: bool = True) -> np.ndarray:
        if check:
            self.check_guard(s, derivative=True)
        return lam * a_vals * self.derivative(s) + b_vals * self.spec.dg(s)


def eval_reaction(term: RegularizedTerm, s, lam: float, a_val, b_val):
    """lam * a * (s+eps)^{q-1} F(s) + b * g(s); guard s > -eps/2"""
    out = term.reaction(s, lam, a_val, b_val)
    return float(out) if np.ndim(out) == 0 else out


def eval_reaction_jacobian(term: RegularizedTerm, s, lam: float, a_val, b_val):
    out = term.reaction_jacobian(s, lam, a_val, b_val)
    return float(out) if np.ndim(out) == 0 else out


PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"


@dataclass
class ClauseResult:
    verdict: str
    detail: str = ""

    def to_dict(self):
        return {"verdict": self.verdict, "detail": self.detail}


@dataclass
class HypothesisReport:
    N: int
    clauses: Dict[str, ClauseResult] = field(default_factory=dict)
    slope_constant: float = 0.0

    @property
    def failed(self):
        return sorted(k for k, v in self.clauses.items() if v.verdict == FAIL)

    @property
    def inconclusive(self):
        return sorted(k for k, v in self.clauses.items() if v.verdict == INCONCLUSIVE)

    @property
    def ok(self) -> bool:
        return not self.failed

    def verdict(self, clause: str) -> str:
        return self.clauses[clause].verdict

    def to_dict(self):
        return {"N": self.N, "ok": self.ok, "slope_constant": self.slope_constant,
                "clauses": {k: v.to_dict() for k, v in self.clauses.items()}}


def _decays(values: np.ndarray) -> str:
    """Verdict for values sampled on LADDER tending to 0 at the ladder's small end"""
    near, far = values[:10], values[20:31]
    if near.max() < far.min():
        return PASS
    if near.min() > far.max():
        return FAIL
    return INCONCLUSIVE


def _grows(values: np.ndarray) -> str:
    near, far = values[:10], values[20:31]
    if near.min() > far.max():
        return PASS
    if near.max() < far.min():
        return FAIL
    return INCONCLUSIVE


def _converges(values: np.ndarray) -> Tuple[str, float]:
    """Cauchy-type test on values at s = 2^-k ordered from coarse to fine"""
    diffs = np.abs(np.diff(values))
    limit = float(values[-1])
    scale = 1.0 + abs(limit)
    if not np.all(np.isfinite(values)):
        return FAIL, limit
    if diffs[-5:].max() <= 1e-9 * scale:
        return PASS, limit
    early, late = diffs[:5].max(), diffs[-5:].max()
    if late <= 0.75 * early:
        return PASS, limit
    if late > 1e-3 * scale:
        return FAIL, limit
    return INCONCLUSIVE, limit


def dyadic_band_slopes(func: Callable, bands=range(0, 41), samples: int = 64) -> np.ndarray:
    """Largest negative difference quotient of ``func`` inside [2^-k-1, 2^-k] per band"""
    slopes = []
    for k in bands:
        t = np.linspace(2.0 ** (-k - 1), 2.0 ** (-k), samples)
        dq = np.diff(func(t)) / np.diff(t)
        slopes.append(max(0.0, float(-dq.min())))
    return np.array(slopes)


def sampled_negative_slope(func: Callable, lo: float, hi: float, samples: int = 257) -> float:
    """max(0, -min difference quotient) of ``func`` on [lo, hi], sampled uniformly and geometrically"""
    if hi <= lo:
        return 0.0
    t = np.linspace(lo, hi, samples)
    if lo <= 0:
        geo = np.geomspace(max(hi, 1e-300) * 1e-12, hi, samples)
        t = np.union1d(np.union1d(t, geo), [0.0])
    dq = np.diff(func(t)) / np.diff(t)
    return max(0.0, float(-dq.min()))


def validate_hypotheses(spec: NonlinSpec, N: int) -> HypothesisReport:
    """
    Sample every growth and shape hypothesis on the geometric ladder 2^-30..2^30.
    Exponent conditions are arithmetic; ``inconclusive`` marks derivatives
    within 1e-12 (relative to their natural scale) of zero.
    """
    report = HypothesisReport(N=N)
    c = report.clauses
    s = LADDER
    fam = spec.f_family

    f_vals = spec.f(s)
    c["f_positive"] = ClauseResult(PASS if np.all(f_vals > 0) else FAIL)
    c["f_superlinear_at_zero"] = ClauseResult(_grows(f_vals / s))
    c["f_sublinear_at_infinity"] = ClauseResult(_decays((f_vals / s)[::-1]))

    fine = 2.0 ** -np.arange(10, 41, dtype=float)
    verdict, limit = _converges(fam.h(fine))
    c["f_power_limit"] = ClauseResult(verdict, f"f/s^q -> {limit:.6g}")
    verdict, f0_lim = _converges(fam.derivative_ratio(fine))
    if verdict == PASS and not (0 < f0_lim < np.inf):
        verdict = FAIL
    c["f_derivative_limit"] = ClauseResult(verdict, f"s^(1-q) f' -> {f0_lim:.6g}")

    slopes = dyadic_band_slopes(spec.f)
    report.slope_constant = float(slopes.max())
    coarse, finest = slopes[15:21].max(), slopes[35:41].max()
    if finest > 0 and finest > 100.0 * coarse:
        c["f_slope_condition"] = ClauseResult(FAIL, f"difference quotients blow up ({finest:.3g})")
    else:
        c["f_slope_condition"] = ClauseResult(PASS, f"M0 ~ {report.slope_constant:.3g}")

    dh = fam.dh(s)
    tol = 1e-12 * np.abs(fam.h(s)) / s
    c["f_strong_concavity"] = ClauseResult(PASS if np.all(dh <= tol) else FAIL)

    factor_ok = all(c[k].verdict == PASS for k in ("f_strong_concavity", "f_power_limit", "f_derivative_limit"))
    factor_fail = any(c[k].verdict == FAIL for k in ("f_strong_concavity", "f_power_limit", "f_derivative_limit"))
    c["f_factorization"] = ClauseResult(PASS if factor_ok else (FAIL if factor_fail else INCONCLUSIVE))

    g_vals = spec.g(s)
    c["g_positive"] = ClauseResult(PASS if np.all(g_vals > 0) else FAIL)
    c["g_sublinear_at_zero"] = ClauseResult(_decays(g_vals / s))
    c["g_superlinear_at_infinity"] = ClauseResult(_grows((g_vals / s)[::-1]))

    slope = (s * spec.dg(s) - g_vals) / s ** 2
    tol = 1e-12 * np.abs(g_vals / s) / s
    if np.any(slope < -tol):
        first = float(s[np.argmax(slope < -tol)])
        c["g_strong_convexity"] = ClauseResult(FAIL, f"(g/s)' < 0 at s = {first:g}")
    elif np.any(np.abs(slope) <= tol):
        c["g_strong_convexity"] = ClauseResult(INCONCLUSIVE, "(g/s)' vanishes on the ladder")
    else:
        c["g_strong_convexity"] = ClauseResult(PASS)

    large = 2.0 ** np.arange(10, 41, dtype=float)
    verdict, limit = _converges(spec.g(large) / large ** spec.p)
    if verdict == PASS and not (0 < limit < np.inf):
        verdict = FAIL
    c["g_power_growth"] = ClauseResult(verdict, f"g/s^p -> {limit:.6g}")

    verdict, limit = _converges(spec.g(fine) / fine ** spec.sigma)
    if spec.sigma <= 1 or (verdict == PASS and not (0 < limit < np.inf)):
        verdict = FAIL
    c["g_power_decay"] = ClauseResult(verdict, f"g/s^sigma -> {limit:.6g} (sigma={spec.sigma:g})")

    c.update(exponent_clauses(spec, N))
    if report.failed:
        logger.info(f"Hypothesis check failed clauses: {', '.join(report.failed)}")
    return report


def exponent_clauses(spec: NonlinSpec, N: int, gamma: Optional[float] = None) -> Dict[str, ClauseResult]:
    out = {}
    p, sigma = spec.p, spec.sigma
    if N > 2:
        bound = (N + 2) / (N - 2)
        out["p_subcritical"] = ClauseResult(PASS if p < bound else FAIL, f"p < {bound:g}")
        bound = 2 * N / (N - 2)
        out["sigma_subcritical"] = ClauseResult(PASS if sigma < bound else FAIL, f"sigma < {bound:g}")
        bound = (N + 1) / (N - 1)
        out["p_neumann_subcritical"] = ClauseResult(PASS if p < bound else FAIL, f"p < {bound:g}")
        if gamma is not None:
            bound = (N + 1 + gamma) / (N - 1)
            out["p_hb_subcritical"] = ClauseResult(PASS if p < bound else FAIL, f"p < {bound:g}")
    else:
        for key in ("p_subcritical", "sigma_subcritical", "p_neumann_subcritical"):
            out[key] = ClauseResult(PASS, "vacuous for N <= 2")
    return out


@dataclass
class LimitEstimates:
    f0_est: float
    sigma_est: float
    g0_est: float
    converged: bool
    flags: Dict[str, bool] = field(default_factory=dict)

    def __iter__(self):
        return iter((self.f0_est, self.sigma_est, self.g0_est))


def _richardson(values: np.ndarray) -> Tuple[float, bool]:
    """First-order Richardson on a sequence sampled at s = 2^-k; returns last value and convergence"""
    extrap = 2.0 * values[1:] - values[:-1]
    last, prev = extrap[-1], extrap[-2]
    ok = bool(np.isfinite(last) and abs(last - prev) <= 1e-6 * max(abs(last), 1e-300))
    return float(last), ok


def estimate_f0_g0(spec: NonlinSpec) -> LimitEstimates:
    """Extrapolated limits of s^{1-q} f'(s), log2 ratios of g and g/s^sigma over s = 2^-k, k = 10..40"""
    s = 2.0 ** -np.arange(10, 41, dtype=float)
    f0_est, f_ok = _richardson(spec.f_family.derivative_ratio(s))
    g = spec.g(s)
    sigma_seq = np.log2(g[:-1] / g[1:])
    sigma_est, sigma_ok = _richardson(sigma_seq)
    g0_est, g0_ok = _richardson(g / s ** sigma_est)
    flags = {"f0": f_ok, "sigma": sigma_ok, "g0": g0_ok}
    if not all(flags.values()):
        logger.warning(f"Limit extrapolation did not converge: {flags}")
    return LimitEstimates(f0_est, sigma_est, g0_est, all(flags.values()), flags)
