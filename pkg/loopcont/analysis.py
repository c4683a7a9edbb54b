"""
A priori constants, comparison supersolutions, the small-solution floor and
positivity classification of computed solutions.

Every sup/inf constant is located on a geometric sample and refined with
scipy.optimize (brentq for thresholds, bounded minimize_scalar for extrema).
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.optimize import brentq, minimize_scalar
from scipy.sparse.linalg import spsolve

from .continuation import Branch
from .eigen import principal_eigs
from .errors import (BoundsError, FloorError, GuardViolationError, NoPositivePrincipalEigenvalueError,
                     SingularJacobianError, StructuralHypothesisError)
from .mesh import BoundaryCondition, Grid
from .nonlin import FFamily, NonlinSpec, sampled_negative_slope
from .nsolve import ProblemContext, deflated_solve, default_seeds, eps_homotopy
from .weights import Ball, WeightField, check_ab_posi

logger = logging.getLogger(__name__)

XTOL = 1e-10
SAMPLES = 2001
SUPERSOLUTION_TOL = 1e-10


@dataclass
class AprioriBounds:
    lambda_bar: float
    lambda_bar_neg: float
    lam_B: float
    K0: float
    M1: float
    s0: float
    b_inf: float
    a0: float
    b0: float
    side: str = "plus"
    ball: Optional[Ball] = None
    C_Lambda: Optional[float] = None
    s1: Optional[float] = None

    @property
    def lambda_limit(self) -> float:
        return min(self.lambda_bar, self.lambda_bar_neg)

    def to_dict(self):
        out = {k: getattr(self, k) for k in ("lambda_bar", "lambda_bar_neg", "lam_B", "K0", "M1", "s0",
                                             "b_inf", "a0", "b0", "side", "C_Lambda", "s1")}
        out["ball"] = self.ball.to_dict() if self.ball else None
        return out


@dataclass
class SupersolutionCertificate:
    case: str
    C: float = 0.0
    C1: float = 0.0
    delta: float = 0.0
    s1: float = 0.0
    Lambda: float = 0.0
    w0: Optional[np.ndarray] = None
    w_bar: Optional[np.ndarray] = None
    nodes: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))
    min_residual: float = float("inf")
    violations: List[int] = field(default_factory=list)
    message: str = ""

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {"case": self.case, "C": self.C, "C1": self.C1, "delta": self.delta, "s1": self.s1,
                "Lambda": self.Lambda, "w0_max": float(self.w0.max()) if self.w0 is not None and self.w0.size else None,
                "min_residual": self.min_residual if np.isfinite(self.min_residual) else None,
                "violations": self.violations, "ok": self.ok, "message": self.message}


@dataclass
class FloorCertificate:
    C_Lambda: float
    K2: float
    M0: float
    s1: float
    s0: float
    Lambda: float
    ball: Ball
    a0: float
    lam_B: float

    def to_dict(self):
        return {"C_Lambda": self.C_Lambda, "K2": self.K2, "M0": self.M0, "s1": self.s1, "s0": self.s0,
                "Lambda": self.Lambda, "ball": self.ball.to_dict(), "a0": self.a0, "lam_B": self.lam_B}


@dataclass
class PositivityVerdict:
    klass: str
    min_interior: float
    hopf_margin: float
    dead_nodes: np.ndarray

    def to_dict(self):
        return {"class": self.klass, "min_interior": self.min_interior, "hopf_margin": self.hopf_margin,
                "dead_nodes": [int(i) for i in self.dead_nodes]}


def _ladder(hi: float, lo_exp: float = -12.0) -> np.ndarray:
    return np.geomspace(hi * 10.0 ** lo_exp, hi, SAMPLES)


def _refine_extremum(func, s: np.ndarray, values: np.ndarray, maximize: bool) -> float:
    """Extremum of ``func`` on the sampled range, polished inside the best bracket"""
    idx = int(np.argmax(values) if maximize else np.argmin(values))
    best = float(values[idx])
    lo, hi = s[max(idx - 1, 0)], s[min(idx + 1, len(s) - 1)]
    if hi > lo:
        sign = -1.0 if maximize else 1.0
        res = minimize_scalar(lambda t: sign * float(func(t)), bounds=(lo, hi), method="bounded",
                              options={"xatol": XTOL * hi})
        cand = float(func(res.x))
        best = max(best, cand) if maximize else min(best, cand)
    return best


def _crossover(spec: NonlinSpec, threshold: float) -> float:
    """Smallest s0 with g(s)/s >= threshold for every s > s0"""
    ratio = lambda s: float(spec.g(s) / s) - threshold
    ladder = 2.0 ** np.arange(-60, 200, dtype=float)
    vals = spec.g(ladder) / ladder - threshold
    below = np.flatnonzero(vals < 0)
    if below.size == 0:
        return float(ladder[0])
    i = int(below[-1])
    if i == len(ladder) - 1:
        raise BoundsError(f"g(s)/s never reaches {threshold:.6g}; g is not superlinear at infinity")
    return float(brentq(ratio, ladder[i], ladder[i + 1], xtol=XTOL * ladder[i], rtol=1e-14))


def _side_bound(field_: WeightField, spec: NonlinSpec, side: str):
    report = check_ab_posi(field_)
    if not report.ok:
        raise StructuralHypothesisError(f"Positivity balls unavailable: {report.message}")
    ball, a0, b0 = report.witness.side(side)
    lam_B = ball.dirichlet_eigenvalue()
    b_inf = float(np.max(np.abs(field_.b_full)))
    s0 = _crossover(spec, lam_B / b0)

    s = _ladder(s0)
    g_over_s = np.abs(spec.g(s) / s)
    K0 = _refine_extremum(lambda t: abs(spec.g(t) / t), s, g_over_s, maximize=True)
    if not np.isfinite(K0):
        raise BoundsError("sup |g(s)/s| on (0, s0] is unbounded")
    F_over_s = spec.F(s) / s
    M1 = _refine_extremum(lambda t: spec.F(t) / t, s, F_over_s, maximize=False)
    if not M1 > 0:
        raise BoundsError(f"inf F(s)/s on (0, s0] is {M1:.3g}; f violates the power limit at zero")
    lambda_bar = (lam_B + b_inf * K0) * (s0 + 1.0) ** (1.0 - spec.q) / (a0 * M1)
    return dict(lambda_bar=float(lambda_bar), lam_B=lam_B, K0=float(K0), M1=float(M1), s0=s0,
                b_inf=b_inf, a0=a0, b0=b0, ball=ball)


def compute_lambda_bar(field_: WeightField, spec: NonlinSpec, side: str = "plus") -> AprioriBounds:
    """
    lambda_bar = (lam_B + b_inf K0) (s0 + 1)^(1-q) / (a0 M1) for the ball B
    (side ``plus``) and for B' with a replaced by -a (side ``minus``).
    The constants reported belong to ``side``.
    """
    plus = _side_bound(field_, spec, "plus")
    minus = _side_bound(field_, spec, "minus")
    chosen = plus if side == "plus" else minus
    bounds = AprioriBounds(lambda_bar=plus["lambda_bar"], lambda_bar_neg=minus["lambda_bar"], side=side,
                           **{k: v for k, v in chosen.items() if k != "lambda_bar"})
    logger.info(f"A priori bounds: lambda_bar={bounds.lambda_bar:.6g}, "
                f"lambda_bar_neg={bounds.lambda_bar_neg:.6g}")
    return bounds


def _f_threshold_up(spec: NonlinSpec, delta: float) -> float:
    """Smallest s with f(t)/t <= delta for all t >= s"""
    ladder = 2.0 ** np.arange(-60, 400, dtype=float)
    with np.errstate(over="ignore"):
        vals = spec.f(ladder) / ladder
    above = np.flatnonzero(vals > delta)
    if above.size == 0:
        return float(ladder[0])
    i = int(above[-1])
    if i == len(ladder) - 1:
        raise BoundsError(f"f(s)/s never drops below {delta:.3g}")
    return float(brentq(lambda t: float(spec.f(t) / t) - delta, ladder[i], ladder[i + 1],
                        xtol=XTOL * ladder[i], rtol=1e-14))


def build_supersolution(field_: WeightField, spec: NonlinSpec, lam_range: Union[float, Sequence[float]],
                        C1: Optional[float], ctx: ProblemContext) -> SupersolutionCertificate:
    """
    w_bar = C (w0 + 1) with -Delta w0 = 1 on {b < 0}, w0 = 0 on the interface
    and the outer boundary condition of the grid. C = max(C1, s1) where
    f(s) <= delta s for s >= s1 and
    delta = 1 / (Lambda max(|a+|, |a-|) (|w0| + 1)).
    """
    Lambda = float(np.max(np.abs(np.atleast_1d(lam_range))))
    if Lambda <= 0:
        raise ValueError(f"lam_range must contain a nonzero bound, got {lam_range!r}")
    C1 = 0.0 if C1 is None else float(C1)
    D = field_.d_b_nodes
    if D.size == 0:
        return SupersolutionCertificate(case="trivial", C1=C1, Lambda=Lambda,
                                        message="b > 0 everywhere; bound delegated to the norm bound hypothesis")
    A = ctx.A
    A_DD = sp.csc_matrix(A[D][:, D])
    w0_D = np.atleast_1d(spsolve(A_DD, np.ones(D.size)))
    w0 = np.zeros(ctx.size)
    w0[D] = w0_D

    a = field_.a_vals
    a_sup = max(float(np.max(np.maximum(a, 0.0))), float(np.max(np.maximum(-a, 0.0))))
    delta = 1.0 / (Lambda * a_sup * (float(w0.max()) + 1.0))
    s1 = _f_threshold_up(spec, delta)
    C = max(C1, s1)
    w_bar = C * (w0 + 1.0)

    interface = np.setdiff1d(np.arange(ctx.size), D)
    coupling = A[D][:, interface] @ np.full(interface.size, C1)
    res = A_DD @ w_bar[D] + coupling - Lambda * a_sup * spec.f(w_bar[D])
    scale = 1.0 + C
    bad = D[res < -SUPERSOLUTION_TOL * scale]
    cert = SupersolutionCertificate(case="constructed", C=C, C1=C1, delta=delta, s1=s1, Lambda=Lambda,
                                    w0=w0, w_bar=w_bar, nodes=D, min_residual=float(res.min()),
                                    violations=[int(i) for i in bad])
    if bad.size:
        cert.message = f"supersolution inequality fails at {bad.size} node(s); tighten the s1 search"
        logger.warning(f"Supersolution check failed at node {int(bad[0])}")
    return cert


def compute_small_solution_floor(field_: WeightField, spec: NonlinSpec, Lambda: float,
                                 ball: Optional[Ball] = None, ctx: Optional[ProblemContext] = None,
                                 bounds: Optional[AprioriBounds] = None) -> FloorCertificate:
    """C_Lambda = min(s0, s1) with f(s)/s >= (lam_B + b_inf K2) / (Lambda a0) for s <= s1"""
    if Lambda <= 0:
        raise ValueError(f"Lambda must be positive, got {Lambda}")
    bounds = bounds or compute_lambda_bar(field_, spec, "plus")
    lam_B, a0 = bounds.lam_B, bounds.a0
    if ball is not None and ball != bounds.ball:
        coords = field_.grid.full_node_coords
        nodes = ball.nodes(coords)
        if nodes.size == 0 or field_.a_full[nodes].min() <= 0:
            raise StructuralHypothesisError(f"Ball {ball} is not inside the set where a > 0")
        lam_B, a0 = ball.dirichlet_eigenvalue(), float(field_.a_full[nodes].min())
    ball = ball or bounds.ball
    s0 = bounds.s0

    s = _ladder(s0)
    K2 = _refine_extremum(lambda t: abs(spec.dg(t)), s, np.abs(spec.dg(s)), maximize=True)
    M0 = sampled_negative_slope(spec.f, 0.0, s0)
    T = (lam_B + bounds.b_inf * K2) / (Lambda * a0)

    log_ratio = lambda t: float(np.log(spec.f(np.exp(t))) - t - np.log(T))
    lo, hi = np.log(1e-280), np.log(s0)
    if log_ratio(hi) >= 0:
        s1 = s0
    elif log_ratio(lo) < 0:
        raise FloorError(f"f(s)/s >= {T:.6g} has no solution below s0 = {s0:.6g}")
    else:
        s1 = float(np.exp(brentq(log_ratio, lo, hi, xtol=1e-14, rtol=1e-15)))
    C_Lambda = min(s0, s1)
    logger.info(f"Small-solution floor C_Lambda={C_Lambda:.6g} (Lambda={Lambda:.6g}, s1={s1:.6g})")
    return FloorCertificate(C_Lambda=C_Lambda, K2=float(K2), M0=M0, s1=s1, s0=s0, Lambda=Lambda,
                            ball=ball, a0=a0, lam_B=lam_B)


def check_floor(branches: Sequence[Branch], certificate: FloorCertificate, grid: Grid,
                lambda0: Optional[float] = None, window: Optional[float] = None) -> List[Dict]:
    """
    Points with lambda >= Lambda whose maximum over the ball is below C_Lambda;
    with ``lambda0`` also points within ``window`` of it whose norm is below C_Lambda/2.
    """
    nodes = certificate.ball.nodes(grid.node_coords)
    violations = []
    for br in branches:
        for i, p in enumerate(br.points):
            if p.norm_inf == 0:
                continue
            if p.lam >= certificate.Lambda and p.u[nodes].max() < certificate.C_Lambda:
                violations.append({"eps": br.eps, "step": i, "lambda": p.lam, "kind": "ball_floor",
                                   "value": float(p.u[nodes].max())})
            if lambda0 is not None and abs(p.lam - lambda0) < window and p.norm_inf < certificate.C_Lambda / 2:
                violations.append({"eps": br.eps, "step": i, "lambda": p.lam, "kind": "norm_floor",
                                   "value": p.norm_inf})
    return violations


def check_supersolution_bound(branch: Branch, certificate: SupersolutionCertificate,
                              field_: WeightField, tol: float = 1e-8) -> List[Dict]:
    """Points bounded by C1 on {b > 0} that exceed w_bar on {b < 0}"""
    if certificate.case == "trivial":
        return []
    positive = np.flatnonzero(field_.b_vals > 0)
    D = certificate.nodes
    violations = []
    for i, p in enumerate(branch.points):
        if positive.size and p.u[positive].max() > certificate.C1:
            continue
        excess = p.u[D] - certificate.w_bar[D]
        if excess.max() > tol:
            violations.append({"eps": branch.eps, "step": i, "lambda": p.lam, "excess": float(excess.max())})
    return violations


def _hopf_slopes(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Inward one-sided second-order slopes (4 u1 - u2) / (2h) at every boundary face"""
    vals = u.reshape(grid.shape)
    slopes = []
    for axis, h in enumerate(grid.h):
        first = np.take(vals, 0, axis=axis)
        second = np.take(vals, 1, axis=axis)
        slopes.append(np.ravel((4.0 * first - second) / (2.0 * h)))
        first = np.take(vals, -1, axis=axis)
        second = np.take(vals, -2, axis=axis)
        slopes.append(np.ravel((4.0 * first - second) / (2.0 * h)))
    return np.concatenate(slopes)


def classify_positivity(u: np.ndarray, grid: Grid, pos_tol: float = 1e-8) -> PositivityVerdict:
    """
    strictly_positive when min u > pos_tol |u| and the boundary margin clears
    pos_tol |u| / h (Dirichlet inward slope) or pos_tol |u| (Neumann, min u).
    """
    u = np.asarray(u, dtype=float)
    norm = float(np.max(np.abs(u), initial=0.0))
    if norm == 0.0:
        return PositivityVerdict("trivial", 0.0, 0.0, np.empty(0, dtype=int))
    thr = pos_tol * norm
    dead = np.flatnonzero(u <= thr)
    min_interior = float(u.min())
    if grid.bc is BoundaryCondition.DIRICHLET:
        hopf = float(_hopf_slopes(u, grid).min())
        hopf_ok = hopf > thr / min(grid.h)
    else:
        hopf = min_interior
        hopf_ok = hopf > thr
    klass = "strictly_positive" if min_interior > thr and hopf_ok else "dead_core"
    return PositivityVerdict(klass, min_interior, hopf, dead)


def check_positivity_continuation(branch: Branch, grid: Grid, pos_tol: float = 1e-8) -> List[Dict]:
    """dead_core points whose two arclength neighbours are strictly positive"""
    classes = [classify_positivity(p.u, grid, pos_tol).klass for p in branch.points]
    anomalies = []
    for i in range(1, len(classes) - 1):
        if classes[i] == "dead_core" and classes[i - 1] == classes[i + 1] == "strictly_positive":
            anomalies.append({"eps": branch.eps, "step": i, "lambda": branch.points[i].lam,
                              "kind": "isolated_dead_core"})
    return anomalies


@dataclass
class QScanRow:
    q: float
    verdict: str
    lam: float
    n_solutions: int
    classes: List[str] = field(default_factory=list)
    eps_reached: List[float] = field(default_factory=list)

    def to_dict(self):
        return {"q": self.q, "verdict": self.verdict, "lambda": self.lam, "n_solutions": self.n_solutions,
                "classes": self.classes, "eps_reached": self.eps_reached}


@dataclass
class QScanTable:
    rows: List[QScanRow]
    interval: Optional[List[float]] = None
    warnings: List[str] = field(default_factory=list)

    def verdict(self, q: float) -> str:
        return next(r.verdict for r in self.rows if np.isclose(r.q, q))

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows], "all_positive_interval": self.interval,
                "warnings": self.warnings}


def _scan_one(q: float, ctx: ProblemContext, eps_coarse: float, eps_final: float,
              rng: np.random.Generator, pos_tol: float) -> QScanRow:
    fam = ctx.spec.f_family
    spec_q = NonlinSpec(FFamily(fam.kind, q, fam.r), ctx.spec.g_family)
    ctx_q = ctx.with_spec(spec_q)
    try:
        pair = principal_eigs(ctx_q.laplacian, ctx_q.field, spec_q, eps_coarse)
        lam, phi = pair.mu_plus, pair.phi_plus
    except NoPositivePrincipalEigenvalueError:
        lam, phi = 1.0, None
    seeds = default_seeds(ctx_q, rng, phi=phi)
    found = deflated_solve([np.zeros(ctx_q.size)], lam, eps_coarse, ctx_q, seeds=seeds)
    path = np.geomspace(eps_coarse, eps_final, int(round(np.log10(eps_coarse / eps_final))) + 1)
    classes, reached = [], []
    for result in found:
        if result.norm_inf <= ctx_q.sep_tol([result.u]):
            continue
        try:
            hom = eps_homotopy(result.u, lam, path, ctx_q)
        except (SingularJacobianError, GuardViolationError):
            continue
        u = hom.result.u
        if u.min() < -(hom.eps + pos_tol * float(np.max(np.abs(u)))):
            continue
        verdict = classify_positivity(u, ctx_q.grid, pos_tol)
        if verdict.klass == "trivial":
            continue
        classes.append(verdict.klass)
        reached.append(hom.eps)
    if not classes:
        label = "no_nontrivial_found"
    elif "dead_core" in classes:
        label = "dead_core_found"
    else:
        label = "all_positive"
    logger.info(f"q-scan q={q:g}: {label} ({len(classes)} nontrivial solution(s))")
    return QScanRow(q=q, verdict=label, lam=float(lam), n_solutions=len(classes), classes=classes,
                    eps_reached=reached)


def estimate_q_threshold(field_: WeightField, ctx: ProblemContext, q_grid: Sequence[float],
                         eps_coarse: float = 1e-2, eps_final: float = 1e-10,
                         pos_tol: float = 1e-8, seed: int = 12345) -> QScanTable:
    """
    Multi-start search for nontrivial solutions of the pure concave problem
    (b = 0) at lambda = mu+, continued in eps down to ``eps_final`` and then
    classified. The table reports the top run of all_positive verdicts.
    """
    concave = field_.with_b(np.zeros_like(field_.b_full), "0")
    ctx = ctx.with_field(concave)
    rows = [_scan_one(float(q), ctx, eps_coarse, eps_final, np.random.default_rng(seed), pos_tol)
            for q in sorted(q_grid)]
    return summarize_scan(rows)


def summarize_scan(rows: Sequence[QScanRow]) -> QScanTable:
    """Top run of all_positive verdicts, with a warning for each all_positive below a dead core"""
    rows = sorted(rows, key=lambda r: r.q)
    table = QScanTable(rows=rows)

    dead = [r.q for r in rows if r.verdict == "dead_core_found"]
    if dead:
        for r in rows:
            if r.verdict == "all_positive" and r.q < max(dead):
                table.warnings.append(f"all_positive at q={r.q:g} below dead_core_found at q={max(dead):g}")
    run = []
    for r in reversed(rows):
        if r.verdict != "all_positive":
            break
        run.append(r.q)
    if run:
        table.interval = [min(run), max(run)]
    for w in table.warnings:
        logger.warning(w)
    return table
