"""
Pseudo-arclength continuation of the bifurcating branch, closure detection
between the two principal bifurcation points, and the limit of the projected
branches as eps decreases.

Arclength is measured in the product inner product
``<(u, lam), (v, mu)> = <u, v>_L2 + lam * mu``; the reported ``s_arc`` and
the step bound ``ds_max`` use the metric ``|d lam| + ||d u||_inf``.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.spatial.distance import cdist

from .eigen import PrincipalPair
from .errors import FitError, GuardViolationError, SingularJacobianError
from .mesh import BoundaryCondition
from .nonlin import NonlinSpec
from .nsolve import TOL_NEG, ProblemContext, admissible
from .weights import WeightField

logger = logging.getLogger(__name__)

START_RETRIES = 10
CORRECTOR_ITER = 8
FAST_ITER = 4
GROW = 1.5


@dataclass
class BranchPoint:
    lam: float
    eps: float
    u: np.ndarray
    s_arc: float = 0.0
    norm_inf: float = 0.0
    norm_h1: float = 0.0
    turning: bool = False
    residual_inf: float = 0.0
    tangent: Optional[Tuple[np.ndarray, float]] = field(default=None, repr=False)

    @property
    def min_u(self) -> float:
        return float(self.u.min())


@dataclass
class StopRules:
    """Termination criteria for one branch trace"""

    target_lam: Optional[float] = None
    close_radius: float = 1e-3
    lambda_box: Optional[Tuple[float, float]] = None
    norm_cap: Optional[float] = None
    ds_min: Optional[float] = None
    tol_neg: float = TOL_NEG


@dataclass
class Branch:
    points: List[BranchPoint]
    eps: float
    side: str = "plus"
    start_bif: str = "lam_plus"
    end_bif: str = "none"
    closed_mushroom: bool = False
    anomalies: List[str] = field(default_factory=list)

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([p.lam for p in self.points])

    @property
    def norms(self) -> np.ndarray:
        return np.array([p.norm_inf for p in self.points])

    def projection(self) -> np.ndarray:
        """(k, 2) polyline in the (lambda, ||u||_inf) plane"""
        return np.column_stack([self.lambdas, self.norms])

    @property
    def turning_points(self) -> List[BranchPoint]:
        return [p for p in self.points if p.turning]

    def endpoints(self) -> Dict[str, List[float]]:
        first, last = self.points[0], self.points[-1]
        return {"start": [first.lam, first.norm_inf], "end": [last.lam, last.norm_inf]}


@dataclass
class LoopReport:
    touches_origin: bool
    lambda_range: Tuple[float, float]
    solutions_at_zero: int
    min_norm_at_nonzero_lambda: float
    delta: float
    liminf_ok: bool = True
    endpoint_distances: List[float] = field(default_factory=list)

    def to_dict(self):
        m = self.min_norm_at_nonzero_lambda
        return {
            "touches_origin": self.touches_origin,
            "lambda_range": list(self.lambda_range),
            "solutions_at_zero": self.solutions_at_zero,
            "min_norm_at_nonzero_lambda": m if np.isfinite(m) else None,
            "delta": self.delta,
            "liminf_ok": self.liminf_ok,
            "endpoint_distances": self.endpoint_distances,
        }


@dataclass
class Diagram:
    eps_schedule: List[float]
    branches: List[Branch]
    limit_polyline: np.ndarray
    loop_report: LoopReport
    hausdorff_sequence: List[float] = field(default_factory=list)
    stabilized: bool = True
    final_hausdorff: float = 0.0
    within_tol: bool = True
    anomalies: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)


@dataclass
class Stabilization:
    hausdorff_sequence: List[float]
    stabilized: bool
    final_hausdorff: float
    within_tol: bool


@dataclass
class DirectionFit:
    slope_est: float
    slope_formula: float
    rel_err: float
    n_points: int
    z_values: List[float] = field(default_factory=list)

    @property
    def subcritical(self) -> bool:
        return self.slope_est < 0

    def to_dict(self):
        return {"slope_est": self.slope_est, "slope_formula": self.slope_formula,
                "rel_err": self.rel_err, "n_points": self.n_points, "z_values": self.z_values}


def make_point(ctx: ProblemContext, u: np.ndarray, lam: float, eps: float,
               residual_inf: float, s_arc: float = 0.0) -> BranchPoint:
    grid = ctx.grid
    l2 = ctx.l2_norm(u)
    grad = grid.cell_volume * float(u @ (ctx.laplacian.matrix @ u))
    return BranchPoint(lam=float(lam), eps=eps, u=u, s_arc=s_arc,
                       norm_inf=float(np.max(np.abs(u))), norm_h1=float(np.sqrt(l2 ** 2 + max(grad, 0.0))),
                       residual_inf=residual_inf)


def _bordered(ctx: ProblemContext, u, lam, eps, row_u, row_lam):
    J = ctx.jacobian(u, lam, eps)
    col = ctx.d_lambda(u, eps).reshape(-1, 1)
    M = sp.bmat([[J, sp.csc_matrix(col)],
                 [sp.csc_matrix(row_u.reshape(1, -1)), sp.csc_matrix([[row_lam]])]], format="csc")
    return splu(M)


def _correct(ctx: ProblemContext, u, lam, eps, row_u, row_lam, target,
             max_iter: int = CORRECTOR_ITER):
    """Newton on G(u, lam) = 0 with the linear constraint row_u.u + row_lam*lam = target"""
    u = np.array(u, dtype=float)
    for it in range(max_iter + 1):
        try:
            G = ctx.residual(u, lam, eps)
        except GuardViolationError:
            return None
        res = float(np.max(np.abs(G)))
        if res <= ctx.tol_res(u) and it > 0:
            return u, lam, it, res
        if it == max_iter:
            return None
        N = float(row_u @ u + row_lam * lam - target)
        try:
            lu = _bordered(ctx, u, lam, eps, row_u, row_lam)
        except (RuntimeError, GuardViolationError) as e:
            logger.debug(f"Bordered factorization failed at lambda={lam:.6g}: {e}")
            return None
        step = lu.solve(-np.concatenate([G, [N]]))
        if not np.all(np.isfinite(step)):
            return None
        u = u + step[:-1]
        lam = lam + float(step[-1])
        if not admissible(u, eps):
            return None
    return None


def _unit(ctx: ProblemContext, t_u: np.ndarray, t_lam: float):
    norm = np.sqrt(ctx.l2_norm(t_u) ** 2 + t_lam ** 2)
    return t_u / norm, t_lam / norm


def _initial_tangent(ctx: ProblemContext, u, lam, eps, phi):
    row = ctx.weights * phi
    lu = _bordered(ctx, u, lam, eps, row, 0.0)
    rhs = np.zeros(u.size + 1)
    rhs[-1] = 1.0
    t = lu.solve(rhs)
    t_u, t_lam = _unit(ctx, t[:-1], float(t[-1]))
    if row @ t_u < 0:
        t_u, t_lam = -t_u, -t_lam
    return t_u, t_lam


def start_amplitude(ds0: float, eps: float) -> float:
    return min(ds0, 0.1 * eps)


def branch_start(pair: PrincipalPair, side: str, ds0: float, ctx: ProblemContext) -> BranchPoint:
    """
    First nontrivial point next to the bifurcation point of ``side``: predictor
    amp*phi at lambda_side, corrected under <phi, u> = amp <phi, phi>.
    The amplitude is min(ds0, eps/10) and is halved on failure.
    """
    lam0, phi = pair.side(side)
    eps = pair.eps
    amp = start_amplitude(ds0, eps)
    row = ctx.weights * phi
    phi_sq = float(row @ phi)
    for attempt in range(START_RETRIES + 1):
        out = _correct(ctx, amp * phi, lam0, eps, row, 0.0, amp * phi_sq)
        if out is not None:
            u, lam, its, res = out
            point = make_point(ctx, u, lam, eps, res)
            try:
                point.tangent = _initial_tangent(ctx, u, lam, eps, phi)
            except (RuntimeError, GuardViolationError) as e:
                raise SingularJacobianError(f"Cannot compute start tangent ({e})", lam=lam) from e
            logger.debug(f"Branch start ({side}) at lambda={lam:.6g}, amplitude {amp:.3g}")
            return point
        amp *= 0.5
    raise SingularJacobianError(f"Start corrector failed on side {side} after {START_RETRIES} halvings",
                                lam=lam0)


def continue_branch(start: BranchPoint, ctx: ProblemContext, ds0: float, ds_max: float,
                    max_steps: int, stop_rules: Optional[StopRules] = None,
                    side: str = "plus") -> Branch:
    """
    Secant predictor, bordered Newton corrector. The step grows by 1.5 after
    a corrector needing at most four iterations, halves after a failure and is
    capped at half the distance to the target bifurcation point.
    """
    rules = stop_rules or StopRules()
    eps = start.eps
    ds_min = rules.ds_min if rules.ds_min is not None else ds0 * 1e-4
    branch = Branch(points=[start], eps=eps, side=side,
                    start_bif="lam_plus" if side == "plus" else "lam_minus")
    if start.tangent is None:
        raise ValueError("Start point carries no tangent; use branch_start")
    t_u, t_lam = start.tangent
    trivial_floor = 1e-3 * start.norm_inf
    ds = ds0
    negative_flagged = False

    while len(branch.points) <= max_steps:
        cur = branch.points[-1]
        if len(branch.points) > 1:
            prev = branch.points[-2]
            t_u, t_lam = _unit(ctx, cur.u - prev.u, cur.lam - prev.lam)
        h = min(ds, ds_max)
        if rules.target_lam is not None:
            h = min(h, 0.5 * (abs(cur.lam - rules.target_lam) + cur.norm_inf))
        u_p = cur.u + h * t_u
        lam_p = cur.lam + h * t_lam
        row_u = ctx.weights * t_u
        out = _correct(ctx, u_p, lam_p, eps, row_u, t_lam, float(row_u @ u_p + t_lam * lam_p))

        rejected = out is None
        if not rejected:
            u, lam, its, res = out
            dist = abs(lam - cur.lam) + float(np.max(np.abs(u - cur.u)))
            if dist > ds_max * (1 + 1e-12):
                ds = 0.9 * h * ds_max / dist
                continue
            rejected = float(np.max(np.abs(u))) < trivial_floor or dist == 0.0
        if rejected:
            ds = 0.5 * h
            if ds < ds_min:
                branch.anomalies.append(f"corrector stall at lambda={cur.lam:.6g}")
                logger.warning(f"Corrector stalled at lambda={cur.lam:.6g} (eps={eps:g}); branch is partial")
                break
            continue

        point = make_point(ctx, u, lam, eps, res, s_arc=cur.s_arc + dist)
        branch.points.append(point)
        ds = min(GROW * h, ds_max) if its <= FAST_ITER else h

        if point.min_u < -rules.tol_neg and not negative_flagged:
            negative_flagged = True
            branch.anomalies.append(f"negative state min(u)={point.min_u:.3g} at lambda={lam:.6g}")
        if rules.target_lam is not None:
            if abs(lam - rules.target_lam) + point.norm_inf <= rules.close_radius:
                branch.closed_mushroom = True
                branch.end_bif = "lam_minus" if side == "plus" else "lam_plus"
                break
        if rules.lambda_box is not None and not (rules.lambda_box[0] <= lam <= rules.lambda_box[1]):
            branch.anomalies.append(f"a priori lambda box exited at lambda={lam:.6g}")
            logger.warning(f"Branch left the lambda box at lambda={lam:.6g} (eps={eps:g})")
            break
        if rules.norm_cap is not None and point.norm_inf > rules.norm_cap:
            branch.anomalies.append(f"norm cap exceeded: {point.norm_inf:.6g} > {rules.norm_cap:.6g}")
            logger.warning(f"Branch exceeded norm cap at lambda={lam:.6g} (eps={eps:g})")
            break

    mark_turning_points(branch)
    logger.info(f"Traced branch eps={eps:g} side={side}: {len(branch.points)} points, "
                f"closed={branch.closed_mushroom}, turning={len(branch.turning_points)}")
    return branch


def mark_turning_points(branch: Branch) -> None:
    """Local extrema of lambda along the branch (sign change of d lambda / ds)"""
    lam = branch.lambdas
    for i in range(1, len(lam) - 1):
        branch.points[i].turning = bool((lam[i] - lam[i - 1]) * (lam[i + 1] - lam[i]) < 0)


def trace_branch(pair: PrincipalPair, side: str, ctx: ProblemContext, ds0: float, ds_max: float,
                 max_steps: int, lambda_box=None, norm_cap: Optional[float] = None) -> Branch:
    start = branch_start(pair, side, ds0, ctx)
    target = pair.lam_minus if side == "plus" else pair.lam_plus
    rules = StopRules(target_lam=target, close_radius=ds0, lambda_box=lambda_box, norm_cap=norm_cap)
    return continue_branch(start, ctx, ds0, ds_max, max_steps, rules, side=side)


def _segment_distances(points: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from each point to the polyline ``poly`` (vertex-to-segment)"""
    if len(poly) == 1:
        return np.linalg.norm(points - poly[0], axis=1)
    a, b = poly[:-1], poly[1:]
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    denom = np.where(denom > 0, denom, 1.0)
    out = np.empty(len(points))
    for start in range(0, len(points), 512):
        p = points[start:start + 512]
        ap = p[:, None, :] - a[None, :, :]
        t = np.clip(np.einsum("pij,ij->pi", ap, ab) / denom, 0.0, 1.0)
        closest = a[None, :, :] + t[:, :, None] * ab[None, :, :]
        out[start:start + 512] = np.linalg.norm(p[:, None, :] - closest, axis=2).min(axis=1)
    return out


def polyline_hausdorff(p: np.ndarray, q: np.ndarray) -> float:
    return float(max(_segment_distances(p, q).max(), _segment_distances(q, p).max()))


def state_hausdorff(first: Branch, second: Branch) -> float:
    """Hausdorff distance between branch states under max(|d lam|, ||d u||_inf)"""
    x = np.column_stack([first.lambdas, np.array([p.u for p in first.points])])
    y = np.column_stack([second.lambdas, np.array([p.u for p in second.points])])
    d = cdist(x, y, metric="chebyshev")
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def split_at_zero(branch: Branch):
    """Parts of the branch with lambda >= 0 and lambda <= 0 and the interpolated lambda = 0 states"""
    lam = branch.lambdas
    crossings = []
    for i in range(len(lam) - 1):
        if lam[i] == 0.0:
            crossings.append(branch.points[i].u)
        elif lam[i] * lam[i + 1] < 0:
            t = lam[i] / (lam[i] - lam[i + 1])
            crossings.append((1 - t) * branch.points[i].u + t * branch.points[i + 1].u)
    positive = [p for p in branch.points if p.lam >= 0]
    negative = [p for p in branch.points if p.lam <= 0]
    return positive, negative, crossings


def count_zero_crossings(branch: Branch) -> int:
    """
    Sign changes of lambda along the branch. A closed branch also counts the
    origin when the trivial segment joining its endpoints crosses lambda = 0.
    """
    lam = branch.lambdas
    signs = np.sign(lam[lam != 0])
    changes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    closing = branch.closed_mushroom and lam[0] * lam[-1] <= 0
    return changes + (1 if closing else 0)


def _aitken_limit(d: Sequence[float]) -> float:
    if len(d) < 3:
        return float(d[-1])
    d0, d1, d2 = d[-3:]
    denom = d2 - 2 * d1 + d0
    if denom == 0:
        return float(d2)
    return float(d2 - (d2 - d1) ** 2 / denom)


def loop_report(branches: Sequence[Branch], delta: float, hausdorff_tol: float,
                ds_max: float) -> LoopReport:
    finest = branches[-1]
    distances = []
    for br in branches:
        ends = br.projection()[[0, -1]]
        distances.append(float(np.max(np.abs(ends[:, 0]) + ends[:, 1])))
    decreasing = all(b < a for a, b in zip(distances, distances[1:]))
    limit = _aitken_limit(distances)
    touches = decreasing and abs(limit) <= max(hausdorff_tol, 0.05 * distances[0])

    proj = finest.projection()
    far = np.abs(proj[:, 0]) >= delta
    min_norm = float(proj[far, 1].min()) if far.any() else float("inf")

    _, _, crossings = split_at_zero(finest)
    liminf_ok = True
    if crossings:
        u0_norm = max(float(np.max(np.abs(c))) for c in crossings)
        anchor = np.array([[0.0, u0_norm]])
        for br in branches:
            if _segment_distances(anchor, br.projection())[0] > hausdorff_tol + ds_max:
                liminf_ok = False
    return LoopReport(touches_origin=bool(touches),
                      lambda_range=(float(proj[:, 0].min()), float(proj[:, 0].max())),
                      solutions_at_zero=count_zero_crossings(finest),
                      min_norm_at_nonzero_lambda=min_norm, delta=delta,
                      liminf_ok=liminf_ok, endpoint_distances=distances)


def check_stabilization(projections: Sequence[np.ndarray], hausdorff_tol: float) -> Stabilization:
    """
    Hausdorff distances between consecutive projections. The sequence has
    stabilized when it still decreases across the last three levels; the
    finest projection is the limit polyline, so its gap to the last two levels
    is the final distance.
    """
    if len(projections) < 3:
        raise ValueError("Need at least three projections")
    hausdorff = [polyline_hausdorff(a, b) for a, b in zip(projections, projections[1:])]
    final = hausdorff[-1]
    return Stabilization(hausdorff_sequence=hausdorff, stabilized=bool(final < hausdorff[-2]),
                         final_hausdorff=final, within_tol=bool(final < hausdorff_tol))


def whyburn_limit(ctx: ProblemContext, pair: PrincipalPair, eps_schedule: Sequence[float],
                  hausdorff_tol: float = 1e-3, ds0: float = 1e-3, ds_max: float = 0.05,
                  max_steps: int = 20000, lambda_bar: Optional[float] = None,
                  lambda_bar_neg: Optional[float] = None, norm_cap: Optional[float] = None,
                  delta: Optional[float] = None, workers: int = 1, side: str = "plus") -> Diagram:
    """
    Trace one branch per eps level and compare their projections.
    The coarsest level runs first; without an explicit ``norm_cap`` the cap for
    the remaining levels is ten times its largest norm.
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if len(eps_schedule) < 3:
        raise ValueError("Need at least three eps levels")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError(f"eps_schedule must be strictly decreasing, got {eps_schedule}")

    box = None
    if lambda_bar is not None:
        box = (-1.5 * (lambda_bar_neg if lambda_bar_neg is not None else lambda_bar), 1.5 * lambda_bar)

    def trace(eps, cap):
        return trace_branch(pair.scaled(eps), side, ctx, ds0, ds_max, max_steps,
                            lambda_box=box, norm_cap=cap)

    first = trace(eps_schedule[0], norm_cap)
    cap = norm_cap if norm_cap is not None else 10.0 * float(first.norms.max())
    rest = eps_schedule[1:]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            others = list(pool.map(lambda e: trace(e, cap), rest))
    else:
        others = [trace(e, cap) for e in rest]
    branches = [first] + others

    projections = [br.projection() for br in branches]
    stab = check_stabilization(projections, hausdorff_tol)
    hausdorff = stab.hausdorff_sequence
    anomalies = [f"eps={br.eps:g}: {msg}" for br in branches for msg in br.anomalies]
    warnings = []
    if not stab.stabilized:
        anomalies.append(f"non-stabilization: Hausdorff sequence {hausdorff}")
        logger.warning(f"Projected branches did not stabilize: {hausdorff}")
    if not stab.within_tol:
        warnings.append(f"final Hausdorff distance {stab.final_hausdorff:.3g} is not below "
                        f"hausdorff_tol={hausdorff_tol:g}; refine the eps schedule")
        logger.warning(warnings[-1])

    if delta is None:
        delta = 0.1 * lambda_bar if lambda_bar is not None else 0.1 * float(np.abs(projections[-1][:, 0]).max())
    report = loop_report(branches, delta, hausdorff_tol, ds_max)
    logger.info(f"Limit diagram: touches_origin={report.touches_origin}, "
                f"solutions_at_zero={report.solutions_at_zero}, hausdorff={hausdorff}")
    return Diagram(eps_schedule=eps_schedule, branches=branches, limit_polyline=projections[-1],
                   loop_report=report, hausdorff_sequence=hausdorff, stabilized=stab.stabilized,
                   final_hausdorff=stab.final_hausdorff, within_tol=stab.within_tol,
                   anomalies=anomalies, warnings=warnings)


def fit_bifurcation_direction(branch: Branch, pair: PrincipalPair, spec: NonlinSpec,
                              field_: WeightField, s_fit_cap: Optional[float] = None,
                              start_tol: float = 1e-2) -> DirectionFit:
    """
    Regress lambda against s^(sigma-1) (with an s^sigma correction) over the
    early points of a Neumann branch leaving lambda_minus = 0, s the mean of u,
    and compare with -eps^(1-q) q g0 int(b) / (f0 int(a)).

    Raises
    ------
    FitError
        The branch is not a Neumann branch that starts within ``start_tol`` of
        lambda_minus, or it has fewer than three points with mean(u) <= s_fit_cap.
    """
    eps = branch.eps
    if pair.bc is not BoundaryCondition.NEUMANN:
        raise FitError("Direction fit needs a Neumann branch")
    lam_minus = pair.scaled(eps).lam_minus
    if branch.start_bif != "lam_minus" or abs(branch.points[0].lam - lam_minus) > start_tol:
        raise FitError(f"Branch starts at lambda={branch.points[0].lam:.6g} ({branch.start_bif}); "
                       f"the fit needs the branch leaving lambda_minus={lam_minus:.6g}")
    grid = field_.grid
    cap = 0.5 * eps if s_fit_cap is None else s_fit_cap
    volume = float(np.prod([hi - lo for lo, hi in grid.extent]))
    s = np.array([grid.integrate(p.u) / volume for p in branch.points])
    lam = branch.lambdas
    use = (s > 0) & (s <= cap)
    if use.sum() < 3:
        suggestion = cap / 10.0
        raise FitError(f"Only {int(use.sum())} branch points with mean(u) <= {cap:.3g}; "
                       f"retry with ds0 <= {suggestion:.3g}")
    sigma = spec.sigma
    X = np.column_stack([s[use] ** (sigma - 1.0), s[use] ** sigma])
    coef, *_ = np.linalg.lstsq(X, lam[use], rcond=None)
    slope = float(coef[0])
    formula = -eps ** (1.0 - spec.q) * spec.q * spec.g0 * field_.b_int / (spec.f0 * field_.a_int)
    z = [float(np.max(np.abs(branch.points[i].u / s[i] - 1.0))) for i in np.flatnonzero(use)]
    rel = abs(slope - formula) / abs(formula) if formula != 0 else float("inf")
    logger.info(f"Bifurcation direction: fitted {slope:.6g}, formula {formula:.6g}, rel err {rel:.3g}")
    return DirectionFit(slope_est=slope, slope_formula=float(formula), rel_err=float(rel),
                        n_points=int(use.sum()), z_values=z)
