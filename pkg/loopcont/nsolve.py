"""
Solvers for the discrete regularized problem at fixed (lambda, eps):
damped Newton, deflated multi-start Newton and the monotone
sub/supersolution iteration.

Residuals are nodal, ``G(u) = A u - reaction(u)`` with ``A = W^{-1} K``.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, GuardViolationError, OrderingError, SingularJacobianError, SubSupError
from .mesh import DiscreteLaplacian
from .nonlin import NonlinSpec, RegularizedTerm
from .weights import WeightField

logger = logging.getLogger(__name__)

ARMIJO = 1e-4
MIN_STEP = 1e-10
STALL = 1e-14
TOL_NEG = 1e-9
DEFLATION_SHIFT = 1.0
DEFLATION_POWER = 2.0


@dataclass(frozen=True, eq=False)
class ProblemContext:
    """Immutable discretization shared by every solve"""

    laplacian: DiscreteLaplacian
    field: WeightField
    spec: NonlinSpec
    tol_rel: float = 1e-10
    tol_abs: float = 1e-12

    @property
    def grid(self):
        return self.laplacian.grid

    @property
    def size(self) -> int:
        return self.grid.size

    @cached_property
    def a(self) -> np.ndarray:
        return self.field.a_vals

    @cached_property
    def b(self) -> np.ndarray:
        return self.field.b_vals

    @cached_property
    def A(self) -> sp.csc_matrix:
        return sp.csc_matrix(self.laplacian.stencil)

    @cached_property
    def norm_A(self) -> float:
        return float(abs(self.A).max())

    @property
    def weights(self) -> np.ndarray:
        return self.grid.quadrature_weights

    def term(self, eps: float) -> RegularizedTerm:
        return RegularizedTerm(eps=eps, spec=self.spec)

    def tol_res(self, u: np.ndarray) -> float:
        return self.tol_rel * self.norm_A * float(np.max(np.abs(u), initial=0.0)) + self.tol_abs

    def sep_tol(self, solutions: Iterable[np.ndarray] = ()) -> float:
        norms = [float(np.max(np.abs(u), initial=0.0)) for u in solutions]
        return 1e-6 * (1.0 + max(norms, default=0.0))

    def l2_norm(self, u: np.ndarray) -> float:
        return float(np.sqrt(np.dot(self.weights * u, u)))

    def residual(self, u: np.ndarray, lam: float, eps: float) -> np.ndarray:
        return residual(u, lam, eps, self.laplacian, self.field, self.spec, A=self.A)

    def jacobian(self, u: np.ndarray, lam: float, eps: float) -> sp.csc_matrix:
        dr = self.term(eps).reaction_jacobian(u, lam, self.a, self.b)
        return sp.csc_matrix(self.A - sp.diags(dr))

    def d_lambda(self, u: np.ndarray, eps: float) -> np.ndarray:
        """Partial derivative of G with respect to lambda"""
        return -self.a * self.term(eps).value(u)

    def with_field(self, field_: WeightField) -> "ProblemContext":
        return replace(self, field=field_)

    def with_spec(self, spec: NonlinSpec) -> "ProblemContext":
        return replace(self, spec=spec)


@dataclass
class SolveResult:
    u: np.ndarray
    residual_inf: float
    converged: bool
    iterations: int
    method: str = "newton"
    lam: Optional[float] = None
    eps: Optional[float] = None
    message: str = ""

    @property
    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.u), initial=0.0))


def residual(u, lam, eps, laplacian: DiscreteLaplacian, field_: WeightField, spec: NonlinSpec,
             A=None) -> np.ndarray:
    """G(u) = A u - lam a (u+eps)^(q-1) F(u) - b g(u) at the unknown nodes"""
    u = np.asarray(u, dtype=float)
    term = RegularizedTerm(eps=eps, spec=spec)
    reaction = term.reaction(u, lam, field_.a_vals, field_.b_vals)
    lap = A @ u if A is not None else laplacian.apply(u)
    return lap - reaction


def jacobian(u, lam, eps, ctx: ProblemContext) -> sp.csc_matrix:
    return ctx.jacobian(u, lam, eps)


def admissible(u: np.ndarray, eps: float) -> bool:
    if eps > 0:
        return bool(np.min(u) > -eps / 2.0)
    return bool(np.min(u) > 0)


class Deflation:
    """M(u) = prod_k (||u - u_k||^-2 + 1) in the quadrature-weighted L2 norm"""

    def __init__(self, known: Sequence[np.ndarray], weights: np.ndarray,
                 shift: float = DEFLATION_SHIFT, power: float = DEFLATION_POWER):
        self.known = [np.asarray(k, dtype=float) for k in known]
        self.weights = weights
        self.shift = shift
        self.power = power

    def __bool__(self):
        return bool(self.known)

    def factor(self, u: np.ndarray) -> float:
        m = 1.0
        for k in self.known:
            d = u - k
            r = float(np.dot(self.weights * d, d))
            m *= (r ** (-self.power / 2.0) if r > 0 else np.inf) + self.shift
        return m

    def grad_log(self, u: np.ndarray) -> np.ndarray:
        g = np.zeros_like(u)
        half = self.power / 2.0
        for k in self.known:
            d = u - k
            r = float(np.dot(self.weights * d, d))
            if r <= 0:
                continue
            inv = r ** (-half)
            g += (-half * inv / r) / (inv + self.shift) * 2.0 * self.weights * d
        return g


def newton_solve(u0, lam: float, eps: float, ctx: ProblemContext,
                 tol_res: Optional[float] = None, max_iter: int = 50,
                 deflation: Optional[Deflation] = None) -> SolveResult:
    """
    Armijo-damped Newton. Steps that would leave the region u > -eps/2 are
    halved; a step below 1e-10 ends the solve unconverged.

    Raises
    ------
    GuardViolationError
        ``u0`` itself is outside the admissible region.
    SingularJacobianError
        The Newton matrix cannot be factorized.
    """
    u = np.array(u0, dtype=float)
    ctx.term(eps).check_guard(u)
    G = ctx.residual(u, lam, eps)
    res = float(np.max(np.abs(G)))
    for it in range(max_iter + 1):
        tol = tol_res if tol_res is not None else ctx.tol_res(u)
        if res <= tol:
            return SolveResult(u=u, residual_inf=res, converged=True, iterations=it,
                               lam=lam, eps=eps)
        if it == max_iter:
            break
        J = ctx.jacobian(u, lam, eps)
        try:
            delta = splu(J).solve(-G)
        except RuntimeError as e:
            raise SingularJacobianError(f"Newton matrix is singular ({e})", lam=lam) from e
        if not np.all(np.isfinite(delta)):
            raise SingularJacobianError("Newton step is not finite", lam=lam)

        scale = 1.0
        if deflation:
            v = deflation.grad_log(u)
            denom = 1.0 - float(np.dot(v, delta))
            if denom == 0:
                return SolveResult(u=u, residual_inf=res, converged=False, iterations=it,
                                   lam=lam, eps=eps, message="deflated step undefined")
            delta = delta / denom
            scale = deflation.factor(u)
        merit = 0.5 * (scale * np.linalg.norm(G)) ** 2

        t = 1.0
        while True:
            trial = u + t * delta
            if admissible(trial, eps):
                G_trial = ctx.residual(trial, lam, eps)
                s_trial = deflation.factor(trial) if deflation else 1.0
                if 0.5 * (s_trial * np.linalg.norm(G_trial)) ** 2 <= (1.0 - 2.0 * ARMIJO * t) * merit:
                    break
            t *= 0.5
            if t < MIN_STEP:
                return SolveResult(u=u, residual_inf=res, converged=False, iterations=it,
                                   lam=lam, eps=eps, message="line search failed")
        u, G = trial, G_trial
        res = float(np.max(np.abs(G)))
    return SolveResult(u=u, residual_inf=res, converged=False, iterations=max_iter,
                       lam=lam, eps=eps, message="max_iter reached")


def default_seeds(ctx: ProblemContext, rng: np.random.Generator, phi: Optional[np.ndarray] = None,
                  count: int = 20, scale: float = 1.0) -> List[np.ndarray]:
    """t*phi, t*1 and t*(random positive) for t on a geometric ladder"""
    n = ctx.size
    phi = np.ones(n) if phi is None else phi
    ladder = scale * np.geomspace(1e-2, 1e2, int(np.ceil(count / 3)))
    seeds = []
    for t in ladder:
        seeds.append(t * phi)
        seeds.append(t * np.ones(n))
        seeds.append(t * rng.uniform(0.1, 1.0, n))
    return seeds[:count]


def _distinct(u: np.ndarray, others: Sequence[np.ndarray], sep: float) -> bool:
    return all(np.max(np.abs(u - o)) > sep for o in others)


def deflated_solve(known_solutions: Sequence[np.ndarray], lam: float, eps: float,
                   ctx: ProblemContext, seeds: Optional[Sequence[np.ndarray]] = None,
                   rng: Optional[np.random.Generator] = None, sep_tol: Optional[float] = None,
                   max_iter: int = 60, max_per_seed: int = 8) -> List[SolveResult]:
    """
    Newton on the deflated residual from every seed, restarting from the same
    seed after each new root until it yields nothing new. Returns only roots
    distinct from ``known_solutions`` and from each other.
    """
    known = [np.asarray(k, dtype=float) for k in known_solutions]
    if seeds is None:
        seeds = default_seeds(ctx, rng if rng is not None else np.random.default_rng(12345))
    found: List[SolveResult] = []

    for seed in seeds:
        for _ in range(max_per_seed):
            roots = known + [r.u for r in found]
            sep = sep_tol if sep_tol is not None else ctx.sep_tol(roots)
            try:
                result = newton_solve(seed, lam, eps, ctx, max_iter=max_iter,
                                      deflation=Deflation(roots, ctx.weights))
            except (SingularJacobianError, GuardViolationError) as e:
                logger.debug(f"Seed abandoned: {e}")
                break
            if not result.converged or not _distinct(result.u, roots, sep):
                break
            found.append(result)
    logger.info(f"Deflated search at lambda={lam:.6g} eps={eps:g}: {len(found)} new solution(s)")
    return found


def reaction_slope_bound(ctx: ProblemContext, lam: float, eps: float, s_max: float,
                         s_min: float = 0.0, samples: int = 200) -> float:
    """max(0, -min over nodes and sampled s of the reaction's derivative)"""
    if s_max <= 0:
        return 0.0
    lo = max(s_min, eps * 1e-3 if eps > 0 else s_max * 1e-12)
    s = np.geomspace(lo, s_max, samples) if lo < s_max else np.array([s_max])
    if eps > 0 and s_min <= 0:
        s = np.concatenate([[0.0], s])
    term = ctx.term(eps)
    dR = term.derivative(s)
    dg = ctx.spec.dg(s)
    slopes = lam * np.outer(ctx.a, dR) + np.outer(ctx.b, dg)
    return max(0.0, float(-slopes.min()))


def monotone_solve(sub, sup, lam: float, eps: float, ctx: ProblemContext,
                   tol_res: Optional[float] = None, max_iter: int = 20000,
                   retries: int = 5, polish: bool = True) -> SolveResult:
    """
    Order-preserving iteration (A + M) u_{k+1} = reaction(u_k) + M u_k
    started from the subsolution. M is 1.1 times the largest sampled negative
    slope of the reaction on [0, max(sup)] and is doubled whenever an iterate
    decreases or exceeds ``sup``.

    A large M (small eps, where F' ~ eps^(q-1) near 0) makes the iteration
    crawl. When it stalls or runs out of iterations the last iterate is
    handed to Newton and kept only if Newton converges inside [sub, sup].

    Raises
    ------
    OrderingError
        ``sub > sup`` at some node.
    SubSupError
        A bound is not a sub/supersolution, or order is lost after every
        doubling of M.
    ConvergenceError
        The iteration stalled and Newton could not finish it inside the bracket.
    """
    sub = np.asarray(sub, dtype=float)
    sup = np.asarray(sup, dtype=float)
    bad = np.flatnonzero(sub > sup)
    if bad.size:
        raise OrderingError(f"Subsolution exceeds supersolution at node {int(bad[0])} "
                            f"({sub[bad[0]]:.6g} > {sup[bad[0]]:.6g})")
    term = ctx.term(eps)
    g_sub = ctx.residual(sub, lam, eps)
    g_sup = ctx.residual(sup, lam, eps)
    slack = ctx.tol_res(sup)
    if np.any(g_sub > slack):
        node = int(np.argmax(g_sub))
        raise SubSupError(f"Not a subsolution at node {node} (residual {g_sub[node]:.3g})")
    if np.any(g_sup < -slack):
        node = int(np.argmin(g_sup))
        raise SubSupError(f"Not a supersolution at node {node} (residual {g_sup[node]:.3g})")

    s_min = 0.0 if eps > 0 else max(float(sub.min()), 0.0)
    M = 1.1 * reaction_slope_bound(ctx, lam, eps, float(sup.max()), s_min=s_min)
    I = sp.identity(ctx.size, format="csc")

    for attempt in range(retries + 1):
        lu = splu(sp.csc_matrix(ctx.A + M * I))
        u = sub.copy()
        res = float(np.max(np.abs(g_sub)))
        monotone = True
        done = 0
        for it in range(max_iter):
            tol = tol_res if tol_res is not None else ctx.tol_res(u)
            if res <= tol:
                return SolveResult(u=u, residual_inf=res, converged=True, iterations=it,
                                   method="monotone", lam=lam, eps=eps)
            rhs = term.reaction(u, lam, ctx.a, ctx.b) + M * u
            nxt = lu.solve(rhs)
            step_tol = 1e-12 * (1.0 + float(np.max(np.abs(nxt))))
            if np.any(nxt < u - step_tol) or np.any(nxt > sup + step_tol):
                monotone = False
                break
            stalled = float(np.max(np.abs(nxt - u))) <= STALL * (1.0 + float(np.max(np.abs(nxt))))
            u = nxt
            done += 1
            res = float(np.max(np.abs(ctx.residual(u, lam, eps))))
            if stalled:
                break
        if monotone:
            tol = tol_res if tol_res is not None else ctx.tol_res(u)
            if res <= tol:
                return SolveResult(u=u, residual_inf=res, converged=True, iterations=done,
                                   method="monotone", lam=lam, eps=eps)
            return _polish(u, sub, sup, lam, eps, ctx, tol_res, res, M, done, polish)
        logger.debug(f"Monotone iteration lost order with M={M:.3g}; doubling")
        M = 2.0 * M if M > 0 else 1.0
    raise SubSupError(f"Monotone iteration not order-preserving after {retries} doublings of M")


def _polish(u, sub, sup, lam, eps, ctx: ProblemContext, tol_res, res, M, iterations, polish) -> SolveResult:
    message = f"monotone iteration stalled with M={M:.3g} at residual {res:.3g} after {iterations} iterations"
    if polish:
        try:
            result = newton_solve(u, lam, eps, ctx, tol_res=tol_res)
        except (GuardViolationError, SingularJacobianError) as e:
            result = None
            logger.debug(f"Newton polish failed: {e}")
        if result is not None and result.converged:
            slack = 1e-8 * (1.0 + float(np.max(np.abs(sup))))
            if np.all(result.u >= sub - slack) and np.all(result.u <= sup + slack):
                logger.info(f"Monotone iteration stalled (M={M:.3g}); finished by Newton")
                return replace(result, method="monotone+newton", iterations=iterations + result.iterations)
            message += "; Newton converged outside [sub, sup]"
        else:
            message += "; Newton polish did not converge"
    logger.warning(message)
    raise ConvergenceError(message)


@dataclass
class HomotopyResult:
    eps: float
    result: SolveResult
    path: List[Tuple[float, float]] = field(default_factory=list)


def eps_homotopy(u0, lam: float, eps_path: Sequence[float], ctx: ProblemContext,
                 max_iter: int = 50) -> HomotopyResult:
    """
    Follow a solution along a decreasing eps path with Newton; stops at the
    first level that fails and returns the last converged one. Values below
    the next level's guard are lifted to -eps/4 before the solve.
    """
    u = np.array(u0, dtype=float)
    last: Optional[SolveResult] = None
    reached = eps_path[0]
    path = []
    for eps in eps_path:
        floor = -eps / 4.0 if eps > 0 else 0.0
        start = np.maximum(u, floor) if not admissible(u, eps) else u
        try:
            result = newton_solve(start, lam, eps, ctx, max_iter=max_iter)
        except (SingularJacobianError, GuardViolationError) as e:
            logger.debug(f"Homotopy stopped at eps={eps:g}: {e}")
            break
        if not result.converged:
            break
        u, last, reached = result.u, result, eps
        path.append((eps, result.norm_inf))
    if last is None:
        last = SolveResult(u=u, residual_inf=float("inf"), converged=False, iterations=0,
                           lam=lam, eps=eps_path[0], message="first level failed")
    return HomotopyResult(eps=reached, result=last, path=path)
