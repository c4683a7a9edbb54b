"""
Principal eigenvalues of the linearization at u = 0.

The reduced pencil ``K phi = mu W diag(a) phi`` is eps-free; the eigenvalues
of the regularized linearization follow from the exact power law
``lambda = eps^(1-q) (q/f0) mu``.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs, splu

from .errors import EigenSolveError, NoPositivePrincipalEigenvalueError
from .mesh import BoundaryCondition, DiscreteLaplacian
from .nonlin import NonlinSpec
from .weights import WeightField

logger = logging.getLogger(__name__)

DENSE_LIMIT = 64
MARGIN_FLAG = 1e-8
NEUMANN_SHIFT = -1e-2
ZERO_TOL = 1e-10


@dataclass
class PrincipalPair:
    mu_plus: float
    mu_minus: float
    phi_plus: np.ndarray
    phi_minus: np.ndarray
    eps: float
    q: float
    f0: float
    bc: BoundaryCondition
    spectrum: np.ndarray = field(default_factory=lambda: np.empty(0))
    weight_shift: float = 0.0

    def scale(self, eps: Optional[float] = None) -> float:
        eps = self.eps if eps is None else eps
        return eps ** (1.0 - self.q) * self.q / self.f0

    @property
    def lam_plus(self) -> float:
        return self.scale() * self.mu_plus

    @property
    def lam_minus(self) -> float:
        return self.scale() * self.mu_minus

    def scaled(self, eps: float) -> "PrincipalPair":
        """Same eigenpairs at another eps; no new solve"""
        return replace(self, eps=eps)

    def side(self, side: str) -> Tuple[float, np.ndarray]:
        if side == "plus":
            return self.lam_plus, self.phi_plus
        return self.lam_minus, self.phi_minus

    def to_dict(self):
        return {
            "eps": self.eps, "mu_plus": self.mu_plus, "mu_minus": self.mu_minus,
            "lam_plus": self.lam_plus, "lam_minus": self.lam_minus,
            "weight_shift": self.weight_shift,
            "spectrum": [float(v) for v in np.sort(self.spectrum)],
        }


def principal_eigs(laplacian: DiscreteLaplacian, field_: WeightField, spec: NonlinSpec,
                   eps: float, weight_shift: float = 0.0, k: int = 12) -> PrincipalPair:
    """
    mu+ is the smallest positive eigenvalue of the reduced pencil with an
    everywhere positive eigenvector; mu- the largest negative one (Dirichlet)
    or 0 with the constant eigenvector (Neumann with integral of a < 0).
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if weight_shift:
        field_ = field_.shifted(weight_shift)
    bc = laplacian.bc
    if bc is BoundaryCondition.NEUMANN and field_.a_int >= 0:
        raise NoPositivePrincipalEigenvalueError(
            f"Neumann problem with integral of a = {field_.a_int:.6g} >= 0 has no positive principal "
            f"eigenvalue; solve with (-lambda, -a) or shift a (critical_shift)")

    weight = laplacian.mass * field_.a_vals
    n = weight.size
    logger.info(f"Starting principal eigen solve ({bc.value}, {n} unknowns)")
    if n <= DENSE_LIMIT:
        mu, vecs = _dense_pencil(laplacian, weight)
    else:
        mu, vecs = _shift_invert(laplacian, weight, k)

    plus = _select(mu, vecs, positive=True)
    if plus is None and n > DENSE_LIMIT:
        # widen the window once before giving up
        mu, vecs = _shift_invert(laplacian, weight, min(4 * k, n - 2))
        plus = _select(mu, vecs, positive=True)
    if plus is None:
        raise NoPositivePrincipalEigenvalueError(
            "No positive eigenvalue with a positive eigenvector among "
            f"{mu.size} computed eigenvalues")

    if bc is BoundaryCondition.NEUMANN:
        minus = (0.0, np.ones(n))
    else:
        minus = _select(mu, vecs, positive=False)
        if minus is None:
            raise EigenSolveError("No negative principal eigenvalue found for the Dirichlet pencil")

    pair = PrincipalPair(mu_plus=plus[0], mu_minus=minus[0], phi_plus=plus[1], phi_minus=minus[1],
                         eps=eps, q=spec.q, f0=spec.f0, bc=bc, spectrum=mu,
                         weight_shift=weight_shift)
    logger.info(f"Principal eigenvalues mu+={pair.mu_plus:.10g} mu-={pair.mu_minus:.10g} "
                f"(lambda+={pair.lam_plus:.6g}, lambda-={pair.lam_minus:.6g} at eps={eps:g})")
    return pair


def transversality_margin(pair: PrincipalPair, field_: Optional[WeightField] = None) -> float:
    """
    Relative gap between each principal eigenvalue and the nearest other
    eigenvalue of the same sign; the smaller of the two gaps.
    """
    margins = [_gap(pair.spectrum, pair.mu_plus, positive=True)]
    if pair.bc is BoundaryCondition.DIRICHLET:
        margins.append(_gap(pair.spectrum, pair.mu_minus, positive=False))
    margin = float(min(margins))
    if margin < MARGIN_FLAG:
        logger.warning(f"Principal eigenvalue not simple: transversality margin {margin:.3g}")
    return margin


def margin_flagged(margin: float) -> bool:
    return margin < MARGIN_FLAG


def _gap(spectrum: np.ndarray, mu: float, positive: bool) -> float:
    same = spectrum[spectrum > 0] if positive else spectrum[spectrum < 0]
    if same.size == 0:
        return float("inf")
    # drop one occurrence of mu itself
    idx = int(np.argmin(np.abs(same - mu)))
    others = np.delete(same, idx)
    if others.size == 0:
        return float("inf")
    return float(np.min(np.abs(others - mu)) / abs(mu))


def _normalize(vec: np.ndarray) -> np.ndarray:
    vec = np.real(vec)
    return vec / vec[np.argmax(np.abs(vec))]


def _select(mu: np.ndarray, vecs: np.ndarray, positive: bool):
    # the Neumann constant mode sits at mu = 0 up to rounding
    zero = ZERO_TOL * float(np.max(np.abs(mu), initial=0.0))
    order = np.argsort(np.abs(mu))
    for i in order:
        if abs(mu[i]) <= zero:
            continue
        if positive and not mu[i] > 0:
            continue
        if not positive and not mu[i] < 0:
            continue
        phi = _normalize(vecs[:, i])
        if phi.min() > 0:
            return float(mu[i]), phi
    return None


def _shift_invert(laplacian: DiscreteLaplacian, weight: np.ndarray, k: int):
    K = sp.csc_matrix(laplacian.matrix)
    n = weight.size
    sigma = 0.0 if laplacian.bc is BoundaryCondition.DIRICHLET else NEUMANN_SHIFT
    try:
        lu = splu(sp.csc_matrix(K - sigma * sp.diags(weight)))
    except RuntimeError as e:
        raise EigenSolveError(f"Shift-invert factorization failed: {e}") from e
    op = LinearOperator((n, n), matvec=lambda x: lu.solve(weight * x), dtype=float)
    k = max(2, min(k, n - 2))
    try:
        nu, vecs = eigs(op, k=k, which="LM", v0=np.ones(n), tol=1e-13, maxiter=20 * n)
    except (ArpackNoConvergence, ArpackError) as e:
        raise EigenSolveError(f"Eigensolver did not converge: {e}") from e
    keep = np.abs(nu) > 1e-300
    mu = sigma + 1.0 / np.real(nu[keep])
    return mu, np.real(vecs[:, keep])


def _dense_pencil(laplacian: DiscreteLaplacian, weight: np.ndarray):
    K = laplacian.matrix.toarray()
    vals, vecs = scipy.linalg.eig(K, np.diag(weight))
    keep = np.isfinite(vals) & (np.abs(np.imag(vals)) <= 1e-8 * (1.0 + np.abs(vals)))
    return np.real(vals[keep]), np.real(vecs[:, keep])
