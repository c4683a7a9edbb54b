"""
Brute-force references for the test suite. Nothing in the solver pipeline
imports this module.
"""

import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
import scipy.linalg

from .mesh import BoundaryCondition, DiscreteLaplacian
from .nsolve import ProblemContext

logger = logging.getLogger(__name__)

DENSE_CAP = 400
LATTICE_CAP = 6
LATTICE_LEVELS = 9


@dataclass
class DenseEigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray

    def principal(self, positive: bool = True):
        """(mu, phi) of smallest |mu| with the given sign and a positive eigenvector, or None"""
        zero = 1e-10 * float(np.max(np.abs(self.eigenvalues), initial=0.0))
        for i in np.argsort(np.abs(self.eigenvalues)):
            mu = self.eigenvalues[i]
            if (mu > 0) != positive or abs(mu) <= zero:
                continue
            phi = self.eigenvectors[:, i]
            phi = phi / phi[np.argmax(np.abs(phi))]
            if phi.min() > 0:
                return float(mu), phi
        return None


def dense_weighted_eig(laplacian: DiscreteLaplacian, a_vals: np.ndarray) -> DenseEigResult:
    """
    Every finite eigenpair of K phi = mu W diag(a) phi. With K positive definite (Dirichlet)
    the pencil is reduced by Cholesky to a symmetric problem for 1/mu;
    otherwise the full QZ decomposition is used.
    """
    n = a_vals.size
    if n > DENSE_CAP:
        raise ValueError(f"dense oracle is capped at {DENSE_CAP} unknowns, got {n}")
    K = laplacian.matrix.toarray()
    B = np.diag(laplacian.mass * a_vals)
    L = None
    if laplacian.bc is BoundaryCondition.DIRICHLET:
        try:
            L = scipy.linalg.cholesky(K, lower=True)
        except scipy.linalg.LinAlgError:
            pass
    if L is not None:
        Linv_B = scipy.linalg.solve_triangular(L, B, lower=True)
        C = scipy.linalg.solve_triangular(L, Linv_B.T, lower=True).T
        nu, Y = scipy.linalg.eigh(0.5 * (C + C.T))
        keep = np.abs(nu) > 1e-12 * np.abs(nu).max()
        mu = 1.0 / nu[keep]
        vecs = scipy.linalg.solve_triangular(L.T, Y[:, keep], lower=False)
    else:
        vals, vecs = scipy.linalg.eig(K, B)
        keep = np.isfinite(vals) & (np.abs(vals.imag) <= 1e-8 * (1.0 + np.abs(vals)))
        mu, vecs = vals[keep].real, vecs[:, keep].real
    residuals = np.max(np.abs(K @ vecs - B @ vecs * mu), axis=0) / np.max(np.abs(vecs), axis=0)
    order = np.argsort(mu)
    return DenseEigResult(eigenvalues=mu[order], eigenvectors=vecs[:, order], residuals=residuals[order])


def exhaustive_small_solutions(ctx: ProblemContext, lam: float, eps: float, u_cap: float,
                               sep_tol: Optional[float] = None, max_iter: int = 60) -> List[np.ndarray]:
    """
    Dense Newton from every point of the lattice {0, u_cap/8, ..., u_cap}^n,
    all starts advanced together; converged states are clustered by sep_tol.
    """
    n = ctx.size
    if n > LATTICE_CAP:
        raise ValueError(f"lattice search is capped at {LATTICE_CAP} unknowns, got {n}")
    levels = np.linspace(0.0, u_cap, LATTICE_LEVELS)
    U = np.array(list(itertools.product(levels, repeat=n)), dtype=float)
    A = ctx.A.toarray()
    term = ctx.term(eps)
    floor = -eps / 2.0 if eps > 0 else 0.0

    def residuals(U):
        return U @ A.T - term.reaction(U, lam, ctx.a, ctx.b, check=False)

    G = residuals(U)
    for _ in range(max_iter):
        J = A[None, :, :] - np.einsum("mi,ij->mij", term.reaction_jacobian(U, lam, ctx.a, ctx.b, check=False),
                                      np.eye(n))
        with np.errstate(all="ignore"):
            try:
                step = np.linalg.solve(J, -G[..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.stack([np.linalg.lstsq(Jm, -g, rcond=None)[0] for Jm, g in zip(J, G)])
            # fraction to the admissible boundary
            room = np.where(step < 0, 0.9 * (U - floor) / -step, np.inf)
        t = np.clip(np.min(room, axis=1), 0.0, 1.0)
        t[~np.all(np.isfinite(step), axis=1)] = 0.0
        U = U + t[:, None] * np.nan_to_num(step)
        G = residuals(U)

    res = np.max(np.abs(G), axis=1)
    tol = np.array([ctx.tol_res(u) for u in U]) * 10.0
    converged = U[res <= tol]
    sep = sep_tol if sep_tol is not None else ctx.sep_tol(converged)
    solutions: List[np.ndarray] = []
    for u in converged[np.argsort(np.max(np.abs(converged), axis=1))] if converged.size else []:
        if all(np.max(np.abs(u - s)) > sep for s in solutions):
            solutions.append(u)
    logger.debug(f"Lattice search from {len(U)} starts: {len(solutions)} distinct solution(s)")
    return solutions
