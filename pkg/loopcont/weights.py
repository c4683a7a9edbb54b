"""
Indefinite weights a(x), b(x): sampling from expressions, sign components,
positivity balls and the geometry of the set where b is positive.

Weights are sampled on the closed grid (boundary nodes included) for
quadrature and geometry, and restricted to the unknown nodes for the solvers.
Components of the positivity sets are taken over unknown nodes.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import trapezoid
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import StructuralHypothesisError, WeightExprError
from .expr import WeightExpr
from .mesh import Grid

logger = logging.getLogger(__name__)

# First positive zero of the Bessel function J0 (disc eigenvalue j01^2 / R^2).
BESSEL_J0_FIRST_ROOT = 2.404825557695

UNDER_RESOLVED_NODES = 3


@dataclass(frozen=True)
class Ball:
    """Closed interval (1D) or disc (2D)"""

    center: Tuple[float, ...]
    radius: float

    @classmethod
    def from_spec(cls, spec: Union["Ball", Sequence[float], Mapping[str, Any]], dim: int) -> "Ball":
        if isinstance(spec, Ball):
            return spec
        if isinstance(spec, Mapping):
            center = tuple(float(c) for c in np.atleast_1d(spec["center"]))
            radius = float(spec["radius"])
        else:
            lo, hi = (float(v) for v in spec)
            if dim != 1:
                raise WeightExprError("Interval balls are only available in 1D; use center/radius", 0)
            center, radius = ((lo + hi) / 2.0,), (hi - lo) / 2.0
        if len(center) != dim or radius <= 0:
            raise WeightExprError(f"Invalid ball {spec!r} for a {dim}D domain", 0)
        return cls(center=center, radius=radius)

    def nodes(self, coords: np.ndarray) -> np.ndarray:
        dist = np.linalg.norm(coords - np.asarray(self.center), axis=1)
        return np.flatnonzero(dist <= self.radius * (1 + 1e-12) + 1e-14)

    def dirichlet_eigenvalue(self) -> float:
        """First Dirichlet eigenvalue of -Delta on the ball"""
        if len(self.center) == 1:
            return float((np.pi / (2.0 * self.radius)) ** 2)
        return float((BESSEL_J0_FIRST_ROOT / self.radius) ** 2)

    def to_dict(self) -> Dict[str, Any]:
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class HbData:
    gamma: float
    tube_width: float = 0.05
    beta_min: Optional[float] = None
    beta_max: Optional[float] = None


@dataclass(frozen=True, eq=False)
class WeightField:
    grid: Grid
    a_source: str
    b_source: str
    a_full: np.ndarray
    b_full: np.ndarray
    a_int: float
    b_int: float
    pos_balls: Optional[Tuple[Optional[Ball], Optional[Ball]]] = None
    hb_data: Optional[HbData] = None

    @property
    def a_vals(self) -> np.ndarray:
        return self.a_full[self.grid.unknown_mask]

    @property
    def b_vals(self) -> np.ndarray:
        return self.b_full[self.grid.unknown_mask]

    @cached_property
    def a_pos_components(self) -> List[np.ndarray]:
        return strict_components(self.grid, self.a_vals > 0)

    @cached_property
    def a_neg_components(self) -> List[np.ndarray]:
        return strict_components(self.grid, self.a_vals < 0)

    @cached_property
    def b_pos_components(self) -> List[np.ndarray]:
        return strict_components(self.grid, self.b_vals > 0)

    @property
    def d_b_nodes(self) -> np.ndarray:
        """Unknown nodes where b < 0"""
        return np.flatnonzero(self.b_vals < 0)

    def shifted(self, delta: float) -> "WeightField":
        """Weight pair with a replaced by a - delta"""
        a_full = self.a_full - delta
        return replace(self, a_source=f"({self.a_source}) - {delta!r}", a_full=a_full,
                       a_int=_trapezoid(self.grid, a_full))

    def negated(self) -> "WeightField":
        """Weight pair (-a, b) with the positivity balls swapped"""
        balls = None if self.pos_balls is None else (self.pos_balls[1], self.pos_balls[0])
        return replace(self, a_source=f"-({self.a_source})", a_full=-self.a_full,
                       a_int=-self.a_int, pos_balls=balls)

    def with_b(self, b_full: np.ndarray, b_source: str) -> "WeightField":
        return replace(self, b_source=b_source, b_full=b_full, b_int=_trapezoid(self.grid, b_full))


@dataclass
class HPsiReport:
    which: str
    components: List[np.ndarray]
    finite: bool = True
    under_resolved: List[int] = field(default_factory=list)

    @property
    def count(self) -> int:
        return len(self.components)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "which": self.which,
            "count": self.count,
            "sizes": [int(c.size) for c in self.components],
            "finite": self.finite,
            "under_resolved": self.under_resolved,
        }


@dataclass
class Witness:
    B: Optional[Ball]
    B_prime: Optional[Ball]
    a0: Optional[float] = None
    b0: Optional[float] = None
    a0_prime: Optional[float] = None
    b0_prime: Optional[float] = None

    def side(self, side: str) -> Tuple[Ball, float, float]:
        """(ball, a0, b0) for ``plus`` or the mirrored triple for ``minus``"""
        if side == "plus":
            return self.B, self.a0, self.b0
        return self.B_prime, self.a0_prime, self.b0_prime

    def to_dict(self) -> Dict[str, Any]:
        return {
            "B": self.B.to_dict() if self.B else None,
            "B_prime": self.B_prime.to_dict() if self.B_prime else None,
            "a0": self.a0, "b0": self.b0, "a0_prime": self.a0_prime, "b0_prime": self.b0_prime,
        }


@dataclass
class AbPosiReport:
    ok: bool
    witness: Witness
    message: str = ""
    node: Optional[int] = None
    searched: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {"ok": self.ok, "witness": self.witness.to_dict(), "message": self.message,
                "node": self.node, "searched": self.searched}


@dataclass
class HbReport:
    ok: bool
    failing_clause: Optional[str]
    case: str
    gamma: float
    beta_fit: Tuple[float, float] = (float("nan"), float("nan"))
    tube_nodes: int = 0
    connected: bool = True
    exponent_ok: bool = True
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": self.ok, "failing_clause": self.failing_clause, "case": self.case,
            "gamma": self.gamma, "beta_fit": list(self.beta_fit), "tube_nodes": self.tube_nodes,
            "connected": self.connected, "exponent_ok": self.exponent_ok, "message": self.message,
        }


def sample_weights(expr_a: Union[str, WeightExpr], expr_b: Union[str, WeightExpr], grid: Grid,
                   pos_balls=None, hb_data: Optional[HbData] = None,
                   strict: bool = True) -> WeightField:
    """
    Sample a and b on the grid and integrate them with the trapezoid rule.

    Parameters
    ----------
    expr_a, expr_b : str or WeightExpr
        Weight expressions in x (and y on 2D grids).
    grid : Grid
    pos_balls : pair of ball specs, optional
        (B, B') as intervals or center/radius mappings; either entry may be None.
    hb_data : HbData, optional
    strict : bool
        Enforce the standing sign hypotheses (a changes sign, b > 0 somewhere).

    Raises
    ------
    WeightExprError, WeightDomainError
        Parse or evaluation failure.
    StructuralHypothesisError
        ``strict`` and a sign hypothesis fails.
    """
    expr_a = expr_a if isinstance(expr_a, WeightExpr) else WeightExpr(expr_a)
    expr_b = expr_b if isinstance(expr_b, WeightExpr) else WeightExpr(expr_b)
    coords = grid.full_node_coords
    a_full = expr_a.evaluate(coords)
    b_full = expr_b.evaluate(coords)

    balls = None
    if pos_balls is not None:
        balls = tuple(None if b is None else Ball.from_spec(b, grid.dim) for b in pos_balls)

    field_ = WeightField(grid=grid, a_source=expr_a.source, b_source=expr_b.source,
                         a_full=a_full, b_full=b_full,
                         a_int=_trapezoid(grid, a_full), b_int=_trapezoid(grid, b_full),
                         pos_balls=balls, hb_data=hb_data)
    if strict:
        check_standing_hypotheses(field_)
    logger.debug(f"Sampled weights a_int={field_.a_int:.6g} b_int={field_.b_int:.6g}")
    return field_


def check_standing_hypotheses(field_: WeightField, require_b: bool = True) -> None:
    a = field_.a_vals
    if not (a.min() < 0 < a.max()):
        raise StructuralHypothesisError(
            f"a must change sign: min a = {a.min():.6g}, max a = {a.max():.6g}")
    if require_b and field_.b_vals.max() <= 0:
        raise StructuralHypothesisError("b positive somewhere violated: max b <= 0")


def strict_components(grid: Grid, mask: np.ndarray) -> List[np.ndarray]:
    """Connected node sets of ``mask`` under grid adjacency, ordered by first node"""
    return _components(grid.adjacency, mask)


def check_H_psi(field_: WeightField, which: str,
                threshold: int = UNDER_RESOLVED_NODES) -> HPsiReport:
    """Sign components of a, -a or b; small components are flagged as under-resolved"""
    comps = {
        "a": field_.a_pos_components,
        "-a": field_.a_neg_components,
        "b": field_.b_pos_components,
    }
    if which not in comps:
        raise ValueError(f"which must be one of a, -a, b; got {which!r}")
    components = comps[which]
    under = [i for i, c in enumerate(components) if c.size < threshold]
    if under:
        logger.warning(f"{len(under)} under-resolved component(s) of {{{which} > 0}}")
    return HPsiReport(which=which, components=components, under_resolved=under)


def check_ab_posi(field_: WeightField) -> AbPosiReport:
    """
    Verify (or search for) balls B, B' with a, b >= a0, b0 > 0 on B and
    -a, b >= a0', b0' > 0 on B'. Constants are nodewise minima over the closed grid.
    """
    grid = field_.grid
    coords = grid.full_node_coords
    a, b = field_.a_full, field_.b_full
    witness = Witness(B=None, B_prime=None)

    if b.max() <= 0:
        return AbPosiReport(ok=False, witness=witness, message="b positive somewhere violated",
                            node=int(np.argmax(b)))

    given = field_.pos_balls or (None, None)
    searched = False
    for side, sign in (("plus", 1.0), ("minus", -1.0)):
        ball = given[0] if side == "plus" else given[1]
        if ball is None:
            searched = True
            ball = search_ball(grid, (sign * a > 0) & (b > 0))
            if ball is None:
                return AbPosiReport(ok=False, witness=witness, searched=True,
                                    message=f"no ball found inside {{{'' if sign > 0 else '-'}a > 0}} and {{b > 0}}")
        nodes = ball.nodes(coords)
        if nodes.size == 0:
            return AbPosiReport(ok=False, witness=witness, message=f"ball {ball} contains no grid node")
        if np.any(grid.boundary_distance(coords[nodes]) <= 0):
            return AbPosiReport(ok=False, witness=witness,
                                message=f"ball {ball} is not inside the domain")
        sa, sb = sign * a[nodes], b[nodes]
        label = "a" if sign > 0 else "-a"
        if sa.min() <= 0:
            bad = int(nodes[np.argmax(sa <= 0)])
            return AbPosiReport(ok=False, witness=witness, node=bad,
                                message=f"{label} >= a0 > 0 fails on ball {side} at node {bad}")
        if sb.min() <= 0:
            bad = int(nodes[np.argmax(sb <= 0)])
            return AbPosiReport(ok=False, witness=witness, node=bad,
                                message=f"b >= b0 > 0 fails on ball {side} at node {bad}")
        if side == "plus":
            witness.B, witness.a0, witness.b0 = ball, float(sa.min()), float(sb.min())
        else:
            witness.B_prime, witness.a0_prime, witness.b0_prime = ball, float(sa.min()), float(sb.min())
    return AbPosiReport(ok=True, witness=witness, searched=searched)


def search_ball(grid: Grid, inside: np.ndarray, min_nodes: int = 3) -> Optional[Ball]:
    """
    Largest ball centred at a node of ``inside`` (a closed-grid mask) whose nodes
    all lie in ``inside``, kept one mesh spacing away from the first outside node.
    """
    coords = grid.full_node_coords
    if not inside.any():
        return None
    inner = coords[inside]
    outer = coords[~inside]
    if outer.size:
        dist_out, _ = cKDTree(outer).query(inner)
    else:
        dist_out = np.full(len(inner), np.inf)
    radius = np.minimum(dist_out - max(grid.h), grid.boundary_distance(inner) - 0.5 * min(grid.h))
    order = np.argsort(-radius, kind="stable")
    for idx in order:
        r = radius[idx]
        if r <= 0:
            break
        ball = Ball(center=tuple(float(c) for c in inner[idx]), radius=float(r))
        if ball.nodes(coords).size >= min_nodes:
            return ball
    return None


def hb_geometry_case(field_: WeightField) -> str:
    grid = field_.grid
    b = field_.b_full
    if np.all(b > 0):
        return "whole_domain"
    boundary = _closed_boundary_mask(grid)
    if np.any(b[boundary] > 0):
        return "boundary_strip"
    return "interior"


def check_H_b(field_: WeightField, p: float, N: Optional[int] = None,
              hb: Optional[HbData] = None) -> HbReport:
    """
    Check that b+ = beta * d(., boundary of {b > 0})^gamma near the interface with
    beta bounded in [beta_min, beta_max], that b < 0 off the closure of {b > 0},
    that {b > 0} is connected, and the exponent condition for N > 2.
    """
    hb = hb or field_.hb_data
    if hb is None:
        raise ValueError("check_H_b needs hb data (gamma, tube width)")
    grid = field_.grid
    N = grid.dim if N is None else N
    gamma = float(hb.gamma)
    b = field_.b_full
    case = hb_geometry_case(field_)

    exponent_ok = True
    if N > 2:
        exponent_ok = p < min((N + 2) / (N - 2), (N + 1 + gamma) / (N - 1))

    if case == "whole_domain":
        ok = exponent_ok
        return HbReport(ok=ok, failing_clause=None if ok else "exponent", case=case, gamma=gamma,
                        exponent_ok=exponent_ok,
                        message=f"b > 0 on the closed domain (min b = {b.min():.6g})")

    positive = b > 0
    comps = _components(grid.full_adjacency, positive)
    connected = len(comps) == 1
    if not connected:
        return HbReport(ok=False, failing_clause="connected", case=case, gamma=gamma,
                        connected=False, exponent_ok=exponent_ok,
                        message=f"{{b > 0}} has {len(comps)} components")

    adjacent = np.asarray(grid.full_adjacency @ positive.astype(float)).ravel() > 0
    outside_closure = ~positive & ~adjacent
    if np.any(b[outside_closure] >= 0):
        bad = int(np.flatnonzero(outside_closure & (b >= 0))[0])
        return HbReport(ok=False, failing_clause="D_b", case=case, gamma=gamma,
                        exponent_ok=exponent_ok,
                        message=f"b >= 0 at node {bad} outside the closure of {{b > 0}}")

    interface = interface_points(grid, b)
    coords = grid.full_node_coords
    dist, _ = cKDTree(interface).query(coords[positive])
    tube = dist <= hb.tube_width
    if not tube.any():
        return HbReport(ok=False, failing_clause="tube", case=case, gamma=gamma,
                        exponent_ok=exponent_ok, message="no node inside the tubular neighbourhood")
    beta = b[positive][tube] / np.maximum(dist[tube], 1e-300) ** gamma
    beta_fit = (float(beta.min()), float(beta.max()))
    beta_min = hb.beta_min if hb.beta_min is not None else 0.0
    beta_max = hb.beta_max if hb.beta_max is not None else np.inf
    if not (beta_fit[0] > 0 and beta_fit[0] >= beta_min):
        return HbReport(ok=False, failing_clause="beta_min", case=case, gamma=gamma, beta_fit=beta_fit,
                        tube_nodes=int(tube.sum()), exponent_ok=exponent_ok,
                        message=f"fitted beta {beta_fit[0]:.6g} below {beta_min:.6g}")
    if not (np.isfinite(beta_fit[1]) and beta_fit[1] <= beta_max):
        return HbReport(ok=False, failing_clause="beta_max", case=case, gamma=gamma, beta_fit=beta_fit,
                        tube_nodes=int(tube.sum()), exponent_ok=exponent_ok,
                        message=f"fitted beta {beta_fit[1]:.6g} above {beta_max:.6g}")
    if not exponent_ok:
        return HbReport(ok=False, failing_clause="exponent", case=case, gamma=gamma, beta_fit=beta_fit,
                        tube_nodes=int(tube.sum()), exponent_ok=False,
                        message=f"p = {p} violates the subcritical bound for N = {N}")
    return HbReport(ok=True, failing_clause=None, case=case, gamma=gamma, beta_fit=beta_fit,
                    tube_nodes=int(tube.sum()), exponent_ok=True)


def interface_points(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Sign changes of a closed-grid field located by linear interpolation along edges"""
    coords = grid.full_node_coords
    adj = grid.full_adjacency.tocoo()
    i, j = adj.row, adj.col
    pos = values > 0
    cross = pos[i] & ~pos[j]
    i, j = i[cross], j[cross]
    vi, vj = values[i], values[j]
    t = vi / (vi - vj)
    return coords[i] + t[:, None] * (coords[j] - coords[i])


def _components(adjacency, mask: np.ndarray) -> List[np.ndarray]:
    nodes = np.flatnonzero(mask)
    if nodes.size == 0:
        return []
    sub = adjacency[nodes][:, nodes]
    n_comp, labels = connected_components(sub, directed=False)
    comps = [nodes[labels == k] for k in range(n_comp)]
    comps.sort(key=lambda c: int(c[0]))
    return comps


def _closed_boundary_mask(grid: Grid) -> np.ndarray:
    mask = np.zeros(grid.full_shape, dtype=bool)
    for axis in range(grid.dim):
        index = [slice(None)] * grid.dim
        index[axis] = 0
        mask[tuple(index)] = True
        index[axis] = -1
        mask[tuple(index)] = True
    return mask.ravel()


def _trapezoid(grid: Grid, full_values: np.ndarray) -> float:
    vals = full_values.reshape(grid.full_shape)
    for axis in reversed(range(grid.dim)):
        vals = trapezoid(vals, x=grid.full_axis_coords[axis], axis=axis)
    return float(vals)
