"""
Tensor grids on intervals and rectangles and the finite-difference -Laplacian.

The operator is stored as a symmetric stiffness matrix ``K`` together with a
lumped (trapezoid) mass diagonal ``W``. The nodal stencil of -Delta is
``W^{-1} K``: for Dirichlet ``W = I`` and ``K`` is the classical
``tridiag(-1, 2, -1)/h^2``; for Neumann the boundary rows of ``W^{-1} K``
coincide with the ghost-node reflection ``(2u_0 - 2u_1)/h^2``.
Every discrete equation in the package is written ``K u = W r(u)``.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sp

from .errors import GridError

logger = logging.getLogger(__name__)


class BoundaryCondition(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    @classmethod
    def parse(cls, value: Union[str, "BoundaryCondition"]) -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise GridError(f"Unknown boundary condition {value!r}; expected dirichlet or neumann")


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid; ``n_per_axis`` counts interior nodes on every axis"""

    dim: int
    n_per_axis: int
    extent: Tuple[Tuple[float, float], ...]
    bc: BoundaryCondition

    @cached_property
    def h(self) -> Tuple[float, ...]:
        return tuple((hi - lo) / (self.n_per_axis + 1) for lo, hi in self.extent)

    @cached_property
    def full_axis_coords(self) -> Tuple[np.ndarray, ...]:
        """Closed grid per axis, boundary nodes included"""
        return tuple(np.linspace(lo, hi, self.n_per_axis + 2) for lo, hi in self.extent)

    @cached_property
    def axis_coords(self) -> Tuple[np.ndarray, ...]:
        """Unknown-carrying coordinates per axis"""
        if self.bc is BoundaryCondition.DIRICHLET:
            return tuple(c[1:-1] for c in self.full_axis_coords)
        return self.full_axis_coords

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.axis_coords)

    @property
    def full_shape(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.full_axis_coords)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @cached_property
    def node_coords(self) -> np.ndarray:
        """(size, dim) array of unknown node coordinates in C order"""
        mesh = np.meshgrid(*self.axis_coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def full_node_coords(self) -> np.ndarray:
        mesh = np.meshgrid(*self.full_axis_coords, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def unknown_mask(self) -> np.ndarray:
        """Boolean mask over the closed grid (C order) selecting unknown nodes"""
        mask = np.zeros(self.full_shape, dtype=bool)
        if self.bc is BoundaryCondition.DIRICHLET:
            mask[tuple(slice(1, -1) for _ in range(self.dim))] = True
        else:
            mask[...] = True
        return mask.ravel()

    @cached_property
    def mass_diagonal(self) -> np.ndarray:
        """Lumped mass per unknown: 1 inside, 1/2 per boundary axis (Neumann only)"""
        factors = [_axis_mass(len(c), self.bc) for c in self.axis_coords]
        diag = factors[0]
        for f in factors[1:]:
            diag = np.kron(diag, f)
        return diag

    @property
    def quadrature_weights(self) -> np.ndarray:
        return self.cell_volume * self.mass_diagonal

    def integrate(self, values: np.ndarray) -> float:
        """Trapezoid integral of a nodal field; Dirichlet boundary values are zero"""
        return float(np.dot(self.quadrature_weights, values))

    def l2_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.dot(self.quadrature_weights * u, v))

    def boundary_distance(self, points: np.ndarray) -> np.ndarray:
        """Distance from each point to the boundary of the box"""
        points = np.atleast_2d(points)
        lo = np.array([e[0] for e in self.extent])
        hi = np.array([e[1] for e in self.extent])
        return np.min(np.minimum(points - lo, hi - points), axis=1)

    @cached_property
    def adjacency(self) -> sp.csr_matrix:
        """Nearest-neighbour graph of the unknown nodes"""
        return lattice_adjacency(self.shape)

    @cached_property
    def full_adjacency(self) -> sp.csr_matrix:
        return lattice_adjacency(self.full_shape)


@dataclass(frozen=True, eq=False)
class DiscreteLaplacian:
    """Symmetric stiffness ``matrix`` and lumped ``mass`` of -Delta on a grid"""

    grid: Grid
    matrix: sp.csr_matrix
    mass: np.ndarray

    @property
    def bc(self) -> BoundaryCondition:
        return self.grid.bc

    @cached_property
    def max_entry(self) -> float:
        return float(abs(self.matrix).max())

    @cached_property
    def stencil(self) -> sp.csr_matrix:
        """Nodal finite-difference form ``W^{-1} K``"""
        return sp.diags(1.0 / self.mass) @ self.matrix

    def apply(self, u: np.ndarray) -> np.ndarray:
        """-Delta_h u at the unknown nodes"""
        return (self.matrix @ u) / self.mass


def build_grid(dim: int, n_per_axis: int,
               extent: Sequence[Sequence[float]],
               bc: Union[str, BoundaryCondition]) -> Grid:
    if dim not in (1, 2):
        raise GridError(f"dim must be 1 or 2, got {dim}")
    if int(n_per_axis) != n_per_axis or n_per_axis < 3:
        raise GridError(f"n_per_axis must be an integer >= 3 (stencil undefined), got {n_per_axis}")
    extent = _normalize_extent(dim, extent)
    for axis, (lo, hi) in enumerate(extent):
        if not np.isfinite(lo) or not np.isfinite(hi) or hi <= lo:
            raise GridError(f"Extent on axis {axis} has zero measure: [{lo}, {hi}]")
    grid = Grid(dim=dim, n_per_axis=int(n_per_axis), extent=extent, bc=BoundaryCondition.parse(bc))
    logger.debug(f"Built {grid.bc.value} grid dim={dim} n={n_per_axis} unknowns={grid.size}")
    return grid


def assemble_laplacian(grid: Grid) -> DiscreteLaplacian:
    stiff = [_axis_stiffness(len(c), h, grid.bc) for c, h in zip(grid.axis_coords, grid.h)]
    mass = [sp.diags(_axis_mass(len(c), grid.bc)) for c in grid.axis_coords]
    if grid.dim == 1:
        matrix = stiff[0]
    else:
        matrix = sp.kron(stiff[0], mass[1]) + sp.kron(mass[0], stiff[1])
    matrix = sp.csr_matrix(matrix)
    matrix.sum_duplicates()
    return DiscreteLaplacian(grid=grid, matrix=matrix, mass=grid.mass_diagonal.copy())


def _normalize_extent(dim: int, extent) -> Tuple[Tuple[float, float], ...]:
    arr = np.asarray(extent, dtype=float)
    if arr.ndim == 1 and arr.size == 2 and dim == 1:
        arr = arr.reshape(1, 2)
    if arr.ndim == 1 and arr.size == 2 and dim == 2:
        arr = np.vstack([arr, arr])
    if arr.shape != (dim, 2):
        raise GridError(f"Extent must give [lo, hi] for each of {dim} axes, got {extent!r}")
    return tuple((float(lo), float(hi)) for lo, hi in arr)


def _axis_stiffness(m: int, h: float, bc: BoundaryCondition) -> sp.csr_matrix:
    main = np.full(m, 2.0)
    if bc is BoundaryCondition.NEUMANN:
        main[0] = main[-1] = 1.0
    off = -np.ones(m - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h ** 2


def _axis_mass(m: int, bc: BoundaryCondition) -> np.ndarray:
    w = np.ones(m)
    if bc is BoundaryCondition.NEUMANN:
        w[0] = w[-1] = 0.5
    return w


def lattice_adjacency(shape: Tuple[int, ...]) -> sp.csr_matrix:
    """4-neighbour (2D) or 2-neighbour (1D) graph of a C-ordered lattice"""
    paths = [sp.diags([np.ones(m - 1), np.ones(m - 1)], [-1, 1]) for m in shape]
    eyes = [sp.identity(m) for m in shape]
    if len(shape) == 1:
        return sp.csr_matrix(paths[0])
    return sp.csr_matrix(sp.kron(paths[0], eyes[1]) + sp.kron(eyes[0], paths[1]))
