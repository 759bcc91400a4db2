"""
Breather Lab Lattice
====================

Finite truncation of the cubic lattice Z^d: site indexing, the discrete
Laplacian, the staggering transform and the field norms every other
module works with.

Sites are n in {-N..N}^d stored in row-major order. Dirichlet grids
treat off-grid neighbours as zero; periodic grids wrap around.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Tuple

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class Boundary(str, Enum):
    DIRICHLET = "dirichlet"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class LatticeGrid:
    dim: int
    radius: int
    boundary: Boundary = Boundary.DIRICHLET

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"Lattice dimension must be positive, got {self.dim}")
        if self.radius < 1:
            raise ValueError(f"Lattice radius must be positive, got {self.radius}")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @property
    def side(self) -> int:
        return 2 * self.radius + 1

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.side,) * self.dim

    @property
    def size(self) -> int:
        return self.side ** self.dim

    def index(self, site) -> int:
        """Row-major index of a site given by its lattice coordinates."""
        site = np.atleast_1d(np.asarray(site, dtype=int))
        if site.shape != (self.dim,):
            raise ValueError(f"Site must have {self.dim} coordinates, got {site.tolist()}")
        if np.any(np.abs(site) > self.radius):
            raise ValueError(f"Site {site.tolist()} lies outside radius {self.radius}")
        return int(np.ravel_multi_index(tuple(site + self.radius), self.shape))

    def site(self, index: int) -> Tuple[int, ...]:
        if not 0 <= index < self.size:
            raise ValueError(f"Index {index} out of range for {self.size} sites")
        return tuple(int(c) - self.radius for c in np.unravel_index(index, self.shape))

    def coordinates(self) -> np.ndarray:
        """(size, dim) integer array of site coordinates in storage order."""
        axes = np.indices(self.shape).reshape(self.dim, -1).T
        return axes - self.radius

    def parity(self) -> np.ndarray:
        """(-1)^(n_1 + ... + n_d) per site."""
        return np.where(self.coordinates().sum(axis=1) % 2 == 0, 1.0, -1.0)

    def outer_shell(self) -> np.ndarray:
        """Boolean mask of sites with at least one coordinate at +-N."""
        return np.any(np.abs(self.coordinates()) == self.radius, axis=1)

    def header(self) -> str:
        return f"d={self.dim} N={self.radius} boundary={self.boundary.value}"


@dataclass(frozen=True, eq=False)
class RealField:
    grid: LatticeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise ValueError(
                f"Field has {values.size} values but the grid has {self.grid.size} sites"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("Field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __add__(self, other: "RealField") -> "RealField":
        _check_same_grid(self, other)
        return RealField(self.grid, self.values + other.values)

    def __sub__(self, other: "RealField") -> "RealField":
        _check_same_grid(self, other)
        return RealField(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "RealField":
        return RealField(self.grid, scalar * self.values)

    __rmul__ = __mul__

    def at(self, site) -> float:
        return float(self.values[self.grid.index(site)])

    def as_array(self) -> np.ndarray:
        """Values reshaped onto the d-dimensional grid."""
        return self.values.reshape(self.grid.shape)


def _check_same_grid(a: RealField, b: RealField):
    if a.grid != b.grid:
        raise ValueError(f"Fields live on different grids: {a.grid} vs {b.grid}")


# ------------------------------------------------------------------
# Field constructors
# ------------------------------------------------------------------

def zero_field(grid: LatticeGrid) -> RealField:
    return RealField(grid, np.zeros(grid.size))


def delta_field(grid: LatticeGrid, site=None, value: float = 1.0) -> RealField:
    if site is None:
        site = (0,) * grid.dim
    values = np.zeros(grid.size)
    values[grid.index(site)] = value
    return RealField(grid, values)


def constant_field(grid: LatticeGrid, value: float) -> RealField:
    return RealField(grid, np.full(grid.size, float(value)))


# ------------------------------------------------------------------
# Discrete Laplacian
# ------------------------------------------------------------------

@lru_cache(maxsize=32)
def laplacian_matrix(grid: LatticeGrid) -> sp.csr_matrix:
    """Sparse (size x size) matrix of (Df)_n = sum of neighbours - 2d f_n."""
    side = grid.side
    second_difference = sp.diags(
        [np.ones(side - 1), -2.0 * np.ones(side), np.ones(side - 1)],
        [-1, 0, 1],
        format="lil",
    )
    if grid.boundary is Boundary.PERIODIC:
        second_difference[0, side - 1] += 1.0
        second_difference[side - 1, 0] += 1.0
    second_difference = second_difference.tocsr()

    total = sp.csr_matrix((grid.size, grid.size))
    for axis in range(grid.dim):
        left = sp.identity(side ** axis, format="csr")
        right = sp.identity(side ** (grid.dim - axis - 1), format="csr")
        total = total + sp.kron(sp.kron(left, second_difference), right, format="csr")
    logger.debug(f"Assembled Laplacian for {grid.header()} with {total.nnz} nonzeros")
    return total.tocsr()


def laplacian(f: RealField) -> RealField:
    return RealField(f.grid, laplacian_matrix(f.grid) @ f.values)


# ------------------------------------------------------------------
# Staggering and norms
# ------------------------------------------------------------------

def stagger(f: RealField, omega_tilde: float) -> Tuple[RealField, float]:
    """Multiply by (-1)^(n_1+...+n_d) and map the frequency to -4d - omega_tilde."""
    return RealField(f.grid, f.grid.parity() * f.values), -4.0 * f.grid.dim - omega_tilde


def l2_norm(f: RealField) -> float:
    return float(np.linalg.norm(f.values))


def inner(f: RealField, g: RealField) -> float:
    _check_same_grid(f, g)
    return float(np.dot(f.values, g.values))


def boundary_layer_norm(f: RealField) -> float:
    """l2 norm of the field restricted to the outermost shell of the grid."""
    return float(np.linalg.norm(f.values[f.grid.outer_shell()]))


def boundary_layer_ratio(f: RealField) -> float:
    total = l2_norm(f)
    if total == 0.0:
        return 0.0
    return boundary_layer_norm(f) / total
