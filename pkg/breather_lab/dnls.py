"""
Breather Lab: Stationary dNLS Solitons
======================================

Real solitons of the stationary discrete NLS equation

    Omega A + gamma_p |A|^(2p) A - Delta A = 0,   gamma_p = binom(2p+1, p+1),

their Jacobian, the linearization spectrum with Krein signatures, the
conserved mass/energy, and natural-parameter continuation in the
focusing frequency (power curve).

Solutions can be computed either directly in the frame above or in the
focusing frame  Delta A + gamma_p A^(2p+1) = Omega_t A  (Omega_t > 0 for
bright solitons), related to the first by the staggering transform.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from breather_lab.config import newton as newton_config
from breather_lab.config import spectrum as spectrum_config
from breather_lab.errors import (
    EigenSolverFailure,
    NonConvergence,
    SingularJacobian,
)
from breather_lab.lattice import (
    LatticeGrid,
    RealField,
    delta_field,
    laplacian_matrix,
    stagger,
)

logger = logging.getLogger(__name__)

DENSE_SINGULAR_VALUE_LIMIT = 4000


def gamma_p(p: int) -> int:
    """Averaged nonlinearity coefficient binom(2p+1, p+1)."""
    if p < 1:
        raise ValueError(f"Nonlinearity exponent p must be >= 1, got {p}")
    return math.comb(2 * p + 1, p + 1)


@dataclass(frozen=True)
class DnlsParams:
    """Soliton parameters. In the focusing frame ``omega`` holds Omega_t."""
    p: int
    omega: float
    dim: int = 1
    focusing: bool = False

    def __post_init__(self):
        if self.p < 1:
            raise ValueError(f"Nonlinearity exponent p must be >= 1, got {self.p}")
        if self.dim < 1:
            raise ValueError(f"Lattice dimension must be positive, got {self.dim}")
        if -4.0 * self.dim <= self.omega <= 0.0:
            raise ValueError(
                f"Frequency {self.omega} lies in the phonon band [-{4 * self.dim}, 0]"
            )

    @classmethod
    def focusing_frame(cls, p: int, omega_tilde: float, dim: int = 1) -> "DnlsParams":
        return cls(p=p, omega=omega_tilde, dim=dim, focusing=True)

    @property
    def gamma(self) -> int:
        return gamma_p(self.p)

    @property
    def sign(self) -> float:
        return -1.0 if self.focusing else 1.0

    @property
    def omega_tilde(self) -> float:
        return self.omega if self.focusing else -4.0 * self.dim - self.omega

    @property
    def omega_defocusing(self) -> float:
        """Omega of the stationary equation used by the breather modules."""
        return -4.0 * self.dim - self.omega if self.focusing else self.omega

    def to_defocusing(self) -> "DnlsParams":
        if not self.focusing:
            return self
        return DnlsParams(p=self.p, omega=self.omega_defocusing, dim=self.dim, focusing=False)

    def to_focusing(self) -> "DnlsParams":
        if self.focusing:
            return self
        return DnlsParams.focusing_frame(self.p, self.omega_tilde, self.dim)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "omega": self.omega,
            "dim": self.dim,
            "focusing": self.focusing,
            "gamma_p": self.gamma,
        }


@dataclass(frozen=True, eq=False)
class SolitonBranch:
    params: DnlsParams
    amplitude: RealField
    residual_norm: float
    jacobian_min_singular_value: float
    mass: float
    energy: float
    iterations: int = 0

    @property
    def grid(self) -> LatticeGrid:
        return self.amplitude.grid

    def to_defocusing(self) -> "SolitonBranch":
        """Same soliton expressed in the frame of the stationary equation (staggered)."""
        if not self.params.focusing:
            return self
        staggered, _ = stagger(self.amplitude, self.params.omega)
        params = self.params.to_defocusing()
        mass, energy = mass_and_energy(staggered, params)
        return replace(self, params=params, amplitude=staggered, mass=mass, energy=energy)

    def to_manifest(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "grid": {
                "dim": self.grid.dim,
                "radius": self.grid.radius,
                "boundary": self.grid.boundary.value,
            },
            "mass": self.mass,
            "energy": self.energy,
            "residual_norm": self.residual_norm,
            "jacobian_min_singular_value": self.jacobian_min_singular_value,
            "iterations": self.iterations,
        }


@dataclass(eq=False)
class DnlsSpectralPair:
    lam: complex
    b_plus: np.ndarray
    b_minus: np.ndarray
    krein: float
    krein_sign: int
    multiplicity: int = 1
    in_band: bool = False
    near_band: bool = False
    residual: float = 0.0

    @property
    def two_lambda(self) -> complex:
        return 2.0 * self.lam


# ------------------------------------------------------------------
# Residual and Jacobian
# ------------------------------------------------------------------

def _check_grid(grid: LatticeGrid, params: DnlsParams):
    if grid.dim != params.dim:
        raise ValueError(f"Grid dimension {grid.dim} does not match params dimension {params.dim}")


def _residual_values(values: np.ndarray, params: DnlsParams, lap: sp.csr_matrix) -> np.ndarray:
    nonlinear = params.sign * params.gamma * np.abs(values) ** (2 * params.p) * values
    return params.omega * values + nonlinear - lap @ values


def _jacobian_matrix(values: np.ndarray, params: DnlsParams, lap: sp.csr_matrix) -> sp.csr_matrix:
    diagonal = params.omega + params.sign * (2 * params.p + 1) * params.gamma * np.abs(values) ** (2 * params.p)
    return (sp.diags(diagonal) - lap).tocsr()


def dnls_residual(A: RealField, params: DnlsParams) -> RealField:
    _check_grid(A.grid, params)
    return RealField(A.grid, _residual_values(A.values, params, laplacian_matrix(A.grid)))


def jacobian(A: RealField, params: DnlsParams) -> sp.csr_matrix:
    """J = Omega + (1+2p) gamma_p |A|^(2p) - Delta as a sparse symmetric matrix."""
    _check_grid(A.grid, params)
    return _jacobian_matrix(A.values, params, laplacian_matrix(A.grid))


def min_singular_value(matrix) -> float:
    if sp.issparse(matrix):
        if matrix.shape[0] > DENSE_SINGULAR_VALUE_LIMIT:
            vals = spla.eigsh(matrix, k=1, sigma=0.0, which="LM", return_eigenvectors=False)
            return float(np.min(np.abs(vals)))
        matrix = matrix.toarray()
    return float(np.linalg.svd(matrix, compute_uv=False).min())


# ------------------------------------------------------------------
# Mass and energy
# ------------------------------------------------------------------

def mass_and_energy(A: RealField, params: DnlsParams) -> Tuple[float, float]:
    """nu = sum |A|^2 and E = sum over ordered neighbour pairs |A_k - A_n|^2 - sum |A|^(2p+2)/(p+1)."""
    values = A.values
    mass = float(np.dot(values, values))
    gradient = -2.0 * float(np.dot(values, laplacian_matrix(A.grid) @ values))
    potential = float(np.sum(np.abs(values) ** (2 * params.p + 2))) / (params.p + 1)
    return mass, gradient - potential


# ------------------------------------------------------------------
# Seeds
# ------------------------------------------------------------------

def anticontinuum_amplitude(params: DnlsParams) -> float:
    return (abs(params.omega_tilde) / params.gamma) ** (1.0 / (2 * params.p))


def _to_frame(field_values: np.ndarray, grid: LatticeGrid, params: DnlsParams) -> RealField:
    if params.focusing:
        return RealField(grid, field_values)
    return RealField(grid, grid.parity() * field_values)


def anticontinuum_seed(grid: LatticeGrid, params: DnlsParams, site=None) -> RealField:
    """Single-site seed with the anti-continuum amplitude, expressed in the frame of ``params``."""
    _check_grid(grid, params)
    seed = delta_field(grid, site, anticontinuum_amplitude(params))
    return _to_frame(seed.values, grid, params)


def multi_site_seed(grid: LatticeGrid, params: DnlsParams, sites: Sequence, signs: Sequence[int]) -> RealField:
    """Multi-pulse anti-continuum seed; signs are given in the focusing frame."""
    _check_grid(grid, params)
    if len(sites) != len(signs):
        raise ValueError("Each excited site needs exactly one sign")
    amplitude = anticontinuum_amplitude(params)
    values = np.zeros(grid.size)
    for site, sign in zip(sites, signs):
        values[grid.index(site)] = sign * amplitude
    return _to_frame(values, grid, params)


def two_site_seed(grid: LatticeGrid, params: DnlsParams, out_of_phase: bool = True) -> RealField:
    first = (0,) * grid.dim
    second = (1,) + (0,) * (grid.dim - 1)
    return multi_site_seed(grid, params, [first, second], [1, -1 if out_of_phase else 1])


# ------------------------------------------------------------------
# Newton solve
# ------------------------------------------------------------------

def newton_solve(residual_fn, jacobian_fn, x0: np.ndarray, tol: float, max_iter: int,
                 label: str = "newton") -> Tuple[np.ndarray, float, int]:
    """Damped Newton iteration; the step is halved while the residual grows."""
    x = np.array(x0, dtype=float)
    r = residual_fn(x)
    norm = float(np.linalg.norm(r))
    for iteration in range(max_iter + 1):
        if norm < tol:
            logger.debug(f"{label}: converged in {iteration} iterations, residual {norm:.3e}")
            return x, norm, iteration
        if iteration == max_iter:
            break
        J = jacobian_fn(x)
        try:
            if sp.issparse(J):
                dx = spla.spsolve(J.tocsc(), -r)
            else:
                dx = np.linalg.solve(J, -r)
        except (np.linalg.LinAlgError, RuntimeError) as e:
            raise SingularJacobian(f"{label}: linear solve failed at iteration {iteration}: {e}")
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian(f"{label}: singular Jacobian at iteration {iteration}")

        step = 1.0
        for _ in range(newton_config.max_halvings):
            trial = x + step * dx
            r_trial = residual_fn(trial)
            trial_norm = float(np.linalg.norm(r_trial))
            if np.isfinite(trial_norm) and trial_norm < norm:
                break
            step *= newton_config.damping
        x, r, norm = trial, r_trial, trial_norm
        logger.debug(f"{label}: iteration {iteration + 1}, step {step:.3g}, residual {norm:.3e}")

    raise NonConvergence(
        f"{label}: no convergence after {max_iter} iterations (residual {norm:.3e})",
        iterations=max_iter,
        residual=norm,
    )


def solve_soliton(params: DnlsParams, grid: LatticeGrid, seed: RealField,
                  tol: Optional[float] = None, max_iter: Optional[int] = None) -> SolitonBranch:
    _check_grid(grid, params)
    if seed.grid != grid:
        raise ValueError("Seed field lives on a different grid")
    tol = newton_config.tol if tol is None else tol
    max_iter = newton_config.max_iter if max_iter is None else max_iter
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    if not np.any(seed.values):
        raise NonConvergence("Zero seed: the trivial solution is excluded")

    lap = laplacian_matrix(grid)
    values, norm, iterations = newton_solve(
        lambda x: _residual_values(x, params, lap),
        lambda x: _jacobian_matrix(x, params, lap),
        seed.values,
        tol,
        max_iter,
        label=f"soliton(omega={params.omega:g})",
    )
    if np.linalg.norm(values) < np.sqrt(tol):
        raise NonConvergence("Newton iteration collapsed onto the zero solution", iterations, norm)

    amplitude = RealField(grid, values)
    mass, energy = mass_and_energy(amplitude, params)
    sigma_min = min_singular_value(_jacobian_matrix(values, params, lap))
    logger.info(
        f"Soliton omega={params.omega:g} (focusing={params.focusing}): "
        f"mass={mass:.6g}, residual={norm:.2e}, min singular value={sigma_min:.4g}"
    )
    return SolitonBranch(
        params=params,
        amplitude=amplitude,
        residual_norm=norm,
        jacobian_min_singular_value=sigma_min,
        mass=mass,
        energy=energy,
        iterations=iterations,
    )


# ------------------------------------------------------------------
# Continuation in the focusing frequency (power curve)
# ------------------------------------------------------------------

def _solve_toward(previous: SolitonBranch, target: float, depth: int, tol: float) -> SolitonBranch:
    params = replace(previous.params.to_focusing(), omega=target)
    seed = previous.amplitude if previous.params.focusing else stagger(previous.amplitude, 0.0)[0]
    try:
        return solve_soliton(params, previous.grid, seed, tol)
    except (NonConvergence, SingularJacobian) as e:
        if depth >= newton_config.max_halvings:
            raise
        midpoint = 0.5 * (previous.params.omega_tilde + target)
        logger.warning(f"Continuation step to {target:g} failed ({e}); halving via {midpoint:g}")
        halfway = _solve_toward(previous, midpoint, depth + 1, tol)
        return _solve_toward(halfway, target, depth + 1, tol)


def continue_branch(grid: LatticeGrid, p: int, omega_tilde_values: Sequence[float],
                    seed: Optional[RealField] = None, tol: Optional[float] = None) -> List[SolitonBranch]:
    """Natural-parameter continuation in Omega_t, each solve seeded by the previous one."""
    if not omega_tilde_values:
        raise ValueError("Continuation needs at least one frequency")
    tol = newton_config.tol if tol is None else tol
    first = DnlsParams.focusing_frame(p, omega_tilde_values[0], grid.dim)
    if seed is None:
        seed = anticontinuum_seed(grid, first)
    branches = [solve_soliton(first, grid, seed, tol)]
    for value in omega_tilde_values[1:]:
        branches.append(_solve_toward(branches[-1], value, 0, tol))
    return branches


def power_curve(branches: Sequence[SolitonBranch]) -> pd.DataFrame:
    """Mass/energy table along a continuation with the slope d(nu)/d(Omega_t)."""
    rows = [
        {
            "omega_tilde": b.params.omega_tilde,
            "omega": b.params.omega_defocusing,
            "mass": b.mass,
            "energy": b.energy,
            "residual_norm": b.residual_norm,
            "min_singular_value": b.jacobian_min_singular_value,
        }
        for b in branches
    ]
    df = pd.DataFrame(rows)
    if len(df) >= 2:
        df["dmass_domega_tilde"] = np.gradient(df["mass"].to_numpy(), df["omega_tilde"].to_numpy())
    else:
        df["dmass_domega_tilde"] = np.nan
    return df


# ------------------------------------------------------------------
# Linearization spectrum
# ------------------------------------------------------------------

def band_edges(omega: float, dim: int) -> Tuple[float, float]:
    """|Im 2 Lambda| range of the continuous spectrum, for the stationary-equation Omega."""
    a, b = abs(omega), abs(omega + 4.0 * dim)
    return min(a, b), max(a, b)


def band_distance(two_lambda: complex, omega: float, dim: int) -> float:
    low, high = band_edges(omega, dim)
    imag = abs(two_lambda.imag)
    gap = max(low - imag, imag - high, 0.0)
    return float(np.hypot(two_lambda.real, gap))


def cluster_sizes(values: np.ndarray, tol: float) -> np.ndarray:
    values = np.asarray(values)
    distances = np.abs(values[:, None] - values[None, :])
    return (distances <= tol).sum(axis=1)


def dnls_block_operator(branch: SolitonBranch) -> np.ndarray:
    """Dense block matrix [[0, -L_-], [L_+, 0]] in the stationary-equation frame."""
    branch = branch.to_defocusing()
    params = branch.params
    values = branch.amplitude.values
    lap = laplacian_matrix(branch.grid).toarray()
    n = branch.grid.size
    base = params.omega * np.eye(n) - lap
    power = np.abs(values) ** (2 * params.p)
    l_plus = base + np.diag((2 * params.p + 1) * params.gamma * power)
    l_minus = base + np.diag(params.gamma * power)
    block = np.zeros((2 * n, 2 * n))
    block[:n, n:] = -l_minus
    block[n:, :n] = l_plus
    return block


def krein_value(b_plus: np.ndarray, b_minus: np.ndarray) -> float:
    """4i(<b-, b+> - <b+, b->) normalized by the squared eigenvector norm."""
    norm2 = float(np.vdot(b_plus, b_plus).real + np.vdot(b_minus, b_minus).real)
    return float(-8.0 * np.vdot(b_plus, b_minus).imag / norm2)


def dnls_spectrum(branch: SolitonBranch) -> List[DnlsSpectralPair]:
    branch = branch.to_defocusing()
    block = dnls_block_operator(branch)
    n = branch.grid.size
    try:
        eigenvalues, eigenvectors = np.linalg.eig(block)
    except np.linalg.LinAlgError as e:
        raise EigenSolverFailure(f"dNLS eigenproblem failed: {e}")
    if not np.all(np.isfinite(eigenvalues)):
        raise EigenSolverFailure("dNLS eigenproblem returned non-finite eigenvalues")

    multiplicity = cluster_sizes(eigenvalues, spectrum_config.cluster_tol)
    omega, dim = branch.params.omega, branch.grid.dim
    low, high = band_edges(omega, dim)
    pairs = []
    for k in np.argsort(np.abs(eigenvalues), kind="stable"):
        ev = complex(eigenvalues[k])
        vec = eigenvectors[:, k] / np.linalg.norm(eigenvectors[:, k])
        b_plus, b_minus = vec[:n], vec[n:]
        kv = krein_value(b_plus, b_minus)
        sign = 0 if abs(kv) < spectrum_config.krein_zero else int(np.sign(kv))
        in_band = abs(ev.real) <= spectrum_config.near_band and low <= abs(ev.imag) <= high
        pairs.append(DnlsSpectralPair(
            lam=ev / 2.0,
            b_plus=b_plus,
            b_minus=b_minus,
            krein=kv,
            krein_sign=sign,
            multiplicity=int(multiplicity[k]),
            in_band=bool(in_band),
            near_band=band_distance(ev, omega, dim) <= spectrum_config.near_band,
            residual=float(np.linalg.norm(block @ vec - ev * vec)),
        ))
    unstable = [pr for pr in pairs if abs(pr.lam.real) > spectrum_config.krein_zero]
    logger.info(
        f"dNLS spectrum: {len(pairs)} eigenvalues, {sum(pr.in_band for pr in pairs)} in band, "
        f"{len(unstable)} with nonzero real part"
    )
    return pairs


def isolated_imaginary_pairs(pairs: Sequence[DnlsSpectralPair]) -> List[DnlsSpectralPair]:
    """Simple eigenvalues on the positive imaginary axis, off the band, with a definite Krein sign."""
    return [
        pr for pr in pairs
        if abs(pr.lam.real) < spectrum_config.krein_zero
        and pr.lam.imag > spectrum_config.kernel_tol
        and pr.multiplicity == 1
        and not pr.near_band
        and pr.krein_sign != 0
    ]


def spectrum_frame(pairs: Sequence[DnlsSpectralPair]) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "re_lambda": pr.lam.real,
                "im_lambda": pr.lam.imag,
                "krein_sign": pr.krein_sign,
                "in_band": pr.in_band,
                "near_band": pr.near_band,
                "multiplicity": pr.multiplicity,
            }
            for pr in pairs
        ],
        columns=["re_lambda", "im_lambda", "krein_sign", "in_band", "near_band", "multiplicity"],
    )
