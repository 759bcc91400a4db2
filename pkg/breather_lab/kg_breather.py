"""
Breather Lab: Klein-Gordon Breathers
====================================

Time-periodic breathers of the scaled Klein-Gordon lattice

    u'' + u + eps u^(1+2p) = eps Delta u

as Fourier-cosine series  U(tau) = A0 + 2 sum_m A^(m) cos(m tau),  tau = omega t,
seeded from a dNLS soliton through omega^2 = 1 - eps Omega, solved by full
Newton over all retained harmonics, and checked against the soliton as eps
shrinks (error sweeps) and against direct time integration (return map).
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from breather_lab.config import dynamics as dynamics_config
from breather_lab.config import harmonics as harmonic_config
from breather_lab.config import newton as newton_config
from breather_lab.config import spectrum as spectrum_config
from breather_lab.dnls import DnlsParams, SolitonBranch, newton_solve
from breather_lab.dynamics import PhaseState, hamiltonian, integrate
from breather_lab.errors import DimensionOverflow, InvalidFrequency, SolverError
from breather_lab.lattice import LatticeGrid, RealField, laplacian_matrix

logger = logging.getLogger(__name__)


class SolveMode(str, Enum):
    FIX_FREQUENCY_PARAM = "fix-frequency-param"
    FIX_PERIOD = "fix-period"


@dataclass(frozen=True, eq=False)
class BreatherSolution:
    grid: LatticeGrid
    harmonics: np.ndarray        # (M+1, sites), row m holds A^(m)
    omega: float
    eps: float
    params: DnlsParams           # stationary-equation frame
    residual_norm: float = float("nan")
    iterations: int = 0

    @property
    def M(self) -> int:
        return self.harmonics.shape[0] - 1

    def harmonic(self, m: int) -> RealField:
        return RealField(self.grid, self.harmonics[m])

    def initial_state(self) -> Tuple[np.ndarray, np.ndarray]:
        """(u, v) at t = 0; v vanishes because the series is even in time."""
        u = self.harmonics[0] + 2.0 * self.harmonics[1:].sum(axis=0)
        return u, np.zeros_like(u)

    def orbit(self, samples: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Phases tau_j and (u, v) sampled along one period."""
        tau = 2.0 * np.pi * np.arange(samples) / samples
        m = np.arange(self.M + 1)
        weights = np.where(m == 0, 1.0, 2.0)
        cos = weights[:, None] * np.cos(np.outer(m, tau))
        sin = weights[:, None] * m[:, None] * np.sin(np.outer(m, tau))
        u = cos.T @ self.harmonics
        v = -self.omega * (sin.T @ self.harmonics)
        return tau, u, v

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.omega

    def to_manifest(self) -> dict:
        return {
            "eps": self.eps,
            "omega": self.omega,
            "Omega": self.params.omega,
            "p": self.params.p,
            "d": self.grid.dim,
            "N": self.grid.radius,
            "boundary": self.grid.boundary.value,
            "M": self.M,
            "residual_norm": self.residual_norm,
            "iterations": self.iterations,
        }


@dataclass
class BoundReport:
    eps_list: List[float]
    omega_err: List[float]
    profile_err: List[float]
    tail_err: List[float]
    fitted_slopes: Dict[str, float] = field(default_factory=dict)
    failed: List[float] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "eps": self.eps_list,
            "omega_err": self.omega_err,
            "profile_err": self.profile_err,
            "tail_err": self.tail_err,
        })


# ------------------------------------------------------------------
# Quadrature
# ------------------------------------------------------------------

def quadrature_points(M: int, p: int) -> int:
    """Smallest power of two above (2p+2) M, so the projections are alias free."""
    needed = (2 * p + 2) * M + 1
    return max(8, 1 << int(np.ceil(np.log2(needed))))


def _cosine_basis(M: int, Q: int) -> Tuple[np.ndarray, np.ndarray]:
    tau = 2.0 * np.pi * np.arange(Q) / Q
    m = np.arange(M + 1)
    return np.cos(np.outer(m, tau)), np.where(m == 0, 1.0, 2.0)


def reconstruct(harmonics: np.ndarray, Q: int) -> np.ndarray:
    """U(tau_j) for the Q quadrature phases, shape (Q, sites)."""
    cos, weights = _cosine_basis(harmonics.shape[0] - 1, Q)
    return (weights[:, None] * cos).T @ harmonics


def nonlinear_projection(harmonics: np.ndarray, p: int, Q: Optional[int] = None,
                         return_imag: bool = False):
    """(1/2pi) int U^(2p+1) cos(m tau) d tau for m = 0..M by trapezoidal FFT quadrature."""
    M = harmonics.shape[0] - 1
    Q = Q or quadrature_points(M, p)
    U = reconstruct(harmonics, Q)
    spectrum = np.fft.rfft(U ** (2 * p + 1), axis=0)[: M + 1] / Q
    if return_imag:
        return spectrum.real, float(np.max(np.abs(spectrum.imag)))
    return spectrum.real


# ------------------------------------------------------------------
# Residual and Jacobian
# ------------------------------------------------------------------

def _linear_factors(M: int, omega: float) -> np.ndarray:
    m = np.arange(M + 1)
    return 1.0 - (m * omega) ** 2


def _residual_array(harmonics: np.ndarray, omega: float, eps: float, p: int, lap) -> np.ndarray:
    linear = _linear_factors(harmonics.shape[0] - 1, omega)[:, None] * harmonics
    coupling = (lap @ harmonics.T).T
    return linear + eps * nonlinear_projection(harmonics, p) - eps * coupling


def breather_residual(B: BreatherSolution) -> np.ndarray:
    """Per-harmonic residual of the Fourier system, shape (M+1, sites)."""
    return _residual_array(B.harmonics, B.omega, B.eps, B.params.p, laplacian_matrix(B.grid))


def _jacobian_sparse(harmonics: np.ndarray, omega: float, eps: float, p: int, lap) -> sp.csr_matrix:
    M = harmonics.shape[0] - 1
    n = harmonics.shape[1]
    Q = quadrature_points(M, p)
    cos, weights = _cosine_basis(M, Q)
    U = reconstruct(harmonics, Q)
    # G[m, k, i] = d N^(m)_i / d A^(k)_i
    G = (2 * p + 1) / Q * np.einsum("mj,ji,kj->mki", cos, U ** (2 * p), weights[:, None] * cos)
    m_idx, k_idx, i_idx = np.meshgrid(np.arange(M + 1), np.arange(M + 1), np.arange(n), indexing="ij")
    nonlinear = sp.coo_matrix(
        (eps * G.ravel(), ((m_idx * n + i_idx).ravel(), (k_idx * n + i_idx).ravel())),
        shape=((M + 1) * n, (M + 1) * n),
    )
    linear = sp.diags(np.repeat(_linear_factors(M, omega), n))
    coupling = sp.kron(sp.identity(M + 1), lap)
    return (linear + nonlinear - eps * coupling).tocsr()


def breather_jacobian(B: BreatherSolution) -> sp.csr_matrix:
    """Jacobian of the flattened residual (row m*sites + i) with respect to the harmonics."""
    return _jacobian_sparse(B.harmonics, B.omega, B.eps, B.params.p, laplacian_matrix(B.grid))


def projection_imaginary_part(B: BreatherSolution) -> float:
    _, imag = nonlinear_projection(B.harmonics, B.params.p, return_imag=True)
    return imag


# ------------------------------------------------------------------
# Seeding and solving
# ------------------------------------------------------------------

def frequency_from_omega(eps: float, omega_param: float) -> float:
    radicand = 1.0 - eps * omega_param
    if radicand <= 0.0:
        raise InvalidFrequency(f"1 - eps*Omega = {radicand:g} <= 0 for eps={eps}, Omega={omega_param}")
    return float(np.sqrt(radicand))


def omega_for_eps_series(eps: float, omega_param: float, order: int = 1) -> float:
    """Truncated expansion of sqrt(1 - eps Omega) in eps, for FixPeriod runs."""
    if order not in (1, 2):
        raise ValueError(f"Series order must be 1 or 2, got {order}")
    omega = 1.0 - 0.5 * eps * omega_param
    if order == 2:
        omega -= 0.125 * (eps * omega_param) ** 2
    if omega <= 0.0:
        raise InvalidFrequency(f"Series frequency {omega:g} <= 0 for eps={eps}, Omega={omega_param}")
    return omega


def seed_from_soliton(branch: SolitonBranch, eps: float, M: Optional[int] = None) -> BreatherSolution:
    """omega = sqrt(1 - eps Omega), A^(1) = soliton, every other harmonic zero."""
    branch = branch.to_defocusing()
    if eps < 0:
        raise ValueError(f"Coupling eps must be nonnegative, got {eps}")
    M = harmonic_config.default_cutoff(branch.params.p) if M is None else M
    if M < 3:
        raise ValueError(f"Harmonic cutoff M must be >= 3, got {M}")
    omega = frequency_from_omega(eps, branch.params.omega)
    harmonics = np.zeros((M + 1, branch.grid.size))
    harmonics[1] = branch.amplitude.values
    seed = BreatherSolution(branch.grid, harmonics, omega, eps, branch.params)
    return replace(seed, residual_norm=float(np.linalg.norm(breather_residual(seed))))


def tail_ok(B: BreatherSolution) -> bool:
    """Highest retained odd and even harmonics below the tail ratio of A^(1)."""
    top = max(np.linalg.norm(B.harmonics[B.M]), np.linalg.norm(B.harmonics[B.M - 1]))
    return bool(top <= harmonic_config.tail_ratio * np.linalg.norm(B.harmonics[1]))


def _check_dimension(B: BreatherSolution):
    unknowns = (B.M + 1) * B.grid.size
    if unknowns > spectrum_config.dimension_cap:
        raise DimensionOverflow(
            f"Breather system has {unknowns} unknowns, cap is {spectrum_config.dimension_cap}"
        )


def solve_breather(seed: BreatherSolution, tol: Optional[float] = None,
                   mode: SolveMode = SolveMode.FIX_FREQUENCY_PARAM,
                   max_iter: Optional[int] = None) -> BreatherSolution:
    tol = newton_config.tol if tol is None else tol
    max_iter = newton_config.max_iter if max_iter is None else max_iter
    if tol <= 0:
        raise ValueError(f"Tolerance must be positive, got {tol}")
    mode = SolveMode(mode)
    if mode is SolveMode.FIX_FREQUENCY_PARAM:
        omega = frequency_from_omega(seed.eps, seed.params.omega)
    else:
        omega = seed.omega

    current = replace(seed, omega=omega)
    lap = laplacian_matrix(seed.grid)
    p = seed.params.p
    for doubling in range(harmonic_config.max_doublings + 1):
        _check_dimension(current)
        shape = current.harmonics.shape
        values, norm, iterations = newton_solve(
            lambda x: _residual_array(x.reshape(shape), omega, current.eps, p, lap).ravel(),
            lambda x: _jacobian_sparse(x.reshape(shape), omega, current.eps, p, lap),
            current.harmonics.ravel(),
            tol,
            max_iter,
            label=f"breather(eps={current.eps:g}, M={current.M})",
        )
        current = replace(current, harmonics=values.reshape(shape), residual_norm=norm, iterations=iterations)
        if tail_ok(current) or doubling == harmonic_config.max_doublings:
            break
        logger.warning(f"Tail diagnostic failed at M={current.M}; doubling the harmonic cutoff")
        extended = np.zeros((2 * current.M + 1, current.grid.size))
        extended[: current.M + 1] = current.harmonics
        current = replace(current, harmonics=extended)

    if not tail_ok(current):
        logger.warning(f"Tail diagnostic still fails at M={current.M} (eps={current.eps:g})")
    logger.info(
        f"Breather eps={current.eps:g} omega={omega:.10f} M={current.M}: "
        f"residual={current.residual_norm:.2e} in {current.iterations} iterations"
    )
    return current


# ------------------------------------------------------------------
# Error sweeps against the dNLS limit
# ------------------------------------------------------------------

def omega_error(B: BreatherSolution) -> float:
    return abs(B.omega - 1.0 + 0.5 * B.eps * B.params.omega)


def profile_error(B: BreatherSolution, branch: SolitonBranch) -> float:
    return float(np.linalg.norm(B.harmonics[1] - branch.to_defocusing().amplitude.values))


def tail_error(B: BreatherSolution) -> float:
    norms = np.linalg.norm(B.harmonics, axis=1)
    return float(norms[0] + norms[2:].sum())


def fit_slope(eps_values: Sequence[float], errors: Sequence[float]) -> float:
    """Least-squares slope of log(error) against log(eps) over finite positive points."""
    x = np.asarray(eps_values, dtype=float)
    y = np.asarray(errors, dtype=float)
    mask = np.isfinite(y) & (y > 0) & (x > 0)
    if mask.sum() < 2:
        return float("nan")
    slope, _ = np.polyfit(np.log(x[mask]), np.log(y[mask]), 1)
    return float(slope)


def _validate_eps_list(eps_list: Sequence[float]):
    if len(eps_list) == 0:
        raise ValueError("eps_list must not be empty")
    if any(e <= 0 or e >= harmonic_config.max_eps for e in eps_list):
        raise ValueError(f"All eps values must lie in (0, {harmonic_config.max_eps})")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")


def verify_bounds(branch: SolitonBranch, eps_list: Sequence[float], tol: Optional[float] = None,
                  M: Optional[int] = None, threads: int = 1) -> BoundReport:
    _validate_eps_list(eps_list)
    branch = branch.to_defocusing()

    def solve_one(eps: float) -> Optional[BreatherSolution]:
        try:
            return solve_breather(seed_from_soliton(branch, eps, M), tol)
        except SolverError as e:
            logger.error(f"Breather solve failed at eps={eps:g}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        solutions = list(pool.map(solve_one, eps_list))

    report = BoundReport(eps_list=list(eps_list), omega_err=[], profile_err=[], tail_err=[])
    for eps, B in zip(eps_list, solutions):
        if B is None:
            report.failed.append(eps)
            report.omega_err.append(float("nan"))
            report.profile_err.append(float("nan"))
            report.tail_err.append(float("nan"))
            continue
        report.omega_err.append(omega_error(B))
        report.profile_err.append(profile_error(B, branch))
        report.tail_err.append(tail_error(B))

    report.fitted_slopes = {
        "omega_err": fit_slope(report.eps_list, report.omega_err),
        "profile_err": fit_slope(report.eps_list, report.profile_err),
        "tail_err": fit_slope(report.eps_list, report.tail_err),
    }
    if report.partial:
        logger.warning(f"Bound sweep is partial; failed eps values: {report.failed}")
    logger.info(f"Fitted slopes: {report.fitted_slopes}")
    return report


# ------------------------------------------------------------------
# Decomposition diagnostics
# ------------------------------------------------------------------

def lyapunov_schmidt_split(B: BreatherSolution) -> Tuple[RealField, np.ndarray]:
    """Kernel component A^(1) and the range part (all other harmonics, row 1 zeroed)."""
    flat = B.harmonics.copy()
    flat[1] = 0.0
    return B.harmonic(1), flat


def leading_order_flat(B: BreatherSolution) -> np.ndarray:
    """Range part predicted from A^(1) alone: -eps L_m^{-1} N^(m)(A^(1)) for m != 1."""
    sharp = np.zeros_like(B.harmonics)
    sharp[1] = B.harmonics[1]
    projection = nonlinear_projection(sharp, B.params.p)
    lap = laplacian_matrix(B.grid).toarray()
    identity = np.eye(B.grid.size)
    prediction = np.zeros_like(B.harmonics)
    for m in range(B.M + 1):
        if m == 1:
            continue
        operator = (1.0 - (m * B.omega) ** 2) * identity - B.eps * lap
        prediction[m] = -B.eps * np.linalg.solve(operator, projection[m])
    return prediction


def eps_star(omega_param: float, M: int) -> float:
    """Largest eps keeping |1 - m^2 omega^2| >= (1 + m^2)/2 for m = 0, 2..M with omega^2 = 1 - eps Omega."""
    if omega_param <= 0:
        return float("inf")
    bound = 1.0 / omega_param
    for m in range(2, M + 1):
        # m^2 omega^2 - 1 >= (1 + m^2)/2  <=>  omega^2 >= (3 + m^2) / (2 m^2)
        bound = min(bound, (1.0 - (3.0 + m * m) / (2.0 * m * m)) / omega_param)
    return bound


def breather_energy(B: BreatherSolution) -> float:
    u, v = B.initial_state()
    return hamiltonian(PhaseState(RealField(B.grid, u), RealField(B.grid, v)), B.eps, B.params.p)


def time_domain_check(B: BreatherSolution, tol: float = 1e-6, steps: Optional[int] = None,
                      order: int = 4) -> float:
    """Relative one-period return-map error of the breather under direct integration."""
    steps = dynamics_config.steps_per_period if steps is None else steps
    u, v = B.initial_state()
    start = PhaseState(RealField(B.grid, u), RealField(B.grid, v))
    end = integrate(start, B.eps, B.params.p, B.period / steps, steps, order=order)
    z0 = np.concatenate([u, v])
    z1 = np.concatenate([end.u.values, end.v.values])
    error = float(np.linalg.norm(z1 - z0) / np.linalg.norm(z0))
    if error > tol:
        logger.warning(f"Return-map error {error:.3e} exceeds {tol:.1e} (eps={B.eps:g})")
    else:
        logger.info(f"Return-map error {error:.3e} (eps={B.eps:g})")
    return error
