"""
Breather Lab: Breather Spectra
==============================

Linear stability of Klein-Gordon breathers by Hill's method. Perturbations
W = exp(lambda t) sum_m B^(m) exp(i m tau) turn the linearized equation into
the quadratic eigenproblem

    T(lambda) B = ([1 + (lambda + i m omega)^2] - eps Delta) B^(m)
                  + eps (1+2p) sum_m' c_(m-m') B^(m') = 0,

with c_k the Fourier coefficients of U^(2p). It is solved through a
first-companion linearization; eigenvalues are reported in the fundamental
strip Im lambda in (-omega/2, omega/2] with Floquet multipliers and Krein
quantities, compared against eps * Lambda from the dNLS spectrum, and
cross-checked by integrating the variational equations over one period.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp

from breather_lab.config import spectrum as spectrum_config
from breather_lab.dnls import DnlsSpectralPair, SolitonBranch, band_distance
from breather_lab.errors import (
    DimensionOverflow,
    EigenSolverFailure,
    MatchAmbiguity,
    SolverError,
)
from breather_lab.kg_breather import (
    BreatherSolution,
    fit_slope,
    seed_from_soliton,
    solve_breather,
)
from breather_lab.lattice import laplacian_matrix

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class HillProblem:
    breather: BreatherSolution
    M_spec: int
    C0: np.ndarray
    C1: np.ndarray            # diagonal of the linear-in-lambda term
    companion: np.ndarray
    _eigen: Optional[tuple] = field(default=None, repr=False)

    @property
    def sites(self) -> int:
        return self.breather.grid.size

    @property
    def dimension(self) -> int:
        return self.C0.shape[0]

    def operator(self, lam: complex) -> np.ndarray:
        """T(lambda) as a dense matrix."""
        return lam * lam * np.eye(self.dimension) + lam * np.diag(self.C1) + self.C0

    def eigen(self):
        if self._eigen is None:
            try:
                values, vectors = np.linalg.eig(self.companion)
            except np.linalg.LinAlgError as e:
                raise EigenSolverFailure(f"Hill eigenproblem failed: {e}")
            if not np.all(np.isfinite(values)):
                raise EigenSolverFailure("Hill eigenproblem returned non-finite eigenvalues")
            self._eigen = (values, vectors[: self.dimension])
        return self._eigen


@dataclass(eq=False)
class KgSpectralPair:
    lam: complex
    harmonics: np.ndarray     # (2 M_spec + 1, sites), row j holds B^(j - M_spec)
    krein: float
    floquet: complex
    residual: float = 0.0

    @property
    def M_spec(self) -> int:
        return (self.harmonics.shape[0] - 1) // 2

    def harmonic(self, m: int) -> np.ndarray:
        return self.harmonics[m + self.M_spec]


@dataclass
class SpectralScalingReport:
    eps_list: List[float]
    lambda_err: List[float]
    vector_err: List[float]
    reference: DnlsSpectralPair
    lambdas: List[complex] = field(default_factory=list)
    krein: List[float] = field(default_factory=list)
    near_band: List[bool] = field(default_factory=list)
    fitted_slopes: Dict[str, float] = field(default_factory=dict)
    failed: List[float] = field(default_factory=list)
    persistent: Optional[bool] = None      # set only for a purely imaginary target with a Krein sign

    @property
    def partial(self) -> bool:
        return bool(self.failed)

    def max_real_part(self) -> float:
        parts = [abs(lam.real) for lam in self.lambdas if np.isfinite(lam)]
        return max(parts) if parts else float("nan")

    def krein_sign_constant(self) -> bool:
        signs = {int(np.sign(k)) for k in self.krein if np.isfinite(k)}
        return len(signs) == 1 and 0 not in signs

    def imaginary_persistence(self) -> bool:
        return self.max_real_part() < spectrum_config.krein_zero and self.krein_sign_constant()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "eps": self.eps_list,
            "re_lambda": [lam.real for lam in self.lambdas],
            "im_lambda": [lam.imag for lam in self.lambdas],
            "lambda_err": self.lambda_err,
            "vector_err": self.vector_err,
            "krein": self.krein,
            "near_band": self.near_band,
        })


# ------------------------------------------------------------------
# Assembly
# ------------------------------------------------------------------

def potential_fourier_coefficients(B: BreatherSolution, K: int) -> np.ndarray:
    """c_k of U^(2p) for k = -K..K, shape (2K+1, sites)."""
    p = B.params.p
    Q = max(8, 1 << int(np.ceil(np.log2(2 * p * B.M + K + 1))))
    tau = 2.0 * np.pi * np.arange(Q) / Q
    m = np.arange(B.M + 1)
    weights = np.where(m == 0, 1.0, 2.0)
    U = (weights[:, None] * np.cos(np.outer(m, tau))).T @ B.harmonics
    coefficients = np.fft.fft(U ** (2 * p), axis=0) / Q
    return np.real(coefficients[np.arange(-K, K + 1) % Q])


def hill_assemble(B: BreatherSolution, M_spec: int) -> HillProblem:
    if M_spec < B.M:
        raise ValueError(f"M_spec={M_spec} must be at least the breather cutoff M={B.M}")
    n = B.grid.size
    harmonics = 2 * M_spec + 1
    dimension = harmonics * n
    if 2 * dimension > spectrum_config.dimension_cap:
        raise DimensionOverflow(
            f"Hill companion size {2 * dimension} exceeds cap {spectrum_config.dimension_cap}"
        )

    eps, omega, p = B.eps, B.omega, B.params.p
    m = np.arange(-M_spec, M_spec + 1)
    lap = laplacian_matrix(B.grid).toarray()
    coefficients = potential_fourier_coefficients(B, 2 * M_spec)

    C0 = np.zeros((dimension, dimension))
    for row, m_row in enumerate(m):
        block = slice(row * n, (row + 1) * n)
        C0[block, block] += (1.0 - (m_row * omega) ** 2) * np.eye(n) - eps * lap
        for col, m_col in enumerate(m):
            coupling = eps * (1 + 2 * p) * coefficients[m_row - m_col + 2 * M_spec]
            C0[block, col * n:(col + 1) * n] += np.diag(coupling)
    C1 = np.repeat(2j * m * omega, n)

    companion = np.zeros((2 * dimension, 2 * dimension), dtype=complex)
    companion[:dimension, dimension:] = np.eye(dimension)
    companion[dimension:, :dimension] = -C0
    companion[dimension:, dimension:] = -np.diag(C1)
    logger.debug(f"Assembled Hill problem: {harmonics} harmonics x {n} sites, companion {2 * dimension}")
    return HillProblem(B, M_spec, C0, C1, companion)


# ------------------------------------------------------------------
# Eigenpairs
# ------------------------------------------------------------------

def in_fundamental_strip(lam: complex, omega: float) -> bool:
    return -omega / 2.0 < lam.imag <= omega / 2.0


def floquet_multiplier(lam: complex, omega: float) -> complex:
    return complex(np.exp(2.0 * np.pi * lam / omega))


def krein_quantity(pair: KgSpectralPair, omega: float) -> float:
    """K = 2 sum_m (m omega + Im lambda) |B^(m)|^2 / sum_m |B^(m)|^2."""
    norms = np.sum(np.abs(pair.harmonics) ** 2, axis=1)
    m = np.arange(-pair.M_spec, pair.M_spec + 1)
    return float(2.0 * np.sum((m * omega + pair.lam.imag) * norms) / np.sum(norms))


def _make_pair(problem: HillProblem, lam: complex, vector: np.ndarray) -> KgSpectralPair:
    vector = vector / np.linalg.norm(vector)
    omega = problem.breather.omega
    residual = float(np.linalg.norm(problem.operator(lam) @ vector))
    harmonics = vector.reshape(2 * problem.M_spec + 1, problem.sites)
    pair = KgSpectralPair(lam=complex(lam), harmonics=harmonics, krein=0.0,
                          floquet=floquet_multiplier(lam, omega), residual=residual)
    pair.krein = krein_quantity(pair, omega)
    return pair


def _strip_indices(problem: HillProblem) -> List[int]:
    values, _ = problem.eigen()
    omega = problem.breather.omega
    keep = [k for k in range(values.size) if in_fundamental_strip(values[k], omega)]
    keep.sort(key=lambda k: (abs(values[k]), values[k].imag, values[k].real))
    return keep


def strip_pairs(problem: HillProblem) -> List[KgSpectralPair]:
    """All eigenpairs in the fundamental strip, sorted by |lambda|."""
    values, vectors = problem.eigen()
    return [_make_pair(problem, values[k], vectors[:, k]) for k in _strip_indices(problem)]


def eigen_near_zero(problem: HillProblem, count: int) -> List[KgSpectralPair]:
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    values, vectors = problem.eigen()
    return [_make_pair(problem, values[k], vectors[:, k]) for k in _strip_indices(problem)[:count]]


def floquet_multipliers(problem: HillProblem) -> np.ndarray:
    values, _ = problem.eigen()
    omega = problem.breather.omega
    strip = np.array([v for v in values if in_fundamental_strip(v, omega)])
    return np.exp(2.0 * np.pi * strip / omega)


def translation_mode(B: BreatherSolution, M_spec: int) -> np.ndarray:
    """Harmonics i m A^(|m|) of U' stacked for m = -M_spec..M_spec."""
    n = B.grid.size
    mode = np.zeros((2 * M_spec + 1, n), dtype=complex)
    for m in range(-B.M, B.M + 1):
        mode[m + M_spec] = 1j * m * B.harmonics[abs(m)]
    return mode.reshape(-1)


def spectrum_frame(pairs: Sequence[KgSpectralPair], eps: float, Omega: Optional[float] = None,
                   dim: int = 1) -> pd.DataFrame:
    rows = []
    for pr in pairs:
        near = False
        if Omega is not None and eps > 0:
            near = band_distance(2.0 * pr.lam / eps, Omega, dim) <= spectrum_config.near_band
        rows.append({
            "eps": eps,
            "re_lambda": pr.lam.real,
            "im_lambda": pr.lam.imag,
            "krein": pr.krein,
            "re_mu": pr.floquet.real,
            "im_mu": pr.floquet.imag,
            "residual": pr.residual,
            "near_band": near,
        })
    columns = ["eps", "re_lambda", "im_lambda", "krein", "re_mu", "im_mu", "residual", "near_band"]
    return pd.DataFrame(rows, columns=columns)


# ------------------------------------------------------------------
# Scaling against the dNLS spectrum
# ------------------------------------------------------------------

def _reference_harmonics(target: DnlsSpectralPair) -> np.ndarray:
    """Leading-order (B^(1), B^(-1)) = ((b+ + i b-)/2, (b+ - i b-)/2), unit norm."""
    reference = np.vstack([
        0.5 * (target.b_plus + 1j * target.b_minus),
        0.5 * (target.b_plus - 1j * target.b_minus),
    ])
    return reference / np.linalg.norm(reference)


def eigenvector_error(pair: KgSpectralPair, target: DnlsSpectralPair) -> float:
    reference = _reference_harmonics(target)
    leading = np.vstack([pair.harmonic(1), pair.harmonic(-1)])
    scale = np.vdot(leading, reference) / np.vdot(leading, leading)
    error = np.linalg.norm(scale * leading - reference)
    others = [m for m in range(-pair.M_spec, pair.M_spec + 1) if m not in (1, -1)]
    error += sum(np.linalg.norm(scale * pair.harmonic(m)) for m in others)
    return float(error)


def match_eigenvalue(pairs: Sequence[KgSpectralPair], expected: complex, eps: float) -> KgSpectralPair:
    if not pairs:
        raise EigenSolverFailure("No eigenvalues in the fundamental strip")
    distances = np.array([abs(pr.lam - expected) for pr in pairs])
    close = np.sum(distances <= spectrum_config.match_ambiguity * eps)
    if close >= 2:
        raise MatchAmbiguity(
            f"{close} eigenvalues lie within {spectrum_config.match_ambiguity}*eps of {expected}"
        )
    return pairs[int(np.argmin(distances))]


def verify_spectral_bounds(branch: SolitonBranch, target: DnlsSpectralPair, eps_list: Sequence[float],
                           M_spec: int = 8, M: Optional[int] = None, tol: Optional[float] = None,
                           threads: int = 1) -> SpectralScalingReport:
    if target.multiplicity != 1:
        raise ValueError("Target eigenvalue must be simple")
    if target.near_band:
        raise ValueError("Target eigenvalue lies on or next to the continuous band")
    if abs(target.lam) <= spectrum_config.kernel_tol:
        raise ValueError("Target eigenvalue must be isolated from zero")
    branch = branch.to_defocusing()
    Omega, dim = branch.params.omega, branch.grid.dim

    def analyse(eps: float):
        try:
            B = solve_breather(seed_from_soliton(branch, eps, M), tol)
            problem = hill_assemble(B, max(M_spec, B.M))
            return match_eigenvalue(strip_pairs(problem), eps * target.lam, eps)
        except SolverError as e:
            logger.error(f"Spectral sweep failed at eps={eps:g}: {e}")
            return None

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        matches = list(pool.map(analyse, eps_list))

    report = SpectralScalingReport(eps_list=list(eps_list), lambda_err=[], vector_err=[], reference=target)
    previous = None
    for eps, pair in zip(eps_list, matches):
        if pair is not None and previous is not None:
            predicted = abs(eps - previous[0]) * abs(target.lam)
            jump = abs(pair.lam - previous[1])
            if jump > spectrum_config.jump_guard * max(predicted, spectrum_config.cluster_tol):
                logger.warning(f"Continuation jump at eps={eps:g}: {jump:.3e} vs predicted {predicted:.3e}")
                pair = None
        if pair is None:
            report.failed.append(eps)
            report.lambdas.append(complex(np.nan, np.nan))
            report.lambda_err.append(float("nan"))
            report.vector_err.append(float("nan"))
            report.krein.append(float("nan"))
            report.near_band.append(False)
            continue
        previous = (eps, pair.lam)
        report.lambdas.append(pair.lam)
        report.lambda_err.append(float(abs(pair.lam - eps * target.lam)))
        report.vector_err.append(eigenvector_error(pair, target))
        report.krein.append(pair.krein)
        near = band_distance(2.0 * pair.lam / eps, Omega, dim) <= spectrum_config.near_band
        if near:
            logger.warning(f"eps={eps:g}: continued eigenvalue is near the band")
        report.near_band.append(bool(near))

    report.fitted_slopes = {
        "lambda_err": fit_slope(report.eps_list, report.lambda_err),
        "vector_err": fit_slope(report.eps_list, report.vector_err),
    }
    if abs(target.lam.real) < spectrum_config.krein_zero and target.krein_sign != 0:
        report.persistent = report.imaginary_persistence()
        if not report.persistent:
            logger.warning(
                f"Imaginary eigenvalue did not persist: max |Re lambda| = {report.max_real_part():.3e}"
            )
    logger.info(f"Spectral slopes: {report.fitted_slopes}")
    return report


# ------------------------------------------------------------------
# Monodromy oracle
# ------------------------------------------------------------------

def monodromy_matrix(B: BreatherSolution, step: Optional[float] = None) -> np.ndarray:
    """Fundamental matrix of the linearized lattice equation after one period."""
    n = B.grid.size
    if 2 * n > spectrum_config.monodromy_cap:
        raise DimensionOverflow(f"Monodromy oracle limited to {spectrum_config.monodromy_cap} unknowns, got {2 * n}")
    lap = laplacian_matrix(B.grid)
    eps, p, omega = B.eps, B.params.p, B.omega
    m = np.arange(B.M + 1)
    weights = np.where(m == 0, 1.0, 2.0)
    period = B.period
    step = period / 200.0 if step is None else step

    def rhs(t, y):
        Y = y.reshape(2 * n, 2 * n)
        u = (weights * np.cos(m * omega * t)) @ B.harmonics
        stiffness = 1.0 + eps * (2 * p + 1) * u ** (2 * p)
        W, V = Y[:n], Y[n:]
        acceleration = -stiffness[:, None] * W + eps * (lap @ W)
        return np.vstack([V, acceleration]).ravel()

    solution = solve_ivp(
        rhs,
        (0.0, period),
        np.eye(2 * n).ravel(),
        method="DOP853",
        rtol=spectrum_config.ode_rtol,
        atol=spectrum_config.ode_atol,
        max_step=step,
    )
    if not solution.success:
        raise EigenSolverFailure(f"Variational integration failed: {solution.message}")
    return solution.y[:, -1].reshape(2 * n, 2 * n)


def monodromy_oracle(B: BreatherSolution, step: Optional[float] = None) -> np.ndarray:
    """Floquet multipliers from direct integration over one period."""
    try:
        return np.linalg.eigvals(monodromy_matrix(B, step))
    except np.linalg.LinAlgError as e:
        raise EigenSolverFailure(f"Monodromy eigenproblem failed: {e}")


def compare_multipliers(hill: np.ndarray, direct: np.ndarray, count: int = 10,
                        exclude_radius: float = 0.0) -> float:
    """Largest distance from each of the ``count`` direct multipliers nearest 1 to a Hill multiplier."""
    candidates = [mu for mu in direct if abs(mu - 1.0) >= exclude_radius]
    candidates.sort(key=lambda mu: abs(mu - 1.0))
    worst = 0.0
    for mu in candidates[:count]:
        worst = max(worst, float(np.min(np.abs(hill - mu))))
    return worst
