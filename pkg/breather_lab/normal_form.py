"""
Breather Lab: Resonant Normal Form
==================================

Lie-transform normal form of the scaled Klein-Gordon Hamiltonian

    H = G + F,   G = sum |zeta_j|^2,
    F = eps/(2p+2) sum u_j^(2p+2) - eps/2 u.Delta u,   u = (zeta + conj zeta)/sqrt(2),

written as sparse polynomials in (zeta, conj zeta). Coefficients are exact
Gaussian rationals (sympy QQ_I) or Python complex numbers; eps is kept
symbolic as a grading, so every term records its power of eps.

Bracket convention: {f, g} = i sum_j (df/dzeta_j dg/dzetabar_j - df/dzetabar_j dg/dzeta_j),
so the flow of G rotates zeta_j -> zeta_j e^{it} and {G, m} = -i w m for a
monomial of weight w = |alpha| - |beta|. Homological equations are solved by
weight: resonant monomials go to Z, the others to chi with coefficient i c / w.
"""

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from sympy.polys.domains import QQ, QQ_I

from breather_lab.config import newton as newton_config
from breather_lab.config import normal_form as nf_config
from breather_lab.dnls import SolitonBranch, gamma_p, newton_solve
from breather_lab.errors import DegreeOverflow, NonConvergence, OrderOverflow
from breather_lab.kg_breather import (
    BreatherSolution,
    SolveMode,
    omega_for_eps_series,
    seed_from_soliton,
    solve_breather,
)
from breather_lab.lattice import LatticeGrid, RealField, laplacian_matrix

logger = logging.getLogger(__name__)

Key = Tuple[int, Tuple[int, ...]]


class Direction(str, Enum):
    FORWARD = "forward"
    INVERSE = "inverse"


# ------------------------------------------------------------------
# Coefficient fields
# ------------------------------------------------------------------

class ExactField:
    """Gaussian rationals a + b i with a, b in QQ."""
    exact = True

    def zero(self):
        return QQ_I(0, 0)

    def rational(self, num: int, den: int = 1):
        return QQ_I(QQ(num, den), 0)

    def i_over(self, w: int):
        return QQ_I(0, QQ(1, w))

    def imag_unit(self):
        return QQ_I(0, 1)

    def conj(self, c):
        return QQ_I(c.x, -c.y)

    def to_complex(self, c) -> complex:
        return complex(float(c.x), float(c.y))

    def format(self, c) -> str:
        return f"{c.x}\t{c.y}"


class FloatField:
    exact = False

    def zero(self):
        return 0j

    def rational(self, num: int, den: int = 1):
        return complex(num / den)

    def i_over(self, w: int):
        return 1j / w

    def imag_unit(self):
        return 1j

    def conj(self, c):
        return c.conjugate()

    def to_complex(self, c) -> complex:
        return complex(c)

    def format(self, c) -> str:
        return f"{c.real!r}\t{c.imag!r}"


EXACT = ExactField()
FLOAT = FloatField()


# ------------------------------------------------------------------
# Polynomials
# ------------------------------------------------------------------

@dataclass(eq=False)
class PolyHamiltonian:
    """Sum of c * eps^k * zeta^alpha * conj(zeta)^beta, keyed by (k, alpha + beta)."""
    grid: LatticeGrid
    terms: Dict[Key, object] = field(default_factory=dict)
    degree_cap: int = nf_config.degree_cap
    exact: bool = True
    eps: float = 0.0

    @property
    def ring(self):
        return EXACT if self.exact else FLOAT

    @property
    def sites(self) -> int:
        return self.grid.size

    def empty(self) -> "PolyHamiltonian":
        return PolyHamiltonian(self.grid, {}, self.degree_cap, self.exact, self.eps)

    def copy(self) -> "PolyHamiltonian":
        return PolyHamiltonian(self.grid, dict(self.terms), self.degree_cap, self.exact, self.eps)

    def __len__(self) -> int:
        return len(self.terms)

    def __bool__(self) -> bool:
        return bool(self.terms)

    def add_term(self, k: int, exponents: Tuple[int, ...], coefficient):
        if sum(exponents) > self.degree_cap:
            raise DegreeOverflow(f"Monomial degree {sum(exponents)} exceeds cap {self.degree_cap}")
        key = (k, exponents)
        total = self.terms.get(key, self.ring.zero()) + coefficient
        if total:
            self.terms[key] = total
        else:
            self.terms.pop(key, None)

    def __add__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        _check_compatible(self, other)
        result = self.copy()
        for (k, exps), c in other.terms.items():
            result.add_term(k, exps, c)
        return result

    def __neg__(self) -> "PolyHamiltonian":
        return self.scale(self.ring.rational(-1))

    def __sub__(self, other: "PolyHamiltonian") -> "PolyHamiltonian":
        return self + (-other)

    def scale(self, factor) -> "PolyHamiltonian":
        result = self.empty()
        for key, c in self.terms.items():
            value = c * factor
            if value:
                result.terms[key] = value
        return result

    def scale_rational(self, num: int, den: int = 1) -> "PolyHamiltonian":
        return self.scale(self.ring.rational(num, den))

    # -- structure ---------------------------------------------------

    def weight(self, exponents: Tuple[int, ...]) -> int:
        n = self.sites
        return sum(exponents[:n]) - sum(exponents[n:])

    def max_degree(self) -> int:
        return max((sum(exps) for _, exps in self.terms), default=0)

    def eps_powers(self) -> set:
        return {k for k, _ in self.terms}

    def graded_part(self, k: int) -> "PolyHamiltonian":
        result = self.empty()
        result.terms = {key: c for key, c in self.terms.items() if key[0] == k}
        return result

    def is_real(self) -> bool:
        """Coefficient of (alpha, beta) is the conjugate of the coefficient of (beta, alpha)."""
        n = self.sites
        for (k, exps), c in self.terms.items():
            swapped = exps[n:] + exps[:n]
            partner = self.terms.get((k, swapped))
            if partner is None or partner != self.ring.conj(c):
                return False
        return True

    def coefficient(self, k: int, alpha: Sequence[int], beta: Sequence[int]):
        return self.terms.get((k, tuple(alpha) + tuple(beta)), self.ring.zero())

    def derivative(self, variable: int) -> "PolyHamiltonian":
        """Derivative with respect to zeta_j (variable j < n) or conj(zeta_j) (variable n + j)."""
        result = self.empty()
        for (k, exps), c in self.terms.items():
            power = exps[variable]
            if power:
                lowered = exps[:variable] + (power - 1,) + exps[variable + 1:]
                result.add_term(k, lowered, c * self.ring.rational(power))
        return result

    def to_float(self) -> "PolyHamiltonian":
        if not self.exact:
            return self
        terms = {key: EXACT.to_complex(c) for key, c in self.terms.items()}
        return PolyHamiltonian(self.grid, terms, self.degree_cap, False, self.eps)

    # -- numerics ----------------------------------------------------

    def norm(self, radius: float, eps: Optional[float] = None) -> float:
        """l1 coefficient norm scaled by eps^k R^degree (upper bound of the sup norm on the ball)."""
        eps = self.eps if eps is None else eps
        return float(sum(
            abs(self.ring.to_complex(c)) * eps ** k * radius ** sum(exps)
            for (k, exps), c in self.terms.items()
        ))

    def coefficient_norm(self) -> float:
        return float(sum(abs(self.ring.to_complex(c)) for c in self.terms.values()))

    def compile(self, eps: Optional[float] = None) -> "CompiledPoly":
        return CompiledPoly.from_poly(self, self.eps if eps is None else eps)

    def evaluate(self, zeta: np.ndarray, eps: Optional[float] = None) -> complex:
        return complex(self.compile(eps)(np.asarray(zeta, dtype=complex)))

    def to_text(self) -> str:
        """Sorted lines: eps power, alpha exponents, beta exponents, Re and Im of the coefficient."""
        n = self.sites
        lines = []
        for (k, exps) in sorted(self.terms):
            c = self.terms[(k, exps)]
            alpha = " ".join(str(e) for e in exps[:n])
            beta = " ".join(str(e) for e in exps[n:])
            lines.append(f"{k}\t{alpha}\t{beta}\t{self.ring.format(c)}")
        header = f"# {self.grid.header()} exact={self.exact} terms={len(self.terms)}"
        return "\n".join([header] + lines) + "\n"


def _check_compatible(f: PolyHamiltonian, g: PolyHamiltonian):
    if f.grid != g.grid:
        raise ValueError("Polynomials live on different grids")
    if f.exact != g.exact:
        raise ValueError("Cannot mix exact and floating-point polynomials")


@dataclass
class CompiledPoly:
    """Dense arrays for fast evaluation at many points."""
    exponents: np.ndarray      # (terms, 2n)
    coefficients: np.ndarray   # (terms,) complex, eps already applied

    @classmethod
    def from_poly(cls, poly: PolyHamiltonian, eps: float) -> "CompiledPoly":
        width = 2 * poly.sites
        if not poly.terms:
            return cls(np.zeros((0, width), dtype=int), np.zeros(0, dtype=complex))
        keys = sorted(poly.terms)
        exponents = np.array([exps for _, exps in keys], dtype=int)
        coefficients = np.array(
            [poly.ring.to_complex(poly.terms[key]) * eps ** key[0] for key in keys], dtype=complex
        )
        return cls(exponents, coefficients)

    def __call__(self, zeta: np.ndarray) -> np.ndarray:
        """Evaluate at zeta (shape (n,) or (samples, n)) with conj(zeta) in the second half."""
        zeta = np.asarray(zeta, dtype=complex)
        variables = np.concatenate([zeta, np.conj(zeta)], axis=-1)
        if self.coefficients.size == 0:
            return np.zeros(variables.shape[:-1], dtype=complex)
        monomials = np.prod(variables[..., None, :] ** self.exponents, axis=-1)
        return monomials @ self.coefficients


# ------------------------------------------------------------------
# Building blocks
# ------------------------------------------------------------------

def _unit(n: int, *positions: int) -> Tuple[int, ...]:
    exps = [0] * (2 * n)
    for pos in positions:
        exps[pos] += 1
    return tuple(exps)


def harmonic_part(grid: LatticeGrid, exact: bool = True, degree_cap: Optional[int] = None) -> PolyHamiltonian:
    """G = sum_j zeta_j conj(zeta_j)."""
    G = PolyHamiltonian(grid, {}, degree_cap or nf_config.degree_cap, exact)
    n = grid.size
    for j in range(n):
        G.add_term(0, _unit(n, j, n + j), G.ring.rational(1))
    return G


def coordinate(grid: LatticeGrid, j: int, exact: bool = True, degree_cap: Optional[int] = None) -> PolyHamiltonian:
    """The coordinate function zeta_j."""
    poly = PolyHamiltonian(grid, {}, degree_cap or nf_config.degree_cap, exact)
    poly.add_term(0, _unit(grid.size, j), poly.ring.rational(1))
    return poly


def build_scaled_hamiltonian(grid: LatticeGrid, p: int, eps: float, exact: bool = True,
                             degree_cap: Optional[int] = None) -> PolyHamiltonian:
    """H = G + F with F carrying eps^1; the numeric eps is kept for evaluation and norms."""
    if p < 1:
        raise ValueError(f"Nonlinearity exponent p must be >= 1, got {p}")
    degree_cap = degree_cap or nf_config.degree_cap
    if 2 * p + 2 > degree_cap:
        raise DegreeOverflow(f"On-site degree {2 * p + 2} exceeds cap {degree_cap}")

    H = harmonic_part(grid, exact, degree_cap)
    H.eps = eps
    if eps == 0:
        return H
    fld = H.ring
    n = grid.size
    degree = 2 * p + 2

    # eps/(2p+2) u^(2p+2),  u^(2p+2) = 2^-(p+1) sum_a binom(2p+2, a) zeta^a conj(zeta)^(2p+2-a)
    for j in range(n):
        for a in range(degree + 1):
            exps = [0] * (2 * n)
            exps[j] = a
            exps[n + j] = degree - a
            H.add_term(1, tuple(exps), fld.rational(math.comb(degree, a), degree * 2 ** (p + 1)))

    # -eps/2 sum_jk Delta_jk u_j u_k,  u_j u_k = (zeta_j + zbar_j)(zeta_k + zbar_k)/2
    lap = laplacian_matrix(grid).tocoo()
    for j, k, value in zip(lap.row, lap.col, lap.data):
        coefficient = fld.rational(-int(round(value)), 4)
        for x in (j, n + j):
            for y in (k, n + k):
                H.add_term(1, _unit(n, x, y), coefficient)
    return H


def split_hamiltonian(H: PolyHamiltonian) -> Tuple[PolyHamiltonian, PolyHamiltonian]:
    """(G, F): the eps^0 part and everything else."""
    G = H.graded_part(0)
    F = H.empty()
    F.terms = {key: c for key, c in H.terms.items() if key[0] != 0}
    return G, F


# ------------------------------------------------------------------
# Poisson bracket and homological equation
# ------------------------------------------------------------------

def _site_index(poly: PolyHamiltonian) -> Dict[int, List[Tuple[Key, object]]]:
    n = poly.sites
    index = defaultdict(list)
    for key, c in poly.terms.items():
        exps = key[1]
        for j in range(n):
            if exps[j] or exps[n + j]:
                index[j].append((key, c))
    return index


def poisson(f: PolyHamiltonian, g: PolyHamiltonian) -> PolyHamiltonian:
    """{f, g} = i sum_j (f_zeta g_zetabar - f_zetabar g_zeta), exact in the coefficient field."""
    _check_compatible(f, g)
    n = f.sites
    fld = f.ring
    result = PolyHamiltonian(f.grid, {}, max(f.degree_cap, g.degree_cap), f.exact, f.eps or g.eps)
    accumulator = defaultdict(fld.zero)
    g_index = _site_index(g)
    i_unit = fld.imag_unit()

    for (k1, e1), c1 in f.terms.items():
        for j in range(n):
            a1, b1 = e1[j], e1[n + j]
            if not (a1 or b1):
                continue
            for (k2, e2), c2 in g_index.get(j, ()):
                factor = a1 * e2[n + j] - b1 * e2[j]
                if not factor:
                    continue
                exps = [x + y for x, y in zip(e1, e2)]
                exps[j] -= 1
                exps[n + j] -= 1
                degree = sum(exps)
                if degree > result.degree_cap:
                    raise DegreeOverflow(f"Bracket degree {degree} exceeds cap {result.degree_cap}")
                accumulator[(k1 + k2, tuple(exps))] += i_unit * c1 * c2 * fld.rational(factor)
        if len(accumulator) > nf_config.term_cap:
            raise OrderOverflow(f"Bracket exceeded the term cap of {nf_config.term_cap}")

    result.terms = {key: c for key, c in accumulator.items() if c}
    return result


def solve_homological(psi: PolyHamiltonian) -> Tuple[PolyHamiltonian, PolyHamiltonian]:
    """Split psi into its resonant part Z and chi with {G, chi} + Z = psi."""
    Z, chi = psi.empty(), psi.empty()
    fld = psi.ring
    for key, c in psi.terms.items():
        w = psi.weight(key[1])
        if w == 0:
            Z.terms[key] = c
        else:
            chi.terms[key] = c * fld.i_over(w)
    return Z, chi


def homological_residual(G: PolyHamiltonian, Z: PolyHamiltonian, chi: PolyHamiltonian,
                         psi: PolyHamiltonian) -> PolyHamiltonian:
    return poisson(G, chi) + Z - psi


# ------------------------------------------------------------------
# Lie-transform recursion
# ------------------------------------------------------------------

@dataclass
class NormalFormBudget:
    order: int
    ball_radius: float
    shrink: float = 0.25
    coeff_norms: Dict[str, List[float]] = field(default_factory=lambda: {"Z": [], "chi": [], "F": [], "Psi": []})

    def __post_init__(self):
        if self.order < 1:
            raise ValueError(f"Normal form order must be >= 1, got {self.order}")
        if self.ball_radius <= 0:
            raise ValueError(f"Ball radius must be positive, got {self.ball_radius}")
        if not 0 < self.shrink <= 0.25:
            raise ValueError(f"Shrink parameter must lie in (0, 1/4], got {self.shrink}")


@dataclass
class NormalFormResult:
    Z_list: List[PolyHamiltonian]
    chi_list: List[PolyHamiltonian]
    F_list: List[PolyHamiltonian]
    psi_list: List[PolyHamiltonian]
    remainder: Optional[PolyHamiltonian]
    remainder_norms: Dict[int, float]
    budget: NormalFormBudget

    @property
    def Z(self) -> PolyHamiltonian:
        total = self.Z_list[0].empty()
        for Z in self.Z_list:
            total = total + Z
        return total


def required_degree(p: int, r: int) -> int:
    return (2 * p + 2) + 2 * p * (r - 1)


def _weighted_sum(pairs: Iterable[Tuple[int, int, PolyHamiltonian, PolyHamiltonian]],
                  template: PolyHamiltonian) -> PolyHamiltonian:
    """sum of (num/den) {a, b} over the given pairs."""
    total = template.empty()
    for num, den, a, b in pairs:
        if a and b:
            total = total + poisson(a, b).scale_rational(num, den)
    return total


def lie_transform_normal_form(H: PolyHamiltonian, r: int, budget: Optional[NormalFormBudget] = None,
                              p: Optional[int] = None, remainder: bool = True) -> NormalFormResult:
    if r < 1:
        raise ValueError(f"Normal form order must be >= 1, got {r}")
    if r > nf_config.order_cap:
        raise OrderOverflow(f"Order {r} exceeds the configured cap {nf_config.order_cap}")
    G, F = split_hamiltonian(H)
    if p is None:
        p = max((F.max_degree() - 2) // 2, 1)
    if H.degree_cap < required_degree(p, r):
        raise DegreeOverflow(
            f"Degree cap {H.degree_cap} below the {required_degree(p, r)} needed for order {r}"
        )
    budget = budget or NormalFormBudget(order=r, ball_radius=1.0)

    F_terms = {1: F}
    Z_terms, chi_terms, psi_terms = {}, {}, {}
    for s in range(1, r + 1):
        if s > 1:
            F_terms[s] = _weighted_sum(
                ((l, s - 1, chi_terms[l], F_terms[s - l]) for l in range(1, s)), H
            )
        psi = F_terms[s].scale_rational(1, s) + _weighted_sum(
            ((l, s, chi_terms[l], Z_terms[s - l]) for l in range(1, s)), H
        )
        Z_terms[s], chi_terms[s] = solve_homological(psi)
        psi_terms[s] = psi
        for name, poly in (("Z", Z_terms[s]), ("chi", chi_terms[s]), ("F", F_terms[s]), ("Psi", psi)):
            budget.coeff_norms.setdefault(name, []).append(poly.norm(budget.ball_radius, H.eps))
        logger.info(
            f"Normal form order {s}: |Z|={len(Z_terms[s])} terms, |chi|={len(chi_terms[s])} terms"
        )

    leading, remainder_norms = None, {}
    if remainder and H.degree_cap >= required_degree(p, r + 1):
        leading = transformed_part(G, F_terms, chi_terms, r + 1, H)
        remainder_norms[r + 1] = leading.norm(budget.ball_radius, H.eps)
    elif remainder:
        logger.warning(f"Remainder of order {r + 1} skipped: degree cap {H.degree_cap}")

    return NormalFormResult(
        Z_list=[Z_terms[s] for s in range(1, r + 1)],
        chi_list=[chi_terms[s] for s in range(1, r + 1)],
        F_list=[F_terms[s] for s in range(1, r + 1)],
        psi_list=[psi_terms[s] for s in range(1, r + 1)],
        remainder=leading,
        remainder_norms=remainder_norms,
        budget=budget,
    )


def transformed_part(G: PolyHamiltonian, F_terms: Dict[int, PolyHamiltonian],
                     chi_terms: Dict[int, PolyHamiltonian], order: int,
                     template: PolyHamiltonian) -> PolyHamiltonian:
    """eps^order part of the transformed Hamiltonian, G_order + F_order, with chi_l = 0 beyond the list."""
    G_terms = {0: G}
    for s in range(1, order + 1):
        G_terms[s] = _weighted_sum(
            ((l, s, chi_terms[l], G_terms[s - l]) for l in range(1, s + 1) if l in chi_terms), template
        )
    F_local = dict(F_terms)
    for s in range(2, order + 1):
        if s not in F_local:
            F_local[s] = _weighted_sum(
                ((l, s - 1, chi_terms[l], F_local[s - l]) for l in range(1, s) if l in chi_terms), template
            )
    return G_terms[order] + F_local[order]


# ------------------------------------------------------------------
# First-order check and diagnostics
# ------------------------------------------------------------------

def first_order_table(Z1: PolyHamiltonian, p: int) -> pd.DataFrame:
    """Coefficients of Z_1 by type; the on-site rows carry Gamma_p = (2p+2) * coefficient."""
    n = Z1.sites
    rows = []
    for (k, exps), c in sorted(Z1.terms.items()):
        support = [j for j in range(n) if exps[j] or exps[n + j]]
        value = Z1.ring.to_complex(c)
        if len(support) == 1 and sum(exps) == 2 * p + 2:
            kind, gamma = "onsite", (2 * p + 2) * value.real
        elif len(support) == 1:
            kind, gamma = "diagonal", float("nan")
        else:
            kind, gamma = "coupling", float("nan")
        exact = str(c.x) if Z1.exact and not c.y else ""
        rows.append({
            "kind": kind,
            "sites": " ".join(str(j) for j in support),
            "degree": sum(exps),
            "eps_power": k,
            "re": value.real,
            "im": value.imag,
            "exact": exact,
            "gamma": gamma,
        })
    return pd.DataFrame(rows, columns=["kind", "sites", "degree", "eps_power", "re", "im", "exact", "gamma"])


def resonant_gamma(p: int):
    """Gamma_p = gamma_p / 2^p, the exact on-site coefficient of Z_1 times (2p+2)/eps."""
    return QQ(gamma_p(p), 2 ** p)


def extracted_gamma(Z1: PolyHamiltonian, p: int, site: int = 0):
    """Gamma_p read off the |zeta_site|^(2p+2) coefficient of Z_1 (exact when Z_1 is exact)."""
    n = Z1.sites
    exps = [0] * (2 * n)
    exps[site] = p + 1
    exps[n + site] = p + 1
    c = Z1.coefficient(1, exps[:n], exps[n:])
    return c * Z1.ring.rational(2 * p + 2)


def normal_form_constants(budget: NormalFormBudget, dim: int, p: int, eps: float) -> Dict[str, object]:
    """Estimate constants of the normal-form theorem, evaluated on the ball of radius R."""
    R, shrink, r = budget.ball_radius, budget.shrink, budget.order
    e = math.e
    energy = eps * (4 * dim * R ** 2 + R ** (2 * p + 2) / (2 * p + 2))
    omega1 = 2.0 * eps * (4 * dim + R ** (2 * p))
    phi = 2.0 * math.pi * omega1
    M1 = phi * (e + 3 * r) / shrink
    M2 = phi * (2 * e + 3 * r) / shrink
    nf_mu = 12.0 * e * math.pi * eps / shrink
    try:
        t_star = math.exp(1.0 / nf_mu) if nf_mu > 0 else float("inf")
    except OverflowError:
        t_star = float("inf")
    r_opt = int(math.floor(shrink / (6.0 * e * phi))) if phi > 0 else None

    recorded = {}
    F_norms = budget.coeff_norms.get("F", [])
    if F_norms and F_norms[0] > 0:
        recorded_phi = 2.0 * math.pi * 2.0 * F_norms[0] / R ** 2
        recorded_M2 = recorded_phi * (2 * e + 3 * r) / shrink
        recorded = {
            "phi": recorded_phi,
            "M2": recorded_M2,
            "norm_bound": [2 * recorded_phi / shrink * recorded_M2 ** (s - 1) for s in range(1, r + 2)],
        }
    return {
        "E": energy,
        "omega1": omega1,
        "phi": phi,
        "M1": M1,
        "M2": M2,
        "nf_mu": nf_mu,
        "T_star": t_star,
        "r_opt": r_opt,
        "recorded": recorded,
    }


def norm_table(result: NormalFormResult, constants: Dict[str, object]) -> pd.DataFrame:
    norms = result.budget.coeff_norms
    bounds = constants.get("recorded", {}).get("norm_bound", [])
    rows = []
    for s in range(1, result.budget.order + 1):
        rows.append({
            "order": s,
            "Z_norm": norms["Z"][s - 1],
            "chi_norm": norms["chi"][s - 1],
            "F_norm": norms["F"][s - 1],
            "Psi_norm": norms["Psi"][s - 1],
            "norm_bound": bounds[s - 1] if len(bounds) >= s else float("nan"),
        })
    for s, value in result.remainder_norms.items():
        rows.append({
            "order": s,
            "Z_norm": float("nan"),
            "chi_norm": float("nan"),
            "F_norm": float("nan"),
            "Psi_norm": value,
            "norm_bound": bounds[s - 1] if len(bounds) >= s else float("nan"),
        })
    return pd.DataFrame(rows)


# ------------------------------------------------------------------
# Generalized soliton
# ------------------------------------------------------------------

class GeneralizedSolitonSystem:
    """f(A) = Omega A + (sqrt(2)/eps) Re dZ/dzetabar at zeta = sqrt(2) A, with its Jacobian."""

    def __init__(self, Z_list: Sequence[PolyHamiltonian], eps: float):
        if not Z_list:
            raise ValueError("Need at least one normal-form term")
        if eps <= 0:
            raise ValueError(f"eps must be positive, got {eps}")
        total = Z_list[0].empty()
        for Z in Z_list:
            total = total + Z
        total = total.to_float()
        self.grid = total.grid
        self.eps = eps
        n = total.sites
        gradient = [total.derivative(n + j) for j in range(n)]
        self._gradient = [g.compile(eps) for g in gradient]
        self._hessian = [
            [(g.derivative(k).compile(eps), g.derivative(n + k).compile(eps)) for k in range(n)]
            for g in gradient
        ]

    def residual(self, values: np.ndarray, Omega: float) -> np.ndarray:
        zeta = math.sqrt(2.0) * np.asarray(values, dtype=complex)
        grad = np.array([g(zeta) for g in self._gradient])
        return Omega * values + math.sqrt(2.0) / self.eps * grad.real

    def jacobian(self, values: np.ndarray, Omega: float) -> np.ndarray:
        zeta = math.sqrt(2.0) * np.asarray(values, dtype=complex)
        n = len(values)
        J = Omega * np.eye(n)
        for j, row in enumerate(self._hessian):
            for k, (d_zeta, d_bar) in enumerate(row):
                if d_zeta.coefficients.size or d_bar.coefficients.size:
                    J[j, k] += 2.0 / self.eps * (d_zeta(zeta) + d_bar(zeta)).real
        return J


def generalized_soliton_equation(Z_list: Sequence[PolyHamiltonian], A: RealField, Omega: float,
                                 eps: float) -> RealField:
    system = GeneralizedSolitonSystem(Z_list, eps)
    return RealField(A.grid, system.residual(A.values, Omega))


def solve_generalized_soliton(Z_list: Sequence[PolyHamiltonian], branch: SolitonBranch, eps: float,
                              tol: Optional[float] = None) -> RealField:
    """Newton on f seeded with the dNLS soliton of the same Omega."""
    branch = branch.to_defocusing()
    tol = newton_config.tol if tol is None else tol
    system = GeneralizedSolitonSystem(Z_list, eps)
    Omega = branch.params.omega
    values, norm, iterations = newton_solve(
        lambda x: system.residual(x, Omega),
        lambda x: system.jacobian(x, Omega),
        branch.amplitude.values,
        tol,
        newton_config.max_iter,
        label=f"generalized soliton(eps={eps:g})",
    )
    logger.info(f"Generalized soliton eps={eps:g}: residual {norm:.2e} after {iterations} iterations")
    return RealField(branch.grid, values)


# ------------------------------------------------------------------
# Change of coordinates
# ------------------------------------------------------------------

class CoordinateTransform:
    """zeta = T_chi(w) from the Lie series of the coordinate functions, and its inverse."""

    def __init__(self, chi_list: Sequence[PolyHamiltonian], grid: LatticeGrid, eps: float,
                 order: Optional[int] = None):
        self.grid = grid
        self.eps = eps
        order = len(chi_list) if order is None else order
        chi = {l: c for l, c in enumerate(chi_list, start=1) if c}
        exact = chi_list[0].exact if chi_list else False
        self.compiled = []
        self.identity = not chi
        for j in range(grid.size):
            series = {0: coordinate(grid, j, exact)}
            if chi_list:
                series[0].degree_cap = chi_list[0].degree_cap
            total = series[0]
            for s in range(1, order + 1):
                series[s] = _weighted_sum(
                    ((l, s, chi[l], series[s - l]) for l in range(1, s + 1) if l in chi), series[0]
                )
                total = total + series[s]
            self.compiled.append(total.compile(eps))

    def forward(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        if self.identity:
            return w.copy()
        return np.stack([c(w) for c in self.compiled], axis=-1)

    def inverse(self, z: np.ndarray, tol: Optional[float] = None,
                max_iter: Optional[int] = None) -> np.ndarray:
        tol = nf_config.inverse_tol if tol is None else tol
        max_iter = nf_config.inverse_max_iter if max_iter is None else max_iter
        z = np.asarray(z, dtype=complex)
        w = z.copy()
        for iteration in range(max_iter):
            defect = self.forward(w) - z
            error = float(np.max(np.abs(defect)))
            if error < tol:
                return w
            w = w - defect
        raise NonConvergence(f"Inverse transform did not converge (defect {error:.3e})", max_iter, error)


def transform_state(chi_list: Sequence[PolyHamiltonian], z: np.ndarray, direction: Direction,
                    eps: float, budget: Optional[NormalFormBudget] = None) -> np.ndarray:
    if not chi_list:
        return np.asarray(z, dtype=complex).copy()
    grid = chi_list[0].grid
    if budget is not None:
        limit = budget.ball_radius * (1.0 - budget.shrink)
        if np.max(np.abs(z)) > limit:
            logger.warning(f"State of size {np.max(np.abs(z)):.3g} lies outside the ball of radius {limit:.3g}")
    transform = CoordinateTransform(chi_list, grid, eps, budget.order if budget else None)
    if Direction(direction) is Direction.FORWARD:
        return transform.forward(z)
    return transform.inverse(z)


# ------------------------------------------------------------------
# Breather in normal-form coordinates
# ------------------------------------------------------------------

def normal_form_tail(transform: CoordinateTransform, B, amplitude: RealField, samples: int) -> float:
    """Distance of the breather orbit, mapped to normal-form coordinates, from sqrt(2) A e^{i tau}."""
    _, u, v = B.orbit(samples)
    zeta = transform.inverse((u - 1j * v) / math.sqrt(2.0))
    coefficients = np.fft.fft(zeta, axis=0) / samples
    tail = np.linalg.norm(coefficients[1] / math.sqrt(2.0) - amplitude.values)
    for m in range(samples):
        if m != 1:
            tail += np.linalg.norm(coefficients[m]) / math.sqrt(2.0)
    return float(tail)


def verify_generalized_soliton(branch: SolitonBranch, eps_list: Sequence[float], order: int = 2,
                               M: Optional[int] = None, exact: bool = False,
                               samples: Optional[int] = None) -> pd.DataFrame:
    """Per eps: |A_gen - A_dnls|, its ratio to eps, and the normal-form Fourier tail of the breather."""
    branch = branch.to_defocusing()
    p, Omega = branch.params.p, branch.params.omega
    samples = samples or nf_config.orbit_samples
    degree_cap = max(nf_config.degree_cap, required_degree(p, order + 1))
    H = build_scaled_hamiltonian(branch.grid, p, 1.0, exact=exact, degree_cap=degree_cap)
    result = lie_transform_normal_form(H, order, p=p, remainder=False)

    rows = []
    for eps in eps_list:
        amplitude = solve_generalized_soliton(result.Z_list, branch, eps)
        seed = seed_from_soliton(branch, eps, M)
        seed = BreatherSolution(seed.grid, seed.harmonics, omega_for_eps_series(eps, Omega), eps, seed.params)
        B = solve_breather(seed, mode=SolveMode.FIX_PERIOD)
        transform = CoordinateTransform(result.chi_list, branch.grid, eps)
        distance = float(np.linalg.norm(amplitude.values - branch.amplitude.values))
        rows.append({
            "eps": eps,
            "soliton_shift": distance,
            "shift_over_eps": distance / eps,
            "tail": normal_form_tail(transform, B, amplitude, samples),
        })
        logger.info(f"eps={eps:g}: |A_gen - A| = {distance:.3e}, tail = {rows[-1]['tail']:.3e}")
    return pd.DataFrame(rows, columns=["eps", "soliton_shift", "shift_over_eps", "tail"])
