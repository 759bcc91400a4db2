"""Tests for the resonant normal form."""

import numpy as np
import pytest
from sympy.polys.domains import QQ, QQ_I

from breather_lab.config import normal_form as nf_config
from breather_lab.dnls import DnlsParams, anticontinuum_seed, dnls_residual, solve_soliton
from breather_lab.dynamics import PhaseState, hamiltonian, normal_form_energy_Z1
from breather_lab.errors import DegreeOverflow, OrderOverflow
from breather_lab.lattice import LatticeGrid, RealField
from breather_lab.normal_form import (
    EXACT,
    CoordinateTransform,
    Direction,
    GeneralizedSolitonSystem,
    NormalFormBudget,
    PolyHamiltonian,
    build_scaled_hamiltonian,
    coordinate,
    extracted_gamma,
    first_order_table,
    generalized_soliton_equation,
    harmonic_part,
    homological_residual,
    lie_transform_normal_form,
    normal_form_constants,
    norm_table,
    poisson,
    required_degree,
    resonant_gamma,
    solve_generalized_soliton,
    solve_homological,
    split_hamiltonian,
    transform_state,
    transformed_part,
    verify_generalized_soliton,
)


def _monomial(grid, alpha, beta, coefficient=None, k=0, exact=True):
    poly = PolyHamiltonian(grid, {}, nf_config.degree_cap, exact)
    poly.add_term(k, tuple(alpha) + tuple(beta), poly.ring.rational(1) if coefficient is None else coefficient)
    return poly


@pytest.fixture(scope="module")
def small_grid():
    return LatticeGrid(1, 1)


@pytest.fixture(scope="module")
def third_order(small_grid):
    H = build_scaled_hamiltonian(small_grid, 1, 0.1)
    return H, lie_transform_normal_form(H, 3, p=1, remainder=False)


@pytest.fixture(scope="module")
def branch():
    grid = LatticeGrid(1, 4)
    params = DnlsParams.focusing_frame(1, 5.0)
    return solve_soliton(params, grid, anticontinuum_seed(grid, params))


class TestBuild:
    def test_term_count(self, small_grid):
        H = build_scaled_hamiltonian(small_grid, 1, 0.1)
        # G: 3, on-site quartic: 3 x 5, diagonal coupling: 3 x 3, two edges: 2 x 4
        assert len(H) == 35
        assert H.eps_powers() == {0, 1}
        assert H.is_real()

    def test_eps_zero_is_harmonic(self, small_grid):
        H = build_scaled_hamiltonian(small_grid, 1, 0.0)
        assert len(H) == 3
        assert H.eps_powers() == {0}

    def test_split(self, small_grid):
        G, F = split_hamiltonian(build_scaled_hamiltonian(small_grid, 1, 0.1))
        assert len(G) == 3
        assert F.eps_powers() == {1}

    def test_preconditions(self, small_grid):
        with pytest.raises(ValueError, match="p must be"):
            build_scaled_hamiltonian(small_grid, 0, 0.1)
        with pytest.raises(DegreeOverflow):
            build_scaled_hamiltonian(small_grid, 2, 0.1, degree_cap=4)

    def test_matches_lattice_energy(self):
        grid = LatticeGrid(1, 2)
        H = build_scaled_hamiltonian(grid, 1, 0.1)
        rng = np.random.default_rng(4)
        u, v = rng.standard_normal(grid.size), rng.standard_normal(grid.size)
        state = PhaseState(RealField(grid, u), RealField(grid, v))
        value = H.evaluate((u - 1j * v) / np.sqrt(2.0))
        assert value.real == pytest.approx(hamiltonian(state, 0.1, 1))
        assert abs(value.imag) < 1e-12

    def test_to_text(self, small_grid):
        H = build_scaled_hamiltonian(small_grid, 1, 0.1)
        lines = H.to_text().splitlines()
        assert lines[0] == "# d=1 N=1 boundary=dirichlet exact=True terms=35"
        assert len(lines) == 36
        assert lines[1] == "0\t0 0 1\t0 0 1\t1\t0"
        assert H.to_text() == H.copy().to_text()


class TestPoisson:
    def test_harmonic_rotation(self, small_grid):
        G = harmonic_part(small_grid)
        cube = _monomial(small_grid, (3, 0, 0), (0, 0, 0))
        result = poisson(G, cube)
        assert result.terms == {(0, (3, 0, 0, 0, 0, 0)): QQ_I(0, -3)}

    def test_canonical_pair(self, small_grid):
        zeta = coordinate(small_grid, 1)
        zeta_bar = _monomial(small_grid, (0, 0, 0), (0, 1, 0))
        assert poisson(zeta, zeta_bar).terms == {(0, (0,) * 6): QQ_I(0, 1)}

    def test_antisymmetry(self, small_grid):
        _, F = split_hamiltonian(build_scaled_hamiltonian(small_grid, 1, 0.1))
        cube = _monomial(small_grid, (2, 1, 0), (0, 0, 1))
        assert not (poisson(F, cube) + poisson(cube, F))

    def test_mixed_fields_rejected(self, small_grid):
        with pytest.raises(ValueError, match="mix"):
            poisson(harmonic_part(small_grid), harmonic_part(small_grid, exact=False))

    def test_degree_cap(self, small_grid):
        a = _monomial(small_grid, (3, 1, 0), (0, 0, 0))
        a.degree_cap = 4
        b = _monomial(small_grid, (0, 0, 0), (3, 0, 0))
        b.degree_cap = 4
        with pytest.raises(DegreeOverflow):
            poisson(a, b)


class TestHomological:
    def test_cubic_monomial(self, small_grid):
        psi = _monomial(small_grid, (3, 0, 0), (0, 0, 0))
        Z, chi = solve_homological(psi)
        assert not Z
        assert chi.terms == {(0, (3, 0, 0, 0, 0, 0)): QQ_I(0, QQ(1, 3))}
        assert not homological_residual(harmonic_part(small_grid), Z, chi, psi)

    def test_resonant_monomial_kept(self, small_grid):
        psi = _monomial(small_grid, (1, 1, 0), (0, 1, 1))
        Z, chi = solve_homological(psi)
        assert not chi
        assert Z.terms == psi.terms

    def test_quadrature_generator(self, small_grid):
        # chi = -(1/2pi) int_0^2pi t (Psi - Z)(e^{it} zeta) dt
        H = build_scaled_hamiltonian(small_grid, 1, 0.1, exact=False)
        _, F = split_hamiltonian(H)
        Z, chi = solve_homological(F)
        rng = np.random.default_rng(8)
        zeta = 0.5 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        x, w = np.polynomial.legendre.leggauss(64)
        t = np.pi * (x + 1.0)
        rotated = np.exp(1j * t)[:, None] * zeta[None, :]
        values = F.compile(0.1)(rotated) - Z.compile(0.1)(rotated)
        integral = -np.sum(np.pi * w * t * values) / (2.0 * np.pi)
        assert integral == pytest.approx(chi.evaluate(zeta, 0.1), abs=1e-11)


class TestLieTransform:
    def test_homological_equations_hold(self, small_grid, third_order):
        _, result = third_order
        G = harmonic_part(small_grid)
        for s, (Z, chi, psi) in enumerate(zip(result.Z_list, result.chi_list, result.psi_list), start=1):
            assert not homological_residual(G, Z, chi, psi)
            assert not poisson(G, Z)
            assert Z.eps_powers() <= {s}
            assert Z.is_real()
            assert chi.is_real()

    def test_transformed_terms_are_normal_form(self, small_grid, third_order):
        H, result = third_order
        G, _ = split_hamiltonian(H)
        F_terms = dict(enumerate(result.F_list, start=1))
        chi_terms = dict(enumerate(result.chi_list, start=1))
        for s, Z in enumerate(result.Z_list, start=1):
            assert not (transformed_part(G, F_terms, chi_terms, s, H) - Z)

    def test_remainder_recorded(self, small_grid):
        H = build_scaled_hamiltonian(small_grid, 1, 0.1)
        result = lie_transform_normal_form(H, 1, p=1)
        assert result.remainder is not None
        assert result.remainder.eps_powers() <= {2}
        assert result.remainder_norms[2] > 0.0
        assert list(norm_table(result, {})["order"]) == [1, 2]

    def test_caps(self, small_grid):
        H = build_scaled_hamiltonian(small_grid, 1, 0.1, degree_cap=4)
        with pytest.raises(DegreeOverflow, match="needed for order 2"):
            lie_transform_normal_form(H, 2, p=1)
        with pytest.raises(OrderOverflow):
            lie_transform_normal_form(H, nf_config.order_cap + 1, p=1)
        with pytest.raises(ValueError, match=">= 1"):
            lie_transform_normal_form(H, 0)

    def test_required_degree(self):
        assert required_degree(1, 1) == 4
        assert required_degree(1, 3) == 8
        assert required_degree(2, 2) == 10


class TestFirstOrder:
    @pytest.fixture(scope="class")
    def Z1(self, small_grid):
        return lie_transform_normal_form(build_scaled_hamiltonian(small_grid, 1, 0.1), 1, p=1).Z_list[0]

    def test_gamma(self, Z1):
        assert resonant_gamma(1) == QQ(3, 2)
        assert resonant_gamma(2) == QQ(5, 2)
        gamma = extracted_gamma(Z1, 1)
        assert gamma == QQ_I(QQ(3, 2), 0)
        assert EXACT.to_complex(gamma) == 1.5

    def test_table(self, Z1):
        df = first_order_table(Z1, 1)
        assert len(df) == 10
        onsite = df[df["kind"] == "onsite"]
        assert len(onsite) == 3
        assert (onsite["exact"] == "3/8").all()
        assert np.allclose(onsite["gamma"], 1.5)
        assert np.allclose(df[df["kind"] == "diagonal"]["re"], 1.0)
        assert np.allclose(df[df["kind"] == "coupling"]["re"], -0.5)

    def test_matches_lattice_diagnostic(self):
        grid = LatticeGrid(1, 2)
        Z1 = lie_transform_normal_form(build_scaled_hamiltonian(grid, 1, 0.1), 1, p=1).Z_list[0]
        rng = np.random.default_rng(6)
        u, v = rng.standard_normal(grid.size), rng.standard_normal(grid.size)
        state = PhaseState(RealField(grid, u), RealField(grid, v))
        value = Z1.evaluate((u - 1j * v) / np.sqrt(2.0), 0.1)
        assert value.real == pytest.approx(normal_form_energy_Z1(state, 0.1, 1))


class TestConstants:
    def test_budget_validation(self):
        with pytest.raises(ValueError, match="Shrink"):
            NormalFormBudget(order=1, ball_radius=1.0, shrink=0.5)
        with pytest.raises(ValueError, match="radius"):
            NormalFormBudget(order=1, ball_radius=0.0)
        with pytest.raises(ValueError, match="order"):
            NormalFormBudget(order=0, ball_radius=1.0)

    def test_estimates(self):
        constants = normal_form_constants(NormalFormBudget(order=1, ball_radius=1.0), 1, 1, 0.01)
        assert constants["omega1"] == pytest.approx(0.1)
        assert constants["phi"] == pytest.approx(0.2 * np.pi)
        assert constants["T_star"] == pytest.approx(np.exp(1.0 / constants["nf_mu"]))
        assert constants["r_opt"] == 0
        assert constants["recorded"] == {}

    def test_recorded_from_norms(self, small_grid):
        budget = NormalFormBudget(order=1, ball_radius=1.0)
        lie_transform_normal_form(build_scaled_hamiltonian(small_grid, 1, 0.1), 1, budget=budget, p=1)
        constants = normal_form_constants(budget, 1, 1, 0.1)
        assert constants["recorded"]["phi"] == pytest.approx(4.0 * np.pi * budget.coeff_norms["F"][0])
        assert len(constants["recorded"]["norm_bound"]) == 2


class TestGeneralizedSoliton:
    @pytest.fixture(scope="class")
    def Z_first(self, branch):
        H = build_scaled_hamiltonian(branch.grid, 1, 1.0)
        return lie_transform_normal_form(H, 1, p=1, remainder=False).Z_list

    def test_first_order_is_dnls(self, branch, Z_first):
        rng = np.random.default_rng(9)
        A = RealField(branch.grid, rng.standard_normal(branch.grid.size))
        residual = generalized_soliton_equation(Z_first, A, -9.0, 0.01)
        expected = dnls_residual(A, DnlsParams(1, -9.0))
        assert np.allclose(residual.values, expected.values, atol=1e-12)

    def test_jacobian(self, branch, Z_first):
        system = GeneralizedSolitonSystem(Z_first, 0.01)
        rng = np.random.default_rng(10)
        x = rng.standard_normal(branch.grid.size)
        direction = rng.standard_normal(branch.grid.size)
        h = 1e-6
        numeric = (system.residual(x + h * direction, -9.0) - system.residual(x - h * direction, -9.0)) / (2 * h)
        assert np.allclose(system.jacobian(x, -9.0) @ direction, numeric, atol=1e-6)

    def test_first_order_solution_is_soliton(self, branch, Z_first):
        amplitude = solve_generalized_soliton(Z_first, branch, 0.01)
        assert np.linalg.norm(amplitude.values - branch.to_defocusing().amplitude.values) < 1e-10

    def test_needs_terms(self):
        with pytest.raises(ValueError, match="at least one"):
            GeneralizedSolitonSystem([], 0.1)

    def test_scaling(self):
        grid = LatticeGrid(1, 4)
        params = DnlsParams.focusing_frame(1, 10.0)
        strong = solve_soliton(params, grid, anticontinuum_seed(grid, params))
        df = verify_generalized_soliton(strong, [0.02, 0.01, 0.005], order=2)
        assert list(df.columns) == ["eps", "soliton_shift", "shift_over_eps", "tail"]
        ratios = df["shift_over_eps"]
        assert ratios.max() < 2.0 * ratios.min()
        assert df["tail"].iloc[-1] < 0.5 * df["tail"].iloc[0]


class TestCoordinates:
    @pytest.fixture(scope="class")
    def chi_list(self, small_grid):
        H = build_scaled_hamiltonian(small_grid, 1, 1.0, exact=False)
        return lie_transform_normal_form(H, 2, p=1, remainder=False).chi_list

    def test_round_trip(self, small_grid, chi_list):
        transform = CoordinateTransform(chi_list, small_grid, 0.01)
        rng = np.random.default_rng(12)
        w = 0.5 * (rng.standard_normal(3) + 1j * rng.standard_normal(3))
        z = transform.forward(w)
        assert np.max(np.abs(z - w)) > 0.0
        assert np.allclose(transform.inverse(z), w, atol=1e-10)

    def test_transform_state(self, chi_list):
        z = np.array([0.1, 0.2j, -0.1])
        forward = transform_state(chi_list, z, Direction.FORWARD, 0.01)
        back = transform_state(chi_list, forward, "inverse", 0.01)
        assert np.allclose(back, z, atol=1e-10)

    def test_identity_without_generators(self):
        z = np.array([0.3 + 0.1j])
        assert np.array_equal(transform_state([], z, Direction.FORWARD, 0.01), z)
