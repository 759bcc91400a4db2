"""Tests for Klein-Gordon breathers."""

import numpy as np
import pytest
from dataclasses import replace

from breather_lab.dnls import DnlsParams, anticontinuum_seed, solve_soliton
from breather_lab.dynamics import PhaseState, hamiltonian, integrate
from breather_lab.errors import InvalidFrequency
from breather_lab.kg_breather import (
    SolveMode,
    breather_energy,
    breather_jacobian,
    breather_residual,
    eps_star,
    fit_slope,
    frequency_from_omega,
    leading_order_flat,
    lyapunov_schmidt_split,
    nonlinear_projection,
    omega_error,
    omega_for_eps_series,
    projection_imaginary_part,
    quadrature_points,
    seed_from_soliton,
    solve_breather,
    tail_ok,
    time_domain_check,
    verify_bounds,
)
from breather_lab.lattice import LatticeGrid, RealField


@pytest.fixture(scope="module")
def branch():
    grid = LatticeGrid(1, 10)
    params = DnlsParams.focusing_frame(1, 5.0)
    return solve_soliton(params, grid, anticontinuum_seed(grid, params))


@pytest.fixture(scope="module")
def breather(branch):
    return solve_breather(seed_from_soliton(branch, 0.01))


@pytest.fixture(scope="module")
def breather_05(branch):
    return solve_breather(seed_from_soliton(branch, 0.05))


class TestProjection:
    def test_quadrature_points(self):
        assert quadrature_points(8, 1) == 64
        assert quadrature_points(3, 2) == 32

    def test_single_harmonic_cubic(self):
        # (2a cos t)^3 = 6a^3 cos t + 2a^3 cos 3t
        harmonics = np.zeros((4, 3))
        harmonics[1] = 0.5
        projection = nonlinear_projection(harmonics, 1)
        assert np.allclose(projection[1], 0.375, atol=1e-15)
        assert np.allclose(projection[3], 0.125, atol=1e-15)
        assert np.allclose(projection[0], 0.0, atol=1e-15)
        assert np.allclose(projection[2], 0.0, atol=1e-15)

    def test_projection_is_real(self, breather):
        assert projection_imaginary_part(breather) < 1e-12


class TestSeed:
    def test_frequency(self):
        assert frequency_from_omega(0.01, -9.0) == pytest.approx(np.sqrt(1.09))
        with pytest.raises(InvalidFrequency, match="<= 0"):
            frequency_from_omega(1.0, 2.0)

    def test_series_frequency(self):
        assert omega_for_eps_series(0.01, -9.0) == pytest.approx(1.045)
        assert omega_for_eps_series(0.01, -9.0, order=2) == pytest.approx(1.045 - 0.125 * 0.09 ** 2)
        assert abs(omega_for_eps_series(0.01, -9.0, order=2) - np.sqrt(1.09)) < 1e-4
        with pytest.raises(ValueError, match="order"):
            omega_for_eps_series(0.01, -9.0, order=3)

    def test_seed_carries_soliton(self, branch):
        seed = seed_from_soliton(branch, 0.01, M=5)
        assert seed.M == 5
        assert np.array_equal(seed.harmonics[1], branch.to_defocusing().amplitude.values)
        assert not np.any(seed.harmonics[[0, 2, 3, 4, 5]])

    def test_seed_preconditions(self, branch):
        with pytest.raises(ValueError, match="M must be"):
            seed_from_soliton(branch, 0.01, M=2)
        with pytest.raises(ValueError, match="nonnegative"):
            seed_from_soliton(branch, -0.01)

    def test_eps_zero_seed_is_exact(self, branch):
        seed = seed_from_soliton(branch, 0.0)
        assert seed.omega == 1.0
        assert np.linalg.norm(breather_residual(seed)) == 0.0


class TestSolveBreather:
    def test_converges(self, breather):
        assert breather.residual_norm < 1e-10
        assert np.linalg.norm(breather_residual(breather)) < 1e-10
        assert tail_ok(breather)

    def test_frequency_parameterization(self, breather):
        assert breather.omega == np.sqrt(1.0 - 0.01 * breather.params.omega)

    def test_only_odd_harmonics(self, breather):
        assert np.linalg.norm(breather.harmonics[0::2]) < 1e-12

    def test_fix_period_keeps_frequency(self, branch):
        seed = seed_from_soliton(branch, 0.01)
        seed = replace(seed, omega=omega_for_eps_series(0.01, branch.to_defocusing().params.omega))
        solution = solve_breather(seed, mode=SolveMode.FIX_PERIOD)
        assert solution.omega == seed.omega
        assert solution.residual_norm < 1e-10

    def test_bad_tolerance(self, branch):
        with pytest.raises(ValueError, match="Tolerance"):
            solve_breather(seed_from_soliton(branch, 0.01), tol=0.0)

    def test_jacobian_central_difference(self, breather):
        rng = np.random.default_rng(5)
        direction = rng.standard_normal(breather.harmonics.shape)
        exact = (breather_jacobian(breather) @ direction.ravel()).reshape(direction.shape)

        def error(h):
            plus = breather_residual(replace(breather, harmonics=breather.harmonics + h * direction))
            minus = breather_residual(replace(breather, harmonics=breather.harmonics - h * direction))
            return np.linalg.norm((plus - minus) / (2 * h) - exact)

        assert np.log2(error(1e-2) / error(5e-3)) >= 1.9

    def test_orbit_starts_at_initial_state(self, breather):
        _, u, v = breather.orbit(16)
        u0, v0 = breather.initial_state()
        assert np.allclose(u[0], u0, atol=1e-14)
        assert np.allclose(v[0], 0.0, atol=1e-14)
        assert not np.any(v0)


class TestErrorScaling:
    def test_bound_sweep_slopes(self, branch):
        report = verify_bounds(branch, [0.02, 0.01, 0.005, 0.0025], M=8)
        assert not report.partial
        assert report.fitted_slopes["omega_err"] == pytest.approx(2.0, abs=0.3)
        assert report.fitted_slopes["profile_err"] == pytest.approx(1.0, abs=0.3)
        assert list(report.to_frame().columns) == ["eps", "omega_err", "profile_err", "tail_err"]

    def test_eps_list_validation(self, branch):
        with pytest.raises(ValueError, match="decreasing"):
            verify_bounds(branch, [0.01, 0.02])
        with pytest.raises(ValueError, match="must lie in"):
            verify_bounds(branch, [0.2, 0.01])

    def test_omega_error(self, breather):
        assert omega_error(breather) < 0.01 ** 2 * breather.params.omega ** 2

    def test_fit_slope(self):
        eps = [0.1, 0.05, 0.025]
        assert fit_slope(eps, [e ** 2 for e in eps]) == pytest.approx(2.0)
        assert np.isnan(fit_slope(eps, [np.nan, np.nan, 1.0]))


class TestDecomposition:
    def test_split(self, breather):
        kernel, flat = lyapunov_schmidt_split(breather)
        assert np.array_equal(kernel.values, breather.harmonics[1])
        assert not np.any(flat[1])
        assert np.array_equal(flat[3], breather.harmonics[3])

    def test_leading_order_flat(self, breather):
        _, flat = lyapunov_schmidt_split(breather)
        prediction = leading_order_flat(breather)
        assert np.linalg.norm(flat) > 0.0
        assert np.linalg.norm(prediction - flat) <= 0.2 * np.linalg.norm(flat)

    def test_eps_star(self):
        assert eps_star(-9.0, 8) == float("inf")
        assert eps_star(5.0, 8) == pytest.approx(0.025)


class TestTimeDomain:
    def test_return_map(self, breather_05):
        assert time_domain_check(breather_05) < 1e-6

    def test_energy_matches_hamiltonian(self, breather_05):
        u, v = breather_05.initial_state()
        state = PhaseState(RealField(breather_05.grid, u), RealField(breather_05.grid, v))
        assert breather_energy(breather_05) == hamiltonian(state, breather_05.eps, 1)
        later = integrate(state, breather_05.eps, 1, breather_05.period / 500, 500, order=4)
        assert hamiltonian(later, breather_05.eps, 1) == pytest.approx(breather_energy(breather_05), rel=1e-6)
