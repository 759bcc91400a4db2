"""Tests for the symplectic lattice integrator and stability diagnostics."""

import numpy as np
import pytest

from breather_lab.dnls import DnlsParams, anticontinuum_seed, solve_soliton
from breather_lab.dynamics import (
    PhaseState,
    almost_invariant_G,
    ensemble_stability,
    hamiltonian,
    integrate,
    krein_form,
    linearized_monodromy,
    normal_form_energy_Z1,
    orbital_distance,
    orbital_stability_run,
    random_perturbation,
    step,
)
from breather_lab.kg_breather import seed_from_soliton, solve_breather
from breather_lab.lattice import LatticeGrid, RealField, delta_field, zero_field


def _state(grid, u, v):
    return PhaseState(RealField(grid, u), RealField(grid, v))


@pytest.fixture(scope="module")
def breather():
    grid = LatticeGrid(1, 5)
    params = DnlsParams.focusing_frame(1, 5.0)
    branch = solve_soliton(params, grid, anticontinuum_seed(grid, params))
    return solve_breather(seed_from_soliton(branch, 0.05))


class TestPhaseState:
    def test_grids_must_match(self):
        with pytest.raises(ValueError, match="same grid"):
            PhaseState(zero_field(LatticeGrid(1, 1)), zero_field(LatticeGrid(1, 2)))

    def test_vector(self):
        grid = LatticeGrid(1, 1)
        state = _state(grid, [1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
        assert state.vector().tolist() == [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]


class TestIntegrator:
    def test_zero_step_rejected(self):
        grid = LatticeGrid(1, 1)
        with pytest.raises(ValueError, match="nonzero"):
            step(_state(grid, [0.0, 1.0, 0.0], [0.0, 0.0, 0.0]), 0.1, 1, 0.0)

    @pytest.mark.parametrize("order, expected", [(2, 1.9), (4, 3.5)])
    def test_convergence_order(self, order, expected):
        # eps = 0 decouples the lattice into harmonic oscillators u = cos t
        grid = LatticeGrid(1, 1)
        start = _state(grid, [0.0, 1.0, 0.0], [0.0, 0.0, 0.0])

        def error(h):
            end = integrate(start, 0.0, 1, h, int(round(1.0 / h)), order=order)
            return abs(end.u.at(0) - np.cos(1.0)) + abs(end.v.at(0) + np.sin(1.0))

        assert np.log2(error(0.1) / error(0.05)) >= expected

    def test_step_matches_integrate(self):
        grid = LatticeGrid(1, 2)
        start = _state(grid, [0.0, 0.3, 1.0, -0.2, 0.0], [0.1, 0.0, 0.0, 0.2, 0.0])
        one = step(step(start, 0.1, 1, 0.01), 0.1, 1, 0.01)
        two = integrate(start, 0.1, 1, 0.01, 2)
        assert np.array_equal(one.u.values, two.u.values)
        assert one.time == pytest.approx(0.02)

    def test_energy_oscillation_is_small(self):
        grid = LatticeGrid(1, 3)
        start = _state(grid, 1.2 * delta_field(grid).values, np.zeros(grid.size))
        energy = hamiltonian(start, 0.1, 1)
        end = integrate(start, 0.1, 1, 0.005, 2000)
        assert abs(hamiltonian(end, 0.1, 1) - energy) / energy < 1e-4


class TestInvariants:
    def test_hamiltonian_single_site(self):
        grid = LatticeGrid(1, 2)
        state = _state(grid, delta_field(grid).values, np.zeros(grid.size))
        # 1/2 + eps/4 + eps (each edge once)
        assert hamiltonian(state, 0.1, 1) == pytest.approx(0.625)

    def test_G(self):
        grid = LatticeGrid(1, 1)
        assert almost_invariant_G(_state(grid, [0.0, 3.0, 0.0], [0.0, 4.0, 0.0])) == 12.5

    def test_Z1_single_site(self):
        grid = LatticeGrid(1, 2)
        state = _state(grid, delta_field(grid).values, np.zeros(grid.size))
        # 3 eps |zeta|^4 / 8 + eps |zeta|^2 with |zeta|^2 = 1/2
        assert normal_form_energy_Z1(state, 0.1, 1) == pytest.approx(0.059375)

    def test_Z1_is_phase_invariant(self):
        grid = LatticeGrid(1, 2)
        rng = np.random.default_rng(2)
        u, v = rng.standard_normal(grid.size), rng.standard_normal(grid.size)
        zeta = (u - 1j * v) * np.exp(0.7j)
        rotated = _state(grid, zeta.real, -zeta.imag)
        assert normal_form_energy_Z1(rotated, 0.1, 1) == pytest.approx(normal_form_energy_Z1(_state(grid, u, v), 0.1, 1))


class TestLinearizedFlow:
    def test_krein_form(self):
        assert krein_form(np.array([1.0 + 0j]), np.array([1j])) == pytest.approx(2.0)
        assert krein_form(np.array([1.0]), np.array([1.0])) == 0.0

    def test_monodromy_is_symplectic(self):
        grid = LatticeGrid(1, 2)
        start = _state(grid, [0.0, 0.4, 1.0, 0.4, 0.0], np.zeros(grid.size))
        M = linearized_monodromy(start, 0.1, 1, 0.01, 100)
        n = grid.size
        J = np.block([[np.zeros((n, n)), np.eye(n)], [-np.eye(n), np.zeros((n, n))]])
        assert np.allclose(M.T @ J @ M, J, atol=1e-10)

    def test_monodromy_matches_finite_differences(self):
        grid = LatticeGrid(1, 2)
        start = _state(grid, [0.0, 0.4, 1.0, 0.4, 0.0], np.zeros(grid.size))
        M = linearized_monodromy(start, 0.1, 1, 0.01, 100)
        n = grid.size
        h = 1e-6
        for column in range(2 * n):
            e = np.zeros(2 * n)
            e[column] = h
            z = start.vector()
            plus = integrate(_state(grid, (z + e)[:n], (z + e)[n:]), 0.1, 1, 0.01, 100).vector()
            minus = integrate(_state(grid, (z - e)[:n], (z - e)[n:]), 0.1, 1, 0.01, 100).vector()
            assert np.allclose((plus - minus) / (2 * h), M[:, column], atol=1e-6)


class TestOrbitalStability:
    def test_perturbation(self):
        a = random_perturbation(10, 1e-3, seed=1)
        assert np.linalg.norm(a) == pytest.approx(1e-3)
        assert np.array_equal(a, random_perturbation(10, 1e-3, seed=1))
        assert not np.array_equal(a, random_perturbation(10, 1e-3, seed=2))

    def test_orbital_distance(self):
        points = np.array([[0.0, 0.0], [1.0, 0.0]])
        assert orbital_distance(points, np.array([1.0, 2.0])) == 2.0

    def test_unperturbed_breather_stays_on_orbit(self, breather):
        trace = orbital_stability_run(breather, 0.0, 2 * breather.period, samples=4096)
        assert trace.max_distance() < 1e-2

    def test_perturbed_breather(self, breather):
        delta = 1e-3
        trace = orbital_stability_run(breather, delta, 20 * breather.period, seed=11, samples=4096)
        u0, _ = breather.initial_state()
        assert trace.max_distance() < 10 * delta * (1 + np.linalg.norm(u0))
        assert trace.relative_H_oscillation() < 1e-4
        G0 = trace.G_values[0]
        assert trace.max_G_variation() <= 1.5 * breather.eps * abs(breather.params.omega) * G0
        assert list(trace.to_frame().columns) == ["t", "H", "G", "Z1", "distance"]

    def test_seed_determinism(self, breather):
        a = orbital_stability_run(breather, 1e-3, breather.period, seed=3)
        b = orbital_stability_run(breather, 1e-3, breather.period, seed=3)
        assert a.G_values == b.G_values
        assert a.seed == 3

    def test_bad_arguments(self, breather):
        with pytest.raises(ValueError, match="nonnegative"):
            orbital_stability_run(breather, -1.0, 1.0)
        with pytest.raises(ValueError, match="T_final"):
            orbital_stability_run(breather, 1e-3, 0.0)

    def test_ensemble(self, breather):
        traces = ensemble_stability(breather, 1e-3, breather.period, seeds=[1, 2], threads=2)
        assert [t.seed for t in traces] == [1, 2]
        assert traces[0].G_values != traces[1].G_values
