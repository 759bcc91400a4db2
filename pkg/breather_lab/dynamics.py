"""
Breather Lab: Lattice Dynamics
==============================

Explicit symplectic integration of the scaled Klein-Gordon lattice

    H = 1/2 sum (u^2 + v^2) + eps/(2p+2) sum u^(2p+2) - eps/2 u.Delta u

with the diagnostics used by the long-time experiments: the energy H,
the harmonic action G, the first-order normal form Z_1, orbital distance
to a sampled breather orbit, and the linearized (tangent) flow with its
Krein form and monodromy.

Each lattice edge enters the coupling energy once, which makes the
force exactly  -u - eps u^(2p+1) + eps Delta u.
"""

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from breather_lab.config import dynamics as dynamics_config
from breather_lab.config import run as run_config
from breather_lab.dnls import gamma_p
from breather_lab.lattice import RealField, laplacian_matrix

logger = logging.getLogger(__name__)

# Drift (c) and kick (d) weights of symmetric compositions; a drift of
# c*h on u is followed by a kick of d*h on v.
VERLET = ([0.0, 1.0], [0.5, 0.5])

_CBRT2 = 2.0 ** (1.0 / 3.0)
_B = 2.0 - _CBRT2
FOREST_RUTH = (
    [0.5 / _B, 0.5 * (1.0 - _CBRT2) / _B, 0.5 * (1.0 - _CBRT2) / _B, 0.5 / _B],
    [1.0 / _B, -_CBRT2 / _B, 1.0 / _B, 0.0],
)

SCHEMES = {2: VERLET, 4: FOREST_RUTH}


@dataclass(frozen=True, eq=False)
class PhaseState:
    u: RealField
    v: RealField
    time: float = 0.0

    def __post_init__(self):
        if self.u.grid != self.v.grid:
            raise ValueError("u and v must live on the same grid")

    @property
    def grid(self):
        return self.u.grid

    def vector(self) -> np.ndarray:
        return np.concatenate([self.u.values, self.v.values])


@dataclass
class StabilityTrace:
    times: List[float] = field(default_factory=list)
    H_values: List[float] = field(default_factory=list)
    G_values: List[float] = field(default_factory=list)
    Z1_values: List[float] = field(default_factory=list)
    orbital_distance: List[float] = field(default_factory=list)
    seed: Optional[int] = None
    delta: float = 0.0
    step: float = 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "t": self.times,
            "H": self.H_values,
            "G": self.G_values,
            "Z1": self.Z1_values,
            "distance": self.orbital_distance,
        })

    def max_distance(self) -> float:
        return float(np.max(self.orbital_distance))

    def relative_H_oscillation(self) -> float:
        H = np.asarray(self.H_values)
        return float(np.max(np.abs(H - H[0])) / abs(H[0]))

    def max_G_variation(self) -> float:
        G = np.asarray(self.G_values)
        return float(np.max(np.abs(G - G[0])))


# ------------------------------------------------------------------
# Flow
# ------------------------------------------------------------------

def _force_fn(grid, eps: float, p: int) -> Callable[[np.ndarray], np.ndarray]:
    lap = laplacian_matrix(grid)

    def force(u: np.ndarray) -> np.ndarray:
        return -u - eps * u ** (2 * p + 1) + eps * (lap @ u)

    return force


def _advance(u: np.ndarray, v: np.ndarray, force, h: float, scheme) -> Tuple[np.ndarray, np.ndarray]:
    drifts, kicks = scheme
    for c, d in zip(drifts, kicks):
        if c:
            u = u + c * h * v
        if d:
            v = v + d * h * force(u)
    return u, v


def step(state: PhaseState, eps: float, p: int, h: float, order: int = 2) -> PhaseState:
    """One kick-drift-kick step (order 2) or a fourth-order symmetric composition."""
    if h == 0:
        raise ValueError("Step size must be nonzero")
    scheme = SCHEMES[order]
    u, v = _advance(state.u.values, state.v.values, _force_fn(state.grid, eps, p), h, scheme)
    return PhaseState(RealField(state.grid, u), RealField(state.grid, v), state.time + h)


def integrate(state: PhaseState, eps: float, p: int, h: float, n_steps: int, order: int = 2) -> PhaseState:
    scheme = SCHEMES[order]
    force = _force_fn(state.grid, eps, p)
    u, v = state.u.values, state.v.values
    for _ in range(n_steps):
        u, v = _advance(u, v, force, h, scheme)
    return PhaseState(RealField(state.grid, u), RealField(state.grid, v), state.time + n_steps * h)


# ------------------------------------------------------------------
# Conserved and almost conserved quantities
# ------------------------------------------------------------------

def _hamiltonian_values(u: np.ndarray, v: np.ndarray, lap, eps: float, p: int) -> float:
    quadratic = 0.5 * float(np.dot(u, u) + np.dot(v, v))
    onsite = eps / (2 * p + 2) * float(np.sum(u ** (2 * p + 2)))
    coupling = -0.5 * eps * float(np.dot(u, lap @ u))
    return quadratic + onsite + coupling


def hamiltonian(state: PhaseState, eps: float, p: int) -> float:
    return _hamiltonian_values(state.u.values, state.v.values, laplacian_matrix(state.grid), eps, p)


def almost_invariant_G(state: PhaseState) -> float:
    u, v = state.u.values, state.v.values
    return 0.5 * float(np.dot(u, u) + np.dot(v, v))


def _z1_values(u: np.ndarray, v: np.ndarray, lap, eps: float, p: int) -> float:
    zeta = (u - 1j * v) / math.sqrt(2.0)
    coefficient = eps * gamma_p(p) / 2 ** p / (2 * p + 2)
    onsite = coefficient * float(np.sum(np.abs(zeta) ** (2 * p + 2)))
    coupling = -0.5 * eps * float(np.vdot(zeta, lap @ zeta).real)
    return onsite + coupling


def normal_form_energy_Z1(state: PhaseState, eps: float, p: int) -> float:
    """First-order resonant normal form evaluated at zeta = (u - i v)/sqrt(2)."""
    return _z1_values(state.u.values, state.v.values, laplacian_matrix(state.grid), eps, p)


# ------------------------------------------------------------------
# Linearized flow
# ------------------------------------------------------------------

def _tangent_force(u: np.ndarray, lap, eps: float, p: int):
    stiffness = 1.0 + eps * (2 * p + 1) * u ** (2 * p)

    def apply(w: np.ndarray) -> np.ndarray:
        if w.ndim == 1:
            return -stiffness * w + eps * (lap @ w)
        return -stiffness[:, None] * w + eps * (lap @ w)

    return apply


def linearized_step(state: PhaseState, w_u: np.ndarray, w_v: np.ndarray, eps: float, p: int,
                    h: float) -> Tuple[PhaseState, np.ndarray, np.ndarray]:
    """Kick-drift-kick step of the state together with its tangent vectors (1-D or column blocks)."""
    lap = laplacian_matrix(state.grid)
    force = _force_fn(state.grid, eps, p)
    u, v = state.u.values, state.v.values

    v = v + 0.5 * h * force(u)
    w_v = w_v + 0.5 * h * _tangent_force(u, lap, eps, p)(w_u)
    u = u + h * v
    w_u = w_u + h * w_v
    v = v + 0.5 * h * force(u)
    w_v = w_v + 0.5 * h * _tangent_force(u, lap, eps, p)(w_u)

    new_state = PhaseState(RealField(state.grid, u), RealField(state.grid, v), state.time + h)
    return new_state, w_u, w_v


def krein_form(w_u: np.ndarray, w_v: np.ndarray) -> float:
    """k(w) = i sum (w conj(w') - conj(w) w') for a complex tangent vector with w' = w_v."""
    return float(-2.0 * np.sum(w_u * np.conj(w_v)).imag)


def linearized_monodromy(state: PhaseState, eps: float, p: int, h: float, n_steps: int) -> np.ndarray:
    """(2n x 2n) tangent map of n_steps Verlet steps starting from ``state``."""
    n = state.grid.size
    w_u = np.hstack([np.eye(n), np.zeros((n, n))])
    w_v = np.hstack([np.zeros((n, n)), np.eye(n)])
    current = state
    for _ in range(n_steps):
        current, w_u, w_v = linearized_step(current, w_u, w_v, eps, p, h)
    return np.vstack([w_u, w_v])


# ------------------------------------------------------------------
# Orbital stability
# ------------------------------------------------------------------

def orbital_distance(points: np.ndarray, z: np.ndarray) -> float:
    """Distance from z to the closest sampled orbit point (rows of ``points``)."""
    return float(np.min(np.linalg.norm(points - z[None, :], axis=1)))


def random_perturbation(size: int, delta: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    direction = rng.standard_normal(size)
    return delta * direction / np.linalg.norm(direction)


def orbital_stability_run(B, delta: float, T_final: float, h: Optional[float] = None,
                          seed: Optional[int] = None, samples: Optional[int] = None,
                          trace_samples: Optional[int] = None) -> StabilityTrace:
    """Integrate a perturbed breather and record H, G, Z_1 and orbital distance."""
    if delta < 0:
        raise ValueError(f"Perturbation size must be nonnegative, got {delta}")
    if T_final <= 0:
        raise ValueError(f"T_final must be positive, got {T_final}")
    samples = max(dynamics_config.orbit_samples, samples or 0)
    trace_samples = trace_samples or dynamics_config.trace_samples
    h = B.period / dynamics_config.steps_per_period if h is None else h
    seed = run_config.seed if seed is None else seed

    _, orbit_u, orbit_v = B.orbit(samples)
    points = np.hstack([orbit_u, orbit_v])
    u0, v0 = B.initial_state()
    n = B.grid.size
    perturbation = random_perturbation(2 * n, delta, seed) if delta > 0 else np.zeros(2 * n)
    u = u0 + perturbation[:n]
    v = v0 + perturbation[n:]

    lap = laplacian_matrix(B.grid)
    force = _force_fn(B.grid, B.eps, B.params.p)
    eps, p = B.eps, B.params.p
    n_steps = int(math.ceil(T_final / h))
    record_every = max(1, n_steps // trace_samples)
    trace = StabilityTrace(seed=seed, delta=delta, step=h)

    def record(k: int):
        trace.times.append(k * h)
        trace.H_values.append(_hamiltonian_values(u, v, lap, eps, p))
        trace.G_values.append(0.5 * float(np.dot(u, u) + np.dot(v, v)))
        trace.Z1_values.append(_z1_values(u, v, lap, eps, p))
        trace.orbital_distance.append(orbital_distance(points, np.concatenate([u, v])))

    logger.info(
        f"Stability run: eps={eps:g}, delta={delta:g}, T_final={T_final:g}, "
        f"h={h:.3e}, {n_steps} steps, seed={seed}"
    )
    record(0)
    for k in range(1, n_steps + 1):
        u, v = _advance(u, v, force, h, VERLET)
        if k % record_every == 0 or k == n_steps:
            record(k)
    logger.info(
        f"Stability run finished: max distance {trace.max_distance():.3e}, "
        f"relative H oscillation {trace.relative_H_oscillation():.2e}"
    )
    return trace


def ensemble_stability(B, delta: float, T_final: float, seeds: Sequence[int], h: Optional[float] = None,
                       threads: int = 1) -> List[StabilityTrace]:
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        return list(pool.map(lambda s: orbital_stability_run(B, delta, T_final, h, seed=s), seeds))
