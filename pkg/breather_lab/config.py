"""
Breather Lab Configuration Module
=================================

Central numerical settings shared by the solvers, the spectral code,
the normal-form engine and the experiment driver.
Loads overrides from environment variables (and a repository .env file)
with sensible defaults.
"""

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

from dotenv import load_dotenv

env_path = Path(__file__).resolve().parent.parent / ".env"
load_dotenv(env_path)


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"Environment variable {name} must be an integer, got {raw!r}")


@dataclass
class NewtonConfig:
    """Newton iteration defaults for every nonlinear solve."""
    tol: float = 1e-12
    max_iter: int = 50
    damping: float = 0.5
    max_halvings: int = 30
    fd_step: float = 1e-6


@dataclass
class HarmonicConfig:
    """Fourier truncation of breathers."""
    extra_harmonics: int = 6          # M = 2p + extra
    tail_ratio: float = 1e-3
    max_doublings: int = 2
    max_eps: float = 0.1

    def default_cutoff(self, p: int) -> int:
        return 2 * p + self.extra_harmonics


@dataclass
class SpectrumConfig:
    """Thresholds for dNLS and Hill spectra."""
    krein_zero: float = 1e-8
    cluster_tol: float = 1e-6
    near_band: float = 1e-3
    jump_guard: float = 5.0
    match_ambiguity: float = 1e-3
    kernel_tol: float = 1e-6
    dimension_cap: int = 20000
    monodromy_cap: int = 400
    ode_rtol: float = 1e-12
    ode_atol: float = 1e-12

    def __post_init__(self):
        self.dimension_cap = _env_int("BREATHER_LAB_DIMENSION_CAP", self.dimension_cap)


@dataclass
class NormalFormConfig:
    """Caps and tolerances for the Lie-transform engine."""
    degree_cap: int = 16
    order_cap: int = 6
    term_cap: int = 200000
    exact_max_order: int = 4
    exact_max_radius: int = 10
    inverse_tol: float = 1e-12
    inverse_max_iter: int = 200
    orbit_samples: int = 256

    def __post_init__(self):
        self.term_cap = _env_int("BREATHER_LAB_TERM_CAP", self.term_cap)


@dataclass
class DynamicsConfig:
    """Time-stepping and stability-run sampling."""
    steps_per_period: int = 2000
    orbit_samples: int = 256
    trace_samples: int = 2000
    stability_delta: float = 1e-3
    stability_t_final: float = 1e5


@dataclass
class RunConfig:
    """Experiment driver settings."""
    output_root: str = "results"
    threads: int = 1
    seed: int = 12345
    eps_list: List[float] = field(default_factory=lambda: [0.02, 0.01, 0.005, 0.0025])

    def __post_init__(self):
        self.output_root = os.environ.get("BREATHER_LAB_OUTPUT", self.output_root)
        self.threads = _env_int("BREATHER_LAB_THREADS", self.threads)
        self.seed = _env_int("BREATHER_LAB_SEED", self.seed)


newton = NewtonConfig()
harmonics = HarmonicConfig()
spectrum = SpectrumConfig()
normal_form = NormalFormConfig()
dynamics = DynamicsConfig()
run = RunConfig()
