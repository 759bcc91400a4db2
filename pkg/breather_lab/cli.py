"""
Breather Lab Experiment Driver
==============================

Runs one named experiment from a dotenv-style config file, writes the
artifacts (manifest.json, CSV tables, field and polynomial dumps) into
<out>/<experiment>/ and returns a process exit code:

    0 success, 2 config invalid, 3 solver failure, 4 size cap exceeded

Config keys use dotted sections, e.g.

    experiment=bounds
    physics.p=1
    physics.omega_tilde=5
    physics.eps_list=0.02,0.01,0.005,0.0025
    numerics.M=8
    normal_form.order=2

Usage:
    python -m breather_lab.cli bounds --config bounds.env --out results
    python -m breather_lab.cli validate --config bounds.env
"""

import argparse
import dataclasses
import logging
import sys
import typing
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd
from dotenv import dotenv_values

from breather_lab import dnls, dynamics, kg_breather, kg_spectrum, normal_form
from breather_lab.config import dynamics as dynamics_config
from breather_lab.config import harmonics as harmonic_config
from breather_lab.config import normal_form as nf_config
from breather_lab.config import run as run_config
from breather_lab.errors import BreatherLabError, ConfigInvalid, EigenSolverFailure
from breather_lab.lattice import Boundary, LatticeGrid
from breather_lab.storage import atomic_write_text, get_output_root, write_field, write_json, write_table

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)

DEFAULT_OMEGA_TILDE = 5.0


class Experiment(str, Enum):
    SOLVE_SOLITON = "soliton"
    POWER_CURVE = "power-curve"
    SOLVE_BREATHER = "breather"
    BOUND_SWEEP = "bounds"
    SPECTRUM_SWEEP = "spectrum"
    NORMAL_FORM = "normal-form"
    STABILITY_RUN = "stability"


class Profile(str, Enum):
    SINGLE = "single"
    TWO_SITE_IN_PHASE = "two-site-in"
    TWO_SITE_OUT_OF_PHASE = "two-site-out"


@dataclass
class PhysicsSection:
    d: int = 1
    N: int = 12
    p: int = 1
    boundary: str = "dirichlet"
    omega_tilde: Optional[float] = None    # focusing frame
    omega: Optional[float] = None          # defocusing frame
    profile: str = "single"
    eps: float = 0.05
    eps_list: List[float] = field(default_factory=lambda: list(run_config.eps_list))
    omega_tilde_list: List[float] = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])

    def resolved_omega_tilde(self) -> Optional[float]:
        """Focusing frequency in use; None when the run is posed in the defocusing frame."""
        if self.omega_tilde is not None:
            return self.omega_tilde
        if self.omega is not None:
            return None
        return DEFAULT_OMEGA_TILDE

    def stationary_omega(self) -> float:
        omega_tilde = self.resolved_omega_tilde()
        if omega_tilde is None:
            return self.omega
        return -4.0 * self.d - omega_tilde


@dataclass
class NumericsSection:
    M: Optional[int] = None
    M_spec: int = 8
    tol: float = 1e-12
    h: Optional[float] = None
    return_check: bool = True


@dataclass
class NormalFormSection:
    order: int = 1
    radius: float = 1.0
    shrink: float = 0.25
    exact: Optional[bool] = None


@dataclass
class StabilitySection:
    delta: float = dynamics_config.stability_delta
    T_final: float = dynamics_config.stability_t_final


@dataclass
class ExperimentConfig:
    experiment: Experiment = Experiment.SOLVE_SOLITON
    physics: PhysicsSection = field(default_factory=PhysicsSection)
    numerics: NumericsSection = field(default_factory=NumericsSection)
    normal_form: NormalFormSection = field(default_factory=NormalFormSection)
    stability: StabilitySection = field(default_factory=StabilitySection)
    output_dir: str = field(default_factory=lambda: str(get_output_root()))
    seed: int = field(default_factory=lambda: run_config.seed)
    threads: int = field(default_factory=lambda: run_config.threads)

    @property
    def run_dir(self) -> Path:
        return Path(self.output_dir) / self.experiment.value

    def to_dict(self) -> dict:
        payload = dataclasses.asdict(self)
        payload["experiment"] = self.experiment.value
        return payload


SECTIONS = ("physics", "numerics", "normal_form", "stability")
TOP_LEVEL = ("experiment", "output_dir", "seed", "threads")


# ------------------------------------------------------------------
# Loading
# ------------------------------------------------------------------

def _coerce(raw: str, annotation):
    """Convert a config string to the annotated field type."""
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        inner = [a for a in typing.get_args(annotation) if a is not type(None)][0]
        if raw.strip().lower() in ("", "none", "null"):
            return None
        return _coerce(raw, inner)
    if origin in (list, List):
        inner = typing.get_args(annotation)[0]
        return [_coerce(item.strip(), inner) for item in raw.split(",") if item.strip()]
    if annotation is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if annotation is Experiment:
        return Experiment(raw.strip())
    return annotation(raw.strip())


def config_from_mapping(values: Dict[str, Optional[str]], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Apply flat dotted keys to a config; unknown keys and bad values raise ConfigInvalid."""
    config = base or ExperimentConfig()
    violations = []
    top_hints = typing.get_type_hints(ExperimentConfig)
    for key, raw in values.items():
        raw = "" if raw is None else raw
        section_name, _, name = key.partition(".")
        try:
            if not name:
                if key not in TOP_LEVEL:
                    violations.append(f"unknown key {key!r}")
                    continue
                setattr(config, key, _coerce(raw, top_hints[key]))
                continue
            if section_name not in SECTIONS:
                violations.append(f"unknown section {section_name!r} in {key!r}")
                continue
            section = getattr(config, section_name)
            hints = typing.get_type_hints(type(section))
            if name not in hints:
                violations.append(f"unknown key {key!r}")
                continue
            setattr(section, name, _coerce(raw, hints[name]))
        except ValueError as e:
            violations.append(f"bad value for {key!r}: {e}")
    if violations:
        raise ConfigInvalid(violations)
    return config


def load_config(path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None) -> ExperimentConfig:
    values: Dict[str, Optional[str]] = {}
    if path:
        if not Path(path).exists():
            raise ConfigInvalid(f"config file {path} does not exist")
        values.update(dotenv_values(path))
    values.update(overrides or {})
    return config_from_mapping(values)


# ------------------------------------------------------------------
# Validation
# ------------------------------------------------------------------

def validate(config: ExperimentConfig) -> List[str]:
    """Human-readable precondition violations; empty when the config can run."""
    violations = []
    ph, nu, nf, st = config.physics, config.numerics, config.normal_form, config.stability

    if ph.d < 1:
        violations.append(f"physics.d must be >= 1, got {ph.d}")
    if ph.N < 1:
        violations.append(f"physics.N must be >= 1, got {ph.N}")
    if ph.p < 1:
        violations.append(f"physics.p must be >= 1, got {ph.p}")
    if ph.boundary not in {b.value for b in Boundary}:
        violations.append(f"physics.boundary must be one of {[b.value for b in Boundary]}, got {ph.boundary!r}")
    if ph.profile not in {p.value for p in Profile}:
        violations.append(f"physics.profile must be one of {[p.value for p in Profile]}, got {ph.profile!r}")

    Omega = ph.stationary_omega()
    if ph.omega_tilde is not None and ph.omega is not None:
        violations.append("set only one of physics.omega_tilde or physics.omega")
    if -4.0 * ph.d <= Omega <= 0.0:
        violations.append(f"Omega = {Omega:g} lies in the continuous band [{-4 * ph.d}, 0]")

    eps_values = [ph.eps]
    if config.experiment in (Experiment.BOUND_SWEEP, Experiment.SPECTRUM_SWEEP, Experiment.NORMAL_FORM):
        eps_values = list(ph.eps_list)
        if not eps_values:
            violations.append("physics.eps_list must not be empty")
        if any(b >= a for a, b in zip(eps_values, eps_values[1:])):
            violations.append("physics.eps_list must be strictly decreasing")
        if any(e <= 0 or e >= harmonic_config.max_eps for e in eps_values):
            violations.append(f"physics.eps_list values must lie in (0, {harmonic_config.max_eps})")
    for eps in eps_values:
        if eps < 0:
            violations.append(f"eps must be nonnegative, got {eps}")
        elif 1.0 - eps * Omega <= 0.0:
            violations.append(f"InvalidFrequency: 1 - eps*Omega = {1.0 - eps * Omega:g} <= 0 at eps={eps:g}")

    if config.experiment is Experiment.POWER_CURVE:
        if not ph.omega_tilde_list:
            violations.append("physics.omega_tilde_list must not be empty")
        if any(w <= 0 for w in ph.omega_tilde_list):
            violations.append("physics.omega_tilde_list values must be positive")

    if nu.M is not None and nu.M < 3:
        violations.append(f"numerics.M must be >= 3, got {nu.M}")
    if nu.M_spec < 1:
        violations.append(f"numerics.M_spec must be >= 1, got {nu.M_spec}")
    if nu.tol <= 0:
        violations.append(f"numerics.tol must be positive, got {nu.tol}")
    if nu.h is not None and nu.h == 0:
        violations.append("numerics.h must be nonzero")

    if not 1 <= nf.order <= nf_config.order_cap:
        violations.append(f"normal_form.order must lie in [1, {nf_config.order_cap}], got {nf.order}")
    if nf.radius <= 0:
        violations.append(f"normal_form.radius must be positive, got {nf.radius}")
    if not 0 < nf.shrink <= 0.25:
        violations.append(f"normal_form.shrink must lie in (0, 1/4], got {nf.shrink}")

    if st.delta < 0:
        violations.append(f"stability.delta must be nonnegative, got {st.delta}")
    if st.T_final <= 0:
        violations.append(f"stability.T_final must be positive, got {st.T_final}")
    if config.threads < 1:
        violations.append(f"threads must be >= 1, got {config.threads}")
    return violations


# ------------------------------------------------------------------
# Experiments
# ------------------------------------------------------------------

def _grid(config: ExperimentConfig) -> LatticeGrid:
    ph = config.physics
    return LatticeGrid(ph.d, ph.N, Boundary(ph.boundary))


def _params(config: ExperimentConfig) -> dnls.DnlsParams:
    ph = config.physics
    omega_tilde = ph.resolved_omega_tilde()
    if omega_tilde is not None:
        return dnls.DnlsParams.focusing_frame(ph.p, omega_tilde, ph.d)
    return dnls.DnlsParams(ph.p, ph.omega, ph.d)


def _soliton(config: ExperimentConfig) -> dnls.SolitonBranch:
    grid, params = _grid(config), _params(config)
    profile = Profile(config.physics.profile)
    if profile is Profile.SINGLE:
        seed = dnls.anticontinuum_seed(grid, params)
    else:
        seed = dnls.two_site_seed(grid, params, out_of_phase=profile is Profile.TWO_SITE_OUT_OF_PHASE)
    return dnls.solve_soliton(params, grid, seed, config.numerics.tol)


def _breather(config: ExperimentConfig, branch: dnls.SolitonBranch, eps: float) -> kg_breather.BreatherSolution:
    seed = kg_breather.seed_from_soliton(branch, eps, config.numerics.M)
    return kg_breather.solve_breather(seed, config.numerics.tol)


def run_soliton(config: ExperimentConfig, out: Path) -> dict:
    branch = _soliton(config)
    write_field(branch.amplitude, out / "amplitude.csv")
    write_field(branch.to_defocusing().amplitude, out / "amplitude_defocusing.csv")
    return {"soliton": branch.to_manifest(), "artifacts": ["amplitude.csv", "amplitude_defocusing.csv"]}


def run_power_curve(config: ExperimentConfig, out: Path) -> dict:
    ph = config.physics
    branches = dnls.continue_branch(_grid(config), ph.p, ph.omega_tilde_list, tol=config.numerics.tol)
    write_table(dnls.power_curve(branches), out / "power_curve.csv")
    return {"points": len(branches), "artifacts": ["power_curve.csv"]}


def run_breather(config: ExperimentConfig, out: Path) -> dict:
    branch = _soliton(config)
    B = _breather(config, branch, config.physics.eps)
    rows = []
    for m in range(B.M + 1):
        for index, value in enumerate(B.harmonics[m]):
            rows.append({"m": m, "site": index, "value": value})
    write_table(pd.DataFrame(rows, columns=["m", "site", "value"]), out / "harmonics.csv")
    summary = {
        "breather": B.to_manifest(),
        "energy": kg_breather.breather_energy(B),
        "tail_ok": kg_breather.tail_ok(B),
        "artifacts": ["harmonics.csv"],
    }
    if config.numerics.return_check:
        summary["return_map_error"] = kg_breather.time_domain_check(B)
    return summary


def run_bounds(config: ExperimentConfig, out: Path) -> dict:
    branch = _soliton(config)
    report = kg_breather.verify_bounds(
        branch, config.physics.eps_list, config.numerics.tol, config.numerics.M, config.threads
    )
    write_table(report.to_frame(), out / "bounds.csv")
    return {
        "fitted_slopes": report.fitted_slopes,
        "partial": report.partial,
        "failed_eps": report.failed,
        "artifacts": ["bounds.csv"],
    }


def run_spectrum(config: ExperimentConfig, out: Path) -> dict:
    branch = _soliton(config)
    pairs = dnls.dnls_spectrum(branch)
    write_table(dnls.spectrum_frame(pairs), out / "dnls_spectrum.csv")
    isolated = dnls.isolated_imaginary_pairs(pairs)
    if not isolated:
        raise EigenSolverFailure("No simple isolated imaginary dNLS eigenvalue to continue")
    target = isolated[0]
    report = kg_spectrum.verify_spectral_bounds(
        branch, target, config.physics.eps_list, config.numerics.M_spec,
        config.numerics.M, config.numerics.tol, config.threads,
    )
    write_table(report.to_frame(), out / "kg_spectrum.csv")
    return {
        "target_lambda": [target.lam.real, target.lam.imag],
        "target_krein": target.krein,
        "fitted_slopes": report.fitted_slopes,
        "max_real_part": report.max_real_part(),
        "krein_sign_constant": report.krein_sign_constant(),
        "persistent": report.persistent,
        "partial": report.partial,
        "failed_eps": report.failed,
        "artifacts": ["dnls_spectrum.csv", "kg_spectrum.csv"],
    }


def run_normal_form(config: ExperimentConfig, out: Path) -> dict:
    ph, nf = config.physics, config.normal_form
    grid = _grid(config)
    exact = nf.exact
    if exact is None:
        exact = (nf.order <= nf_config.exact_max_order and ph.N <= nf_config.exact_max_radius and ph.d == 1)
    degree_cap = max(nf_config.degree_cap, normal_form.required_degree(ph.p, nf.order + 1))
    H = normal_form.build_scaled_hamiltonian(grid, ph.p, ph.eps_list[0], exact=exact, degree_cap=degree_cap)
    budget = normal_form.NormalFormBudget(order=nf.order, ball_radius=nf.radius, shrink=nf.shrink)
    result = normal_form.lie_transform_normal_form(H, nf.order, budget, p=ph.p)

    artifacts = ["first_order.csv", "norms.csv"]
    for s, (Z, chi) in enumerate(zip(result.Z_list, result.chi_list), start=1):
        atomic_write_text(out / f"Z_{s}.txt", Z.to_text())
        atomic_write_text(out / f"chi_{s}.txt", chi.to_text())
        artifacts += [f"Z_{s}.txt", f"chi_{s}.txt"]
    constants = normal_form.normal_form_constants(budget, ph.d, ph.p, ph.eps_list[0])
    write_table(normal_form.first_order_table(result.Z_list[0], ph.p), out / "first_order.csv")
    write_table(normal_form.norm_table(result, constants), out / "norms.csv")

    gamma = normal_form.extracted_gamma(result.Z_list[0], ph.p)
    summary = {
        "exact": exact,
        "gamma": str(gamma.x) if exact else repr(gamma.real),
        "constants": constants,
        "remainder_norms": result.remainder_norms,
        "artifacts": artifacts,
    }
    if nf.order >= 2:
        table = normal_form.verify_generalized_soliton(_soliton(config), ph.eps_list, nf.order, config.numerics.M)
        write_table(table, out / "generalized_soliton.csv")
        artifacts.append("generalized_soliton.csv")
    return summary


def run_stability(config: ExperimentConfig, out: Path) -> dict:
    branch = _soliton(config)
    B = _breather(config, branch, config.physics.eps)
    trace = dynamics.orbital_stability_run(
        B, config.stability.delta, config.stability.T_final, config.numerics.h, seed=config.seed
    )
    write_table(trace.to_frame(), out / "trace.csv")
    return {
        "breather": B.to_manifest(),
        "max_distance": trace.max_distance(),
        "relative_H_oscillation": trace.relative_H_oscillation(),
        "max_G_variation": trace.max_G_variation(),
        "step": trace.step,
        "artifacts": ["trace.csv"],
    }


RUNNERS = {
    Experiment.SOLVE_SOLITON: run_soliton,
    Experiment.POWER_CURVE: run_power_curve,
    Experiment.SOLVE_BREATHER: run_breather,
    Experiment.BOUND_SWEEP: run_bounds,
    Experiment.SPECTRUM_SWEEP: run_spectrum,
    Experiment.NORMAL_FORM: run_normal_form,
    Experiment.STABILITY_RUN: run_stability,
}


def _write_error(config: ExperimentConfig, error: BreatherLabError):
    payload = {
        "error": type(error).__name__,
        "message": str(error),
        "exit_code": error.exit_code,
        "experiment": config.experiment.value,
    }
    if isinstance(error, ConfigInvalid):
        payload["violations"] = error.violations
    write_json(payload, config.run_dir / "error.json")


def run(config: ExperimentConfig) -> int:
    """Execute the configured experiment; returns the process exit code."""
    out = config.run_dir
    logger.info("=" * 60)
    logger.info(f"Breather Lab: {config.experiment.value}")
    logger.info("=" * 60)
    try:
        violations = validate(config)
        if violations:
            raise ConfigInvalid(violations)
        try:
            summary = RUNNERS[config.experiment](config, out)
        except ValueError as e:
            raise ConfigInvalid(str(e))
    except BreatherLabError as e:
        logger.error(f"{type(e).__name__}: {e}")
        _write_error(config, e)
        return e.exit_code

    manifest = {"config": config.to_dict(), "result": summary}
    write_json(manifest, out / "manifest.json")
    logger.info(f"Artifacts written to {out}")
    logger.info(f"{config.experiment.value} completed successfully")
    return 0


# ------------------------------------------------------------------
# Command line
# ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Breather Lab experiment driver")
    parser.add_argument("verb", choices=[e.value for e in Experiment] + ["validate"])
    parser.add_argument("--config", type=str, help="dotenv-style experiment file")
    parser.add_argument("--out", type=str, help="Output root directory")
    parser.add_argument("--seed", type=int, help="Random seed for perturbations")
    parser.add_argument("--threads", type=int, help="Worker threads for sweeps")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    overrides = {}
    if args.verb != "validate":
        overrides["experiment"] = args.verb
    if args.out:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.threads is not None:
        overrides["threads"] = str(args.threads)

    try:
        config = load_config(args.config, overrides)
    except ConfigInvalid as e:
        logger.error(f"ConfigInvalid: {e}")
        return e.exit_code

    if args.verb == "validate":
        violations = validate(config)
        for violation in violations:
            print(f"  - {violation}")
        if violations:
            return ConfigInvalid.exit_code
        print("Configuration is valid")
        return 0
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
