"""Tests for the configuration module."""

import pytest

from breather_lab.config import (
    NormalFormConfig,
    RunConfig,
    dynamics,
    harmonics,
    newton,
    normal_form,
    run,
    spectrum,
)


class TestNewtonConfig:
    def test_defaults(self):
        assert newton.tol == 1e-12
        assert newton.max_iter == 50
        assert 0 < newton.damping < 1


class TestHarmonicConfig:
    def test_cutoff_rule(self):
        assert harmonics.default_cutoff(1) == 8
        assert harmonics.default_cutoff(2) == 10

    def test_tail_ratio(self):
        assert harmonics.tail_ratio == 1e-3
        assert harmonics.max_doublings == 2


class TestSpectrumConfig:
    def test_thresholds(self):
        assert spectrum.krein_zero == 1e-8
        assert spectrum.cluster_tol == 1e-6
        assert spectrum.near_band == 1e-3
        assert spectrum.jump_guard == 5.0


class TestNormalFormConfig:
    def test_caps(self):
        assert normal_form.degree_cap >= 8
        assert normal_form.order_cap >= 3
        assert normal_form.inverse_tol == 1e-12

    def test_term_cap_from_env(self, monkeypatch):
        monkeypatch.setenv("BREATHER_LAB_TERM_CAP", "123")
        assert NormalFormConfig().term_cap == 123


class TestDynamicsConfig:
    def test_sampling(self):
        assert dynamics.steps_per_period == 2000
        assert dynamics.orbit_samples == 256


class TestRunConfig:
    def test_eps_list_decreasing(self):
        assert run.eps_list == sorted(run.eps_list, reverse=True)

    def test_env_overrides(self, monkeypatch):
        monkeypatch.setenv("BREATHER_LAB_OUTPUT", "/tmp/breathers")
        monkeypatch.setenv("BREATHER_LAB_THREADS", "4")
        monkeypatch.setenv("BREATHER_LAB_SEED", "7")
        config = RunConfig()
        assert config.output_root == "/tmp/breathers"
        assert config.threads == 4
        assert config.seed == 7

    def test_bad_integer(self, monkeypatch):
        monkeypatch.setenv("BREATHER_LAB_THREADS", "many")
        with pytest.raises(ValueError, match="BREATHER_LAB_THREADS"):
            RunConfig()
