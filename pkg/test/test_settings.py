import pytest
from pydantic import ValidationError

from models import PipelineConfig
from settings import Settings, get_settings


@pytest.fixture
def fresh_settings():
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


def test_defaults(fresh_settings):
    settings = get_settings()
    assert settings.tau_conf_analytic == 1e-6
    assert settings.tau_conf_detector == 1e-2
    assert settings.degeneration_threshold == 10.0
    assert get_settings() is settings


def test_environment_overrides(fresh_settings, monkeypatch):
    monkeypatch.setenv("WILLMORE_WORKERS", "4")
    monkeypatch.setenv("WILLMORE_EPS_GEO", "1e-4")
    settings = get_settings()
    assert settings.workers == 4
    assert settings.eps_geo == 1e-4


def test_invalid_values_rejected(monkeypatch):
    monkeypatch.setenv("WILLMORE_WORKERS", "0")
    with pytest.raises(ValidationError):
        Settings()


def test_pipeline_config_environment(monkeypatch):
    monkeypatch.setenv("PIPELINE_EPSILON", "0.5")
    monkeypatch.setenv("PIPELINE_RESOLUTION", "32")
    config = PipelineConfig()
    assert config.epsilon == 0.5
    assert config.resolution == 32
