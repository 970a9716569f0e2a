import pytest
from prometheus_client import REGISTRY

from mixturecraft.config import Settings, get_settings
from mixturecraft.constructor import _resolve
from mixturecraft.errors import InvalidParameter
from mixturecraft.monitoring import monitored_construction, setup_logging
from mixturecraft.schemas import ConstructionOptions


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for name in ("QUAD_ORDER", "N_JOBS", "LOG_LEVEL", "LOG_FORMAT"):
        monkeypatch.delenv(f"MIXTURECRAFT_{name}", raising=False)


def sample(status):
    value = REGISTRY.get_sample_value("mixturecraft_constructions_total", {"mode": "probe", "status": status})
    return value or 0.0


class FakeMixture:
    components = (1, 2, 3)


class TestSettings:
    """Environment configuration"""

    def test_defaults(self):
        settings = get_settings()
        assert settings == Settings()
        assert settings.quad_order == 8
        assert settings.log_level == "WARNING"

    def test_overrides(self, monkeypatch):
        monkeypatch.setenv("MIXTURECRAFT_QUAD_ORDER", "12")
        monkeypatch.setenv("MIXTURECRAFT_LOG_LEVEL", "debug")
        monkeypatch.setenv("MIXTURECRAFT_LOG_FORMAT", "CONSOLE")
        settings = get_settings()
        assert settings.quad_order == 12
        assert settings.log_level == "DEBUG"
        assert settings.log_format == "console"

    @pytest.mark.parametrize("value", ["1", "eight"])
    def test_invalid_quad_order(self, monkeypatch, value):
        monkeypatch.setenv("MIXTURECRAFT_QUAD_ORDER", value)
        with pytest.raises(InvalidParameter, match="MIXTURECRAFT_QUAD_ORDER"):
            get_settings()

    def test_options_take_precedence(self, monkeypatch):
        monkeypatch.setenv("MIXTURECRAFT_QUAD_ORDER", "12")
        _, order, jobs = _resolve(ConstructionOptions(quad_order=4))
        assert order == 4
        _, order, jobs = _resolve(None)
        assert order == 12
        assert jobs == 1


class TestMonitoring:
    """Metrics and logging setup"""

    def test_success_is_counted(self):
        @monitored_construction("probe")
        def build():
            return FakeMixture(), {"ok": True}

        before = sample("success")
        mixture, report = build()
        assert report == {"ok": True}
        assert sample("success") == before + 1

    def test_failure_is_counted_and_raised(self):
        @monitored_construction("probe")
        def build():
            raise InvalidParameter("bad")

        before = sample("failure")
        with pytest.raises(InvalidParameter):
            build()
        assert sample("failure") == before + 1

    @pytest.mark.parametrize("fmt", ["json", "console"])
    def test_setup_logging(self, fmt):
        setup_logging("INFO", fmt)
        setup_logging("WARNING", "json")
