import logging
import os
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Iterator, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, Field
from pydantic_settings import BaseSettings, PydanticBaseSettingsSource, SettingsConfigDict

logger = logging.getLogger(__name__)

# Load .env into os.environ so QKDF_* overrides are visible to the settings sources
load_dotenv()


class NumericsConfig(BaseModel):
    sum_rel_tol: float = 1e-15
    max_terms: int = 1_000_000
    quad_tol: float = 1e-10
    quad_rel_tol: float = 1e-10
    quad_max_intervals: int = 4000


class HeterodyneConfig(BaseModel):
    default_method: str = "paper-literal"
    max_dimension: int = 100_000
    split: float = 0.5


class DpsConfig(BaseModel):
    default_method: str = "paper"
    max_cutoff: int = 100_000
    max_exact_count: int = 2**53


class HilbertConfig(BaseModel):
    max_total_dim: int = 4096
    complement_retries: int = 16
    clamp_tol: float = 1e-12
    zero_probability_tol: float = 1e-14
    hermitian_tol: float = 1e-12
    povm_tol: float = 1e-10
    complement_tol: float = 1e-10
    min_complement_norm: float = 1e-6
    verification_slack: float = 1e-9


class BudgetConfig(BaseModel):
    regime_factor: float = 100.0


class CliConfig(BaseModel):
    output_format: str = "json"
    workers: int = 1


class AuditConfig(BaseModel):
    enabled: bool = False
    database_url: str = "sqlite:///./data/audit.sqlite"


class LoggingConfig(BaseModel):
    level: str = "WARNING"


class AppConfig(BaseSettings):
    numerics: NumericsConfig = Field(default_factory=NumericsConfig)
    heterodyne: HeterodyneConfig = Field(default_factory=HeterodyneConfig)
    dps: DpsConfig = Field(default_factory=DpsConfig)
    hilbert: HilbertConfig = Field(default_factory=HilbertConfig)
    budget: BudgetConfig = Field(default_factory=BudgetConfig)
    cli: CliConfig = Field(default_factory=CliConfig)
    audit: AuditConfig = Field(default_factory=AuditConfig)
    logging: LoggingConfig = Field(default_factory=LoggingConfig)

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="QKDF_",
        env_nested_delimiter="__",
        extra="ignore",
    )

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # YAML arrives as init kwargs; environment wins over the file
        return env_settings, dotenv_settings, init_settings


def load_config(config_path: Optional[str] = None) -> AppConfig:
    config_path = config_path or os.getenv("QKDF_CONFIG", "config.yaml")
    yaml_data = {}
    if os.path.exists(config_path):
        with open(config_path, "r") as f:
            yaml_data = yaml.safe_load(f) or {}
    return AppConfig(**yaml_data)


# Section overrides active in the current context; the loaded settings are never mutated
_overrides: ContextVar[dict[str, BaseModel]] = ContextVar("qkdf_config_overrides", default={})


class ConfigView:
    """Read-only view of the loaded settings with the context's overrides applied."""

    def __init__(self, settings: AppConfig):
        self._settings = settings

    def __getattr__(self, name: str) -> Any:
        active = _overrides.get()
        if name in active:
            return active[name]
        return getattr(self._settings, name)

    def snapshot(self) -> AppConfig:
        """The effective settings as one model, e.g. to hand to worker processes."""
        return self._settings.model_copy(update=dict(_overrides.get()))


@contextmanager
def override(section: str, **values) -> Iterator[BaseModel]:
    """Replace fields of one config section for the current context; None values are ignored."""
    current = getattr(config, section)
    updates = {k: v for k, v in values.items() if v is not None}
    token = _overrides.set({**_overrides.get(), section: current.model_copy(update=updates)})
    try:
        yield getattr(config, section)
    finally:
        _overrides.reset(token)


try:
    _settings = load_config()
except Exception as e:
    logger.warning("Configuration load failed: %s. Using defaults.", e)
    _settings = AppConfig.model_construct(
        numerics=NumericsConfig(),
        heterodyne=HeterodyneConfig(),
        dps=DpsConfig(),
        hilbert=HilbertConfig(),
        budget=BudgetConfig(),
        cli=CliConfig(),
        audit=AuditConfig(),
        logging=LoggingConfig(),
    )

# Singleton instance
config = ConfigView(_settings)
