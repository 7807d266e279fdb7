import json
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from oppspec.core.analytics import ClosedForm, RateMode
from oppspec.core.linkbudget import RadioEnv, calibrate_fbs_power, dbm_to_mw, noise_power_dbm
from oppspec.core.occupancy import ExpMixture, FitConfig
from oppspec.core.sensing import DetectorSpec
from oppspec.services.simkernel import Accounting, SearchOrder
from oppspec.utils.exceptions import ConfigError


LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Settings(BaseSettings):
    """Process settings loaded from environment variables."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore"
    )

    # Logging
    log_level: Optional[str] = Field(default=None, alias="LOG_LEVEL")

    # Sentry (optional)
    sentry_dsn: Optional[str] = Field(default=None, alias="SENTRY_DSN")

    # Environment
    debug: bool = Field(default=False, alias="DEBUG")
    environment: str = Field(default="development", alias="ENVIRONMENT")

    # Replication worker processes
    workers: int = Field(default=1, ge=1, alias="OPPSPEC_WORKERS")

    @field_validator("log_level")
    @classmethod
    def validate_log_level(cls, v: Optional[str]) -> Optional[str]:
        if v is None:
            return v
        v = v.upper()
        if v not in LOG_LEVELS:
            raise ValueError(f"LOG_LEVEL must be one of {', '.join(LOG_LEVELS)}")
        return v


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()


# Convenience export
settings = get_settings()


class _Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")


class ScenarioConfig(RadioEnv):
    """Radio environment; FBS power is recalibrated when calibrate_c0_mbps is set."""

    calibrate_c0_mbps: Optional[float] = Field(default=100.0, gt=0)

    def to_env(self) -> RadioEnv:
        env = RadioEnv(**self.model_dump(exclude={"calibrate_c0_mbps"}))
        if self.calibrate_c0_mbps is None:
            return env
        return calibrate_fbs_power(env, self.calibrate_c0_mbps * 1e6)


class DetectorConfig(_Section):
    target_pfa: float = Field(default=1e-3, gt=0, lt=1)
    sensing_time_ms: float = Field(default=20.0, gt=0)
    duty_cycle_prior: float = Field(default=0.5, ge=0, lt=1)

    def to_spec(self, env: RadioEnv) -> DetectorSpec:
        """Window bandwidth and per-sample noise power follow the scenario."""
        return DetectorSpec(
            target_pfa=self.target_pfa,
            sensing_time=self.sensing_time_ms / 1000.0,
            bandwidth=env.bandwidth_hz,
            noise_variance=float(dbm_to_mw(noise_power_dbm(env))),
            duty_cycle_prior=self.duty_cycle_prior,
        )


class PolicyConfig(_Section):
    """period_ms = None uses the optimized sensing period."""

    period_ms: Optional[float] = Field(default=None, gt=0)
    num_channels: int = Field(default=2, ge=1)
    search: SearchOrder = SearchOrder.ROUND_ROBIN
    accounting: Accounting = Accounting.CAPTURED


class FitSection(_Section):
    k: int = Field(default=8, ge=1)
    c1_s: Optional[float] = Field(default=None, gt=0)
    b: float = Field(default=2.0, gt=1)
    a: float = 4.0

    def to_fit_config(self) -> FitConfig:
        return FitConfig(k=self.k, c1=self.c1_s, b=self.b, a=self.a)


class AnalysisConfig(_Section):
    """Sensing-period range defaults to [t_s, 100 x longest mean dwell]."""

    mode: RateMode = RateMode.QUADRATURE
    closed_form: ClosedForm = ClosedForm.CLASSIC
    t_min_ms: Optional[float] = Field(default=None, gt=0)
    t_max_s: Optional[float] = Field(default=None, gt=0)
    grid_points: int = Field(default=200, ge=3)
    target_drop: Optional[float] = Field(default=None, gt=0, lt=1)


class TraceSource(str, Enum):
    MODEL = "model"
    TRACE = "trace"


class SimulationConfig(_Section):
    periods: int = Field(default=100_000, ge=10_000)
    replications: int = Field(default=1, ge=1)
    source: TraceSource = TraceSource.MODEL
    senseless_slot_ms: float = Field(default=200.0, gt=0)
    cdf_points: int = Field(default=201, ge=2)


class SweepConfig(_Section):
    max_channels: int = Field(default=5, ge=1)
    searches: tuple[SearchOrder, ...] = (SearchOrder.ROUND_ROBIN, SearchOrder.WIDEBAND)
    percentiles: tuple[float, ...] = (5.0, 10.0, 50.0, 90.0, 95.0)


class SynthesisConfig(_Section):
    hours: float = Field(default=4.0, gt=0)
    sweep_period_ms: float = Field(default=30.0, gt=0)
    snr_db: float = 16.0


class OracleConfig(_Section):
    periods_ms: tuple[float, ...] = (50.0, 100.0, 200.0, 500.0, 1000.0, 2000.0)
    dwells: int = Field(default=1_000_000, ge=1000)


class ChannelSource(_Section):
    """Exactly one of: a model file, a power trace, a pair of dwell files, inline mixtures."""

    model: Optional[Path] = None
    power_trace: Optional[Path] = None
    sweep_period_ms: Optional[float] = Field(default=None, gt=0)
    dwells_on: Optional[Path] = None
    dwells_off: Optional[Path] = None
    on: Optional[ExpMixture] = None
    off: Optional[ExpMixture] = None

    @model_validator(mode="after")
    def check_single_kind(self) -> "ChannelSource":
        kinds = [
            self.model is not None,
            self.power_trace is not None,
            self.dwells_on is not None or self.dwells_off is not None,
            self.on is not None or self.off is not None,
        ]
        if sum(kinds) != 1:
            raise ValueError("channel source needs exactly one of model, power_trace, dwells_on/dwells_off, on/off")
        if (self.dwells_on is None) != (self.dwells_off is None):
            raise ValueError("dwells_on and dwells_off must be given together")
        if (self.on is None) != (self.off is None):
            raise ValueError("inline on and off mixtures must be given together")
        if self.sweep_period_ms is not None and self.power_trace is None:
            raise ValueError("sweep_period_ms only applies to power_trace sources")
        return self

    @property
    def files(self) -> list[Path]:
        return [p for p in (self.model, self.power_trace, self.dwells_on, self.dwells_off) if p is not None]

    def resolved(self, base: Path) -> "ChannelSource":
        update = {
            name: (base / value).resolve()
            for name in ("model", "power_trace", "dwells_on", "dwells_off")
            if (value := getattr(self, name)) is not None
        }
        return self.model_copy(update=update)


class RunConfig(_Section):
    """One run: scenario, detector, policy and per-command settings."""

    scenario: ScenarioConfig = ScenarioConfig()
    detector: DetectorConfig = DetectorConfig()
    policy: PolicyConfig = PolicyConfig()
    fit: FitSection = FitSection()
    analysis: AnalysisConfig = AnalysisConfig()
    simulation: SimulationConfig = SimulationConfig()
    sweep: SweepConfig = SweepConfig()
    synthesis: SynthesisConfig = SynthesisConfig()
    oracle: OracleConfig = OracleConfig()
    channels: tuple[ChannelSource, ...] = Field(..., min_length=1)
    seed: int = Field(default=0, ge=0)
    output_dir: Path = Path("out")

    def echo(self) -> str:
        """Compact JSON echo embedded in reports."""
        return self.model_dump_json()


def load_run_config(path: Union[str, Path]) -> RunConfig:
    """
    Load and validate a JSON run configuration.

    Relative file references resolve against the config file's directory.

    Raises:
        ConfigError: unreadable or invalid file, or a missing referenced file
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}")

    try:
        cfg = RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {e}")

    base = path.parent.resolve()
    channels = tuple(source.resolved(base) for source in cfg.channels)
    missing = [str(p) for source in channels for p in source.files if not p.is_file()]
    if missing:
        raise ConfigError(f"{path}: referenced files not found: {', '.join(missing)}")
    return cfg.model_copy(update={"channels": channels, "output_dir": (base / cfg.output_dir).resolve()})
