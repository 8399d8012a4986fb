from __future__ import annotations

from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from .data import SCENARIOS, DomainSpec, Scenario, default_domains
from .exceptions import ConfigError, SpecError
from .losses import KernelConfig, LossWeights
from .models import ModelSpec, desk_spec
from .trainer import TrainConfig
from .types import Preset


class DataSettings(BaseModel):
    """
    Synthetic benchmark generation. The defaults are full scale: windows of 1024 samples.
    """

    model_config = ConfigDict(extra="forbid")

    window_len: int = Field(1024, ge=8)
    sample_rate: float = Field(16384.0, gt=0.0)
    n_per_class: int = Field(200, ge=1)
    seed: int = 0
    """Generation seed, independent of the training seeds."""
    domains: dict[str, DomainSpec] = Field(default_factory=default_domains)


class LossSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    weights: LossWeights = LossWeights()
    kernel: KernelConfig = KernelConfig()


class ScenarioSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    order: Literal["1", "2", "3", "all"] = "1"
    """Which domain ordering to run; `all` runs every ordering in `scenarios`."""
    scenarios: dict[str, Scenario] = Field(default_factory=lambda: dict(SCENARIOS))

    def selected(self) -> list[Scenario]:
        if self.order == "all":
            return [self.scenarios[name] for name in sorted(self.scenarios)]
        if self.order not in self.scenarios:
            raise ConfigError(f"Unknown scenario {self.order!r}.")
        return [self.scenarios[self.order]]


class EverAdaptSettings(BaseSettings):
    """
    All configuration of a run, read from environment variables prefixed `EVERADAPT_`.

    Nested fields use `__`, e.g. `EVERADAPT_TRAIN__EPOCHS=5`. Environment variables take
    precedence over values passed in code or read from a config file.
    """

    model_config = SettingsConfigDict(
        env_prefix="EVERADAPT_", env_nested_delimiter="__", extra="forbid"
    )

    data: DataSettings = Field(default_factory=DataSettings)
    model: ModelSpec = Field(default_factory=ModelSpec)
    train: TrainConfig = Field(default_factory=TrainConfig)
    losses: LossSettings = Field(default_factory=LossSettings)
    scenario: ScenarioSettings = Field(default_factory=ScenarioSettings)
    out: Path = Path("everadapt-out")
    """Default output root."""
    seeds: int = Field(5, ge=1)
    workers: int = Field(1, ge=1)
    """Threads running seeds in parallel."""
    log_level: str = "INFO"

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        return env_settings, init_settings

    def build_spec(self) -> ModelSpec:
        """The model spec with input length, class count and norm mode aligned to the run."""
        classes = {len(domain.classes) for domain in self.data.domains.values()}
        spec = ModelSpec.model_validate(
            {
                **self.model.model_dump(),
                "input_length": self.data.window_len,
                "num_classes": max(classes, default=self.model.num_classes),
                "norm_mode": self.train.norm_mode,
            }
        )
        try:
            spec.stage_lengths()
        except SpecError as exc:
            raise ConfigError(str(exc), errors=[f"model: {exc}"]) from exc
        return spec

    def build_train_config(self, seed: int, **overrides: Any) -> TrainConfig:
        """The train section for one seed, with the loss section folded in."""
        payload = {
            **self.train.model_dump(),
            "seed": seed,
            "loss_weights": self.losses.weights.model_dump(),
            "kernel": self.losses.kernel.model_dump(),
            **overrides,
        }
        try:
            return TrainConfig.model_validate(payload)
        except ValidationError as exc:
            raise ConfigError.from_validation_error(exc, prefix="train") from exc


def desk_preset() -> dict[str, Any]:
    """
    Overrides that shrink the benchmark to desk scale: 128-sample windows, the small backbone,
    10 epochs per domain and momentum 0.9 on top of the full-scale learning rate.
    """
    return {
        "data": {"window_len": 128, "sample_rate": 2048.0},
        "model": desk_spec().model_dump(mode="json"),
        "train": {
            "epochs": 10,
            "batch_size": 32,
            "lr": 1e-3,
            "momentum": 0.9,
            "eval_batch_size": 256,
        },
    }


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_settings(
    path: str | Path | None = None, *, preset: Preset = "desk", **overrides: Any
) -> EverAdaptSettings:
    """
    Build settings from a preset, an optional TOML file and keyword overrides, in that order.

    Raises:
        ConfigError: If the file is missing or malformed or a value is invalid.
    """
    payload: dict[str, Any] = desk_preset() if preset == "desk" else {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Config file {path} does not exist.")
        try:
            from_file = TomlConfigSettingsSource(EverAdaptSettings, toml_file=path)()
        except ValueError as exc:
            raise ConfigError(f"Config file {path} is not valid TOML: {exc}") from exc
        payload = deep_merge(payload, from_file)
    payload = deep_merge(payload, overrides)
    try:
        return EverAdaptSettings(**payload)
    except ValidationError as exc:
        raise ConfigError.from_validation_error(exc) from exc


def get_settings() -> EverAdaptSettings:
    """The active settings of the package, honoring `monkay.with_settings` overrides."""
    from everadapt import monkay

    return monkay.settings
