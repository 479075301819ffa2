"""Experiment configuration schema (JSON), with defaults for every field."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .bnn import HyperParams
from .continual import DEFAULT_BETAS, DEFAULT_HIDDEN, DEFAULT_LEARNING_RATES, GridSpec
from .data import SyntheticTaskSpec


class ConfigError(Exception):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticConfig(_Strict):
    num_classes: int = Field(ge=1)
    samples_per_class: int = Field(ge=1)
    feature_dim: int = Field(ge=1)
    cluster_separation: float = Field(default=4.0, ge=0)
    cluster_scale: float = Field(default=1.0, gt=0)
    seed: int = Field(default=0, ge=0)

    def to_spec(self, name: str) -> SyntheticTaskSpec:
        return SyntheticTaskSpec(name=name, **self.model_dump())


class TaskConfig(_Strict):
    name: str = Field(min_length=1)
    path: Optional[str] = None
    synthetic: Optional[SyntheticConfig] = None

    @model_validator(mode="after")
    def _one_source(self):
        if self.path is None and self.synthetic is None:
            raise ValueError(f"task {self.name!r} needs either 'path' or 'synthetic'")
        return self


class HyperConfig(_Strict):
    learning_rate: float = Field(default=0.001, gt=0)
    beta: float = Field(default=0.1, ge=0, le=1)
    epochs: int = Field(default=120, ge=0)
    batch_size: int = Field(default=128, ge=1)
    s_train: int = Field(default=10, ge=1)
    s_test: int = Field(default=100, ge=1)
    prior_sigma: float = Field(default=1.0, gt=0)
    init_log_sigma: float = -6.0
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)

    def to_hyper(self) -> HyperParams:
        return HyperParams(**self.model_dump())


class GridConfig(_Strict):
    learning_rates: list[float] = Field(default_factory=lambda: list(DEFAULT_LEARNING_RATES), min_length=1)
    betas: list[float] = Field(default_factory=lambda: list(DEFAULT_BETAS), min_length=1)

    @field_validator("learning_rates")
    @classmethod
    def _positive(cls, v):
        if any(x <= 0 for x in v):
            raise ValueError("learning rates must be positive")
        return v

    @field_validator("betas")
    @classmethod
    def _unit(cls, v):
        if any(not 0 <= x <= 1 for x in v):
            raise ValueError("betas must lie in [0, 1]")
        return v

    def to_grid(self) -> GridSpec:
        return GridSpec(tuple(self.learning_rates), tuple(self.betas))


class SplitConfig(_Strict):
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = Field(default=0, ge=0)


class ExperimentConfig(_Strict):
    tasks: list[TaskConfig] = Field(min_length=1)
    orders: Optional[list[list[str]]] = None
    hidden_sizes: list[int] = Field(default_factory=lambda: list(DEFAULT_HIDDEN), min_length=1)
    hyper: HyperConfig = Field(default_factory=HyperConfig)
    grid: GridConfig = Field(default_factory=GridConfig)
    reference_grid: Optional[GridConfig] = None
    seeds: list[int] = Field(default_factory=lambda: [0], min_length=1)
    split: SplitConfig = Field(default_factory=SplitConfig)
    standardize: bool = True
    threads: Optional[int] = Field(default=None, ge=1)
    keep_checkpoints: bool = False

    @field_validator("hidden_sizes")
    @classmethod
    def _widths(cls, v):
        if any(h < 1 for h in v):
            raise ValueError("hidden sizes must be positive")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds(cls, v):
        if any(s < 0 for s in v):
            raise ValueError("seeds must be non-negative")
        return v

    @model_validator(mode="after")
    def _orders(self):
        names = [t.name for t in self.tasks]
        if len(set(names)) != len(names):
            raise ValueError("task names must be unique")
        for order in self.orders or []:
            if sorted(order) != sorted(set(order)) or not set(order) <= set(names) or not order:
                raise ValueError(f"order {order} must list distinct known task names")
        return self

    def task_orders(self) -> list[list[str]]:
        return self.orders or [[t.name for t in self.tasks]]

    def effective(self) -> dict:
        """Defaults-merged config as embedded in output documents; execution
        knobs that cannot change results are left out."""
        return self.model_dump(mode="json", exclude={"threads", "keep_checkpoints"})


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        problems = "; ".join(f"{'.'.join(str(p) for p in e['loc'])}: {e['msg']}" for e in exc.errors())
        raise ConfigError(f"invalid config: {problems}") from None
