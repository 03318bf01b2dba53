"""Experiment configuration schema (YAML or JSON), validated before any run."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BenchmarkConfig(_Strict):
    name: str = "linear_gaussian_1d"
    params: dict = Field(default_factory=dict)


class QuantizerConfig(_Strict):
    mode: Literal["explicit", "lyapunov"] = "lyapunov"
    k: int = Field(16, ge=1)
    half_width: Optional[float] = Field(None, gt=0)
    representatives: Literal["midpoint", "median"] = "midpoint"
    weighting: Literal["dirac", "uniform", "empirical"] = "dirac"

    @model_validator(mode="after")
    def _explicit_needs_width(self):
        if self.mode == "explicit" and self.half_width is None:
            raise ValueError("explicit mode needs half_width")
        return self


class SampleConfig(_Strict):
    samples_per_bin: int = Field(2000, ge=1)
    occupation: int = Field(100_000, ge=1)
    burn_in: int = Field(10_000, ge=0)


class ReferenceConfig(_Strict):
    k_ref: int = Field(1024, ge=2)
    half_width_ref: Optional[float] = Field(None, gt=0)
    samples_per_bin: int = Field(2000, ge=1)
    occupation: int = Field(200_000, ge=0)
    tolerance: Optional[float] = Field(None, gt=0)


class SyntheticSweep(_Strict):
    """Test mode: expected_loss = scale * M^exponent, no model is built."""

    exponent: float = -0.5
    scale: float = Field(1.0, gt=0)


class SweepConfig(_Strict):
    ks: list[int] = Field(default_factory=lambda: [4, 8, 16, 32, 64, 128])
    seeds: list[int] = Field(default_factory=lambda: [0])
    synthetic: Optional[SyntheticSweep] = None

    @field_validator("ks")
    @classmethod
    def _enough_points(cls, ks):
        if len(ks) < 3:
            raise ValueError("a sweep needs at least 3 k values")
        if len(set(ks)) != len(ks) or min(ks) < 1:
            raise ValueError("k values must be distinct positive integers")
        return ks


class LearningConfig(_Strict):
    iterations: int = Field(100_000, ge=1)
    exploration: Literal["uniform"] = "uniform"
    lengths: list[int] = Field(default_factory=list)
    model_occupation: int = Field(100_000, ge=1)
    model_samples_per_bin: int = Field(2000, ge=1)

    @model_validator(mode="after")
    def _lengths_fit(self):
        if any(L < 1 or L > self.iterations for L in self.lengths):
            raise ValueError("every entry of lengths must lie in [1, iterations]")
        return self


class ExperimentConfig(_Strict):
    benchmark: BenchmarkConfig = Field(default_factory=BenchmarkConfig)
    criterion: Literal["discounted", "average"] = "discounted"
    x0: Optional[list[float]] = None
    quantizer: QuantizerConfig = Field(default_factory=QuantizerConfig)
    samples: SampleConfig = Field(default_factory=SampleConfig)
    reference: ReferenceConfig = Field(default_factory=ReferenceConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    learning: LearningConfig = Field(default_factory=LearningConfig)
    seed: int = 0
    out: str = "results"


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{loc}: {e['msg']}")
    return "; ".join(parts)


def parse_config(data) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as err:
        raise ConfigError(_format_errors(err)) from None


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as err:
        raise ConfigError(f"cannot parse {path}: {err}") from None
    return parse_config(data)
