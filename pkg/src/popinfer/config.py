"""Experiment configuration: JSON documents validated with pydantic."""

import json
import logging
from importlib import resources
from pathlib import Path
from typing import Annotated, Any, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .errors import ConfigError, PopInferError
from .gaussian import GaussianDensity, make_gaussian
from .models import (
    DataGenerator,
    ForwardModel,
    UniformBox,
    get_model,
    make_data_generator,
    make_uniform_box,
)

logger = logging.getLogger("popinfer.config")

BUNDLED_CONFIG_PACKAGE = "popinfer.configs"


class GaussianSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["gaussian"] = "gaussian"
    mean: List[float]
    cov: List[List[float]]

    @model_validator(mode="after")
    def _check(self) -> "GaussianSpec":
        # make_gaussian checks shape, symmetry and positive definiteness
        try:
            make_gaussian(self.mean, self.cov)
        except PopInferError as e:
            raise ValueError(f"invalid Gaussian: {e}") from None
        return self

    @property
    def dim(self) -> int:
        return len(self.mean)

    def build(self) -> GaussianDensity:
        return make_gaussian(self.mean, self.cov)


class UniformSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    type: Literal["uniform"]
    lower: List[float]
    upper: List[float]

    @model_validator(mode="after")
    def _check(self) -> "UniformSpec":
        if len(self.lower) != len(self.upper) or not self.lower:
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(hi <= lo for lo, hi in zip(self.lower, self.upper)):
            raise ValueError("upper bounds must exceed lower bounds")
        return self

    @property
    def dim(self) -> int:
        return len(self.lower)

    def build(self) -> UniformBox:
        return make_uniform_box(self.lower, self.upper)


DensitySpec = Annotated[Union[GaussianSpec, UniformSpec], Field(discriminator="type")]


class MapSpec(BaseModel):
    """A linear matrix literal or a registered nonlinear model."""

    model_config = ConfigDict(extra="forbid")

    model: Literal["linear", "dogbone_surrogate"] = "linear"
    matrix: Optional[List[List[float]]] = None
    output: Optional[Literal["population", "individual"]] = None

    @model_validator(mode="before")
    @classmethod
    def _matrix_shorthand(cls, data: Any) -> Any:
        if isinstance(data, list):
            return {"model": "linear", "matrix": data}
        return data

    @model_validator(mode="after")
    def _check(self) -> "MapSpec":
        if self.model == "linear":
            if not self.matrix or not self.matrix[0]:
                raise ValueError("a linear map needs a non-empty matrix")
            if len({len(row) for row in self.matrix}) != 1:
                raise ValueError("matrix rows must have equal length")
        elif self.output is None:
            raise ValueError(f"model '{self.model}' needs output 'population' or 'individual'")
        return self

    @property
    def is_linear(self) -> bool:
        return self.model == "linear"

    @property
    def input_dim(self) -> int:
        return len(self.matrix[0]) if self.is_linear else 2

    @property
    def output_dim(self) -> int:
        return len(self.matrix) if self.is_linear else 1

    def build(self) -> ForwardModel:
        if self.is_linear:
            return get_model("linear", matrix=self.matrix)
        return get_model(self.model, output=self.output)


class DataSpec(BaseModel):
    """Individual data given explicitly or generated from a truth distribution."""

    model_config = ConfigDict(extra="forbid")

    values: Optional[List[List[float]]] = None
    truth: Optional[DensitySpec] = None
    noisy: bool = True

    @field_validator("values", mode="before")
    @classmethod
    def _scalar_values(cls, value: Any) -> Any:
        # [0.39, 0.5] is shorthand for two 1-D data vectors
        if isinstance(value, list) and value and all(isinstance(v, (int, float)) for v in value):
            return [[v] for v in value]
        return value

    @model_validator(mode="after")
    def _check(self) -> "DataSpec":
        if (self.values is None) == (self.truth is None):
            raise ValueError("data needs exactly one of 'values' or 'truth'")
        if self.values is not None:
            if not self.values:
                raise ValueError("data values must not be empty")
            if len({len(v) for v in self.values}) != 1:
                raise ValueError("data vectors must have equal length")
            if not self.noisy:
                raise ValueError("'noisy' only applies to data generated from 'truth'")
        return self


class ExperimentConfig(BaseModel):
    """A single experiment: densities, maps, data and Monte Carlo settings."""

    model_config = ConfigDict(extra="forbid")

    name: str = "experiment"
    pipeline: Literal["analytic", "sampled"] = "analytic"
    initial: DensitySpec
    prior: Optional[DensitySpec] = None
    pop_map: MapSpec
    ind_map: MapSpec
    observed: DensitySpec
    noise_cov: List[List[float]]
    data: DataSpec
    n_samples: int = Field(100_000, ge=2)
    n_realizations: int = Field(1, ge=1)
    seed: int = Field(..., ge=0, lt=2**64)
    kde_bandwidth: Literal["scott", "silverman"] = "scott"
    predictability_tolerance: float = Field(1e-8, ge=0.0)
    ood_alpha: float = Field(0.05, gt=0.0, lt=1.0)
    n_jobs: int = 1
    output_dir: Optional[str] = None

    @field_validator("noise_cov", mode="before")
    @classmethod
    def _scalar_noise(cls, value: Any) -> Any:
        if isinstance(value, (int, float)):
            return [[value]]
        return value

    @field_validator("n_jobs")
    @classmethod
    def _check_jobs(cls, value: int) -> int:
        if value == 0:
            raise ValueError("n_jobs must be positive or negative (joblib convention), not 0")
        return value

    @model_validator(mode="after")
    def _check_dimensions(self) -> "ExperimentConfig":
        n = self.initial.dim
        prior = self.prior if self.prior is not None else self.initial
        if prior.dim != n:
            raise ValueError(f"prior dimension {prior.dim} does not match initial dimension {n}")
        for label, spec in (("pop_map", self.pop_map), ("ind_map", self.ind_map)):
            if spec.input_dim != n:
                raise ValueError(f"{label} takes dimension {spec.input_dim}, initial has {n}")
        if self.observed.dim != self.pop_map.output_dim:
            raise ValueError(
                f"observed dimension {self.observed.dim} does not match pop_map output {self.pop_map.output_dim}"
            )
        d = self.ind_map.output_dim
        noise = np.asarray(self.noise_cov, dtype=float)
        if noise.shape != (d, d):
            raise ValueError(f"noise_cov must be {d}x{d}, got {noise.shape}")
        try:
            make_gaussian(np.zeros(d), noise)
        except PopInferError as e:
            raise ValueError(f"invalid noise_cov: {e}") from None
        if self.data.values is not None and len(self.data.values[0]) != d:
            raise ValueError(f"data vectors must have dimension {d}, got {len(self.data.values[0])}")
        if self.data.truth is not None and self.data.truth.dim != n:
            raise ValueError(f"truth dimension {self.data.truth.dim} does not match parameter dimension {n}")

        if self.pipeline == "analytic":
            densities = (self.initial, prior, self.observed)
            if not all(isinstance(spec, GaussianSpec) for spec in densities):
                raise ValueError("the analytic pipeline needs Gaussian initial, prior and observed densities")
            if not (self.pop_map.is_linear and self.ind_map.is_linear):
                raise ValueError("the analytic pipeline needs linear maps")
        return self

    @property
    def is_linear_gaussian(self) -> bool:
        prior = self.prior if self.prior is not None else self.initial
        return (
            all(isinstance(spec, GaussianSpec) for spec in (self.initial, prior, self.observed))
            and self.pop_map.is_linear
            and self.ind_map.is_linear
        )

    @property
    def has_separate_prior(self) -> bool:
        return self.prior is not None and self.prior != self.initial

    def initial_density(self) -> Union[GaussianDensity, UniformBox]:
        return self.initial.build()

    def prior_density(self) -> Union[GaussianDensity, UniformBox]:
        return (self.prior if self.prior is not None else self.initial).build()

    def observed_density(self) -> Union[GaussianDensity, UniformBox]:
        return self.observed.build()

    def pop_model(self) -> ForwardModel:
        return self.pop_map.build()

    def ind_model(self) -> ForwardModel:
        return self.ind_map.build()

    def noise_covariance(self) -> np.ndarray:
        return np.asarray(self.noise_cov, dtype=float)

    def data_values(self) -> Optional[np.ndarray]:
        return None if self.data.values is None else np.asarray(self.data.values, dtype=float)

    def data_generator(self) -> DataGenerator:
        if self.data.truth is None:
            raise ConfigError(f"Config '{self.name}' has no truth distribution to generate data from")
        return make_data_generator(
            self.ind_model(), self.noise_covariance(), self.data.truth.build(), noisy=self.data.noisy
        )

    def with_overrides(self, **overrides: Any) -> "ExperimentConfig":
        """Copy of the config with fields replaced and revalidated; None values are ignored."""
        updates = {key: value for key, value in overrides.items() if value is not None}
        if not updates:
            return self
        return parse_config({**self.model_dump(exclude_unset=False), **updates}, source=self.name)


def parse_config(document: Any, source: str = "<config>") -> ExperimentConfig:
    """Validate a decoded JSON document.

    Raises:
        ConfigError: If the document does not describe a valid experiment
    """
    try:
        return ExperimentConfig.model_validate(document)
    except ValidationError as e:
        raise ConfigError(f"Invalid config {source}: {e}") from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Load and validate an experiment config from a JSON file.

    Raises:
        ConfigError: If the file cannot be read, parsed or validated
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"Cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config {path} is not valid JSON: {e}") from e
    config = parse_config(document, source=str(path))
    logger.debug(f"Loaded config '{config.name}' from {path}")
    return config


def bundled_config_names() -> List[str]:
    """Names of the experiment configs shipped with the package."""
    root = resources.files(BUNDLED_CONFIG_PACKAGE)
    return sorted(entry.name[:-5] for entry in root.iterdir() if entry.name.endswith(".json"))


def load_bundled_config(name: str) -> ExperimentConfig:
    """Load a config shipped in ``popinfer/configs`` by name, with or without ``.json``."""
    filename = name if name.endswith(".json") else f"{name}.json"
    resource = resources.files(BUNDLED_CONFIG_PACKAGE) / filename
    if not resource.is_file():
        raise ConfigError(f"No bundled config '{name}', available: {bundled_config_names()}")
    try:
        document = json.loads(resource.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"Bundled config {filename} is not valid JSON: {e}") from e
    return parse_config(document, source=filename)


def resolve_config(reference: Union[str, Path]) -> ExperimentConfig:
    """Load a config from a file path, falling back to a bundled config name."""
    path = Path(reference)
    if path.is_file():
        return load_config(path)
    if path.suffix in ("", ".json") and path.parent == Path("."):
        return load_bundled_config(str(reference))
    raise ConfigError(f"Config file {reference} does not exist")
