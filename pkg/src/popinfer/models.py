"""Forward models, truth distributions and synthetic data generation."""

import functools
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from joblib import Parallel, delayed
from numpy.typing import ArrayLike

from .errors import DimensionMismatch, DomainViolation
from .gaussian import GaussianDensity, LinearMap, as_matrix, as_vector, make_gaussian, make_linear_map

logger = logging.getLogger("popinfer.models")

# Steel prior box: Young's modulus E in GPa, Poisson's ratio nu
DOGBONE_LOWER = np.array([180.0, 0.25])
DOGBONE_UPPER = np.array([210.0, 0.35])
# Push-forward means the surrogate is calibrated to (population and individual QoI)
DOGBONE_POP_SCALE = 2.8e-4
DOGBONE_IND_SCALE = 1.3e-5


@dataclass(frozen=True)
class UniformBox:
    """Product of independent uniform distributions on [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise DimensionMismatch("Box bounds must have the same length")
        if np.any(self.upper <= self.lower):
            raise ValueError("Box upper bounds must exceed lower bounds")

    @property
    def dim(self) -> int:
        return int(self.lower.shape[0])

    @property
    def mean(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def covariance(self) -> np.ndarray:
        return np.diag((self.upper - self.lower) ** 2 / 12.0)

    def contains(self, params: ArrayLike) -> np.ndarray:
        params = np.atleast_2d(np.asarray(params, dtype=float))
        return np.all((params >= self.lower) & (params <= self.upper), axis=1)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lower + (self.upper - self.lower) * rng.uniform(size=(int(n), self.dim))

    def log_pdf(self, params: ArrayLike) -> np.ndarray:
        inside = self.contains(params)
        value = -np.sum(np.log(self.upper - self.lower))
        return np.where(inside, value, -np.inf)


def make_uniform_box(lower: ArrayLike, upper: ArrayLike) -> UniformBox:
    return UniformBox(lower=as_vector(lower), upper=as_vector(upper))


TruthDistribution = Union[GaussianDensity, UniformBox]


@dataclass(frozen=True)
class ForwardModel:
    """Deterministic map from parameter vectors to output vectors.

    The evaluator works on (N, input_dim) batches; calling the model with a
    single vector returns a single output vector.
    """

    name: str
    input_dim: int
    output_dim: int
    evaluator: Callable[[np.ndarray], np.ndarray]
    domain: Optional[UniformBox] = None
    linear_map: Optional[LinearMap] = None

    def __call__(self, params: ArrayLike) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        single = params.ndim == 1
        batch = params.reshape(1, -1) if single else params
        if batch.shape[1] != self.input_dim:
            raise DimensionMismatch(
                f"Model '{self.name}' takes dimension {self.input_dim}, got {batch.shape[1]}"
            )
        if self.domain is not None and not np.all(self.domain.contains(batch)):
            raise DomainViolation(f"Parameters outside the domain of model '{self.name}'")
        out = np.asarray(self.evaluator(batch), dtype=float).reshape(batch.shape[0], self.output_dim)
        return out[0] if single else out


def evaluate_batch(
    model: Callable[[np.ndarray], np.ndarray],
    params: ArrayLike,
    n_jobs: int = 1,
    chunk_size: int = 10_000,
) -> np.ndarray:
    """Evaluate a model on a batch, optionally splitting the batch across workers.

    Results do not depend on ``n_jobs``: chunks are evaluated independently
    and reassembled in order.
    """
    params = np.atleast_2d(np.asarray(params, dtype=float))
    if n_jobs == 1 or params.shape[0] <= chunk_size:
        return np.asarray(model(params), dtype=float)
    chunks = [params[i:i + chunk_size] for i in range(0, params.shape[0], chunk_size)]
    outputs = Parallel(n_jobs=n_jobs)(delayed(model)(chunk) for chunk in chunks)
    return np.concatenate([np.asarray(out, dtype=float) for out in outputs], axis=0)


def linear_model(matrix: ArrayLike, name: str = "linear") -> ForwardModel:
    """Forward model computing the matrix-vector product.

    Raises:
        RankDeficient: If the matrix does not have full row rank
    """
    linear_map = make_linear_map(matrix)
    return ForwardModel(
        name=name,
        input_dim=linear_map.input_dim,
        output_dim=linear_map.output_dim,
        evaluator=linear_map,
        linear_map=linear_map,
    )


def lame_parameters(youngs_modulus: ArrayLike, poisson_ratio: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Lame parameters (lambda, mu) from Young's modulus and Poisson's ratio."""
    e = np.asarray(youngs_modulus, dtype=float)
    nu = np.asarray(poisson_ratio, dtype=float)
    lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    mu = e / (2.0 * (1.0 + nu))
    return lam, mu


def _mean_inverse_modulus(lower: float, upper: float) -> float:
    return np.log(upper / lower) / (upper - lower)


def _uniform_moment(lower: float, upper: float, power: int) -> float:
    return (upper ** (power + 1) - lower ** (power + 1)) / ((power + 1) * (upper - lower))


def dogbone_constants() -> Tuple[float, float]:
    """Scale constants (c_p, c_i) matching the push-forward means of the prior box.

    Both surrogates factor as c * g(nu) / E with E and nu independent and
    uniform, so the prior mean of each output is c * E[g(nu)] * E[1/E].
    """
    inv_e = _mean_inverse_modulus(DOGBONE_LOWER[0], DOGBONE_UPPER[0])
    nu_lo, nu_hi = DOGBONE_LOWER[1], DOGBONE_UPPER[1]
    nu1 = _uniform_moment(nu_lo, nu_hi, 1)
    nu2 = _uniform_moment(nu_lo, nu_hi, 2)
    c_p = DOGBONE_POP_SCALE / ((1.0 - nu2) * inv_e)
    c_i = DOGBONE_IND_SCALE / ((nu1 + nu2) * inv_e)
    return c_p, c_i


def _axial_displacement(params: np.ndarray, scale: float) -> np.ndarray:
    e, nu = params[:, 0], params[:, 1]
    return (scale * (1.0 - nu ** 2) / e)[:, None]


def _transverse_displacement(params: np.ndarray, scale: float) -> np.ndarray:
    e, nu = params[:, 0], params[:, 1]
    return (scale * nu * (1.0 + nu) / e)[:, None]


def dogbone_surrogate(output: Optional[str] = None) -> Union[ForwardModel, Tuple[ForwardModel, ForwardModel]]:
    """Closed-form stand-ins (f_p, f_i) for the dog-bone tensile test QoI.

    f_p(E, nu) = c_p (1 - nu^2) / E plays the average axial displacement and
    f_i(E, nu) = c_i nu (1 + nu) / E the summed transverse displacement.
    Both are defined on the steel prior box only. With ``output`` set to
    "population" or "individual" only that model is returned.
    """
    c_p, c_i = dogbone_constants()
    box = UniformBox(lower=DOGBONE_LOWER.copy(), upper=DOGBONE_UPPER.copy())
    f_p = ForwardModel(
        name="dogbone_surrogate.population",
        input_dim=2,
        output_dim=1,
        evaluator=functools.partial(_axial_displacement, scale=c_p),
        domain=box,
    )
    f_i = ForwardModel(
        name="dogbone_surrogate.individual",
        input_dim=2,
        output_dim=1,
        evaluator=functools.partial(_transverse_displacement, scale=c_i),
        domain=box,
    )
    if output is None:
        return f_p, f_i
    if output == "population":
        return f_p
    if output == "individual":
        return f_i
    raise ValueError(f"Unknown dog-bone output '{output}', expected 'population' or 'individual'")


MODEL_REGISTRY: Dict[str, Callable[..., object]] = {
    "linear": linear_model,
    "dogbone_surrogate": dogbone_surrogate,
}


def get_model(name: str, **kwargs) -> object:
    """Look up a model factory by registry name and call it."""
    try:
        factory = MODEL_REGISTRY[name]
    except KeyError:
        raise ValueError(f"Unknown model '{name}', expected one of {sorted(MODEL_REGISTRY)}") from None
    return factory(**kwargs)


@dataclass(frozen=True)
class DataGenerator:
    """Synthetic individual data y = f(lambda) + eta with lambda from a truth distribution."""

    model: ForwardModel
    noise_covariance: np.ndarray
    truth_distribution: TruthDistribution
    noisy: bool = True

    def __post_init__(self):
        if self.noise_covariance.shape != (self.model.output_dim, self.model.output_dim):
            raise DimensionMismatch(
                f"Noise covariance {self.noise_covariance.shape} does not match "
                f"model output dimension {self.model.output_dim}"
            )
        if self.truth_distribution.dim != self.model.input_dim:
            raise DimensionMismatch("Truth distribution and model input dimensions differ")


def make_data_generator(
    model: ForwardModel, noise_covariance: ArrayLike, truth: TruthDistribution, noisy: bool = True
) -> DataGenerator:
    return DataGenerator(
        model=model, noise_covariance=as_matrix(noise_covariance), truth_distribution=truth, noisy=noisy
    )


def generate_data(gen: DataGenerator, rng: np.random.Generator, n_realizations: int) -> np.ndarray:
    """Draw (n_realizations, output_dim) synthetic data vectors.

    A generator built with noisy=False returns the model outputs themselves;
    the likelihood still uses the noise covariance.
    """
    if n_realizations < 1:
        raise ValueError(f"n_realizations must be at least 1, got {n_realizations}")
    params = gen.truth_distribution.sample(rng, n_realizations)
    outputs = gen.model(params)
    if not gen.noisy:
        return np.asarray(outputs, dtype=float)
    noise = make_gaussian(np.zeros(gen.model.output_dim), gen.noise_covariance)
    return outputs + noise.sample(rng, n_realizations)
