"""Standard and population-informed posteriors for linear-Gaussian problems."""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .dci_linear import updated_density
from .errors import DegenerateReference, DimensionMismatch
from .gaussian import (
    GaussianDensity,
    LinearMap,
    as_matrix,
    as_vector,
    invert_precision,
    kl_gaussian,
    make_gaussian,
    precision_matrix,
    precision_summaries,
)

logger = logging.getLogger("popinfer.bayes_linear")

REFERENCE_KL_FLOOR = 1e-14


@dataclass(frozen=True)
class LinearGaussianProblem:
    """Statistical model y = B lambda + eta with eta ~ N(0, noise_covariance)."""

    prior: GaussianDensity
    individual_map: LinearMap
    noise_covariance: np.ndarray
    data: np.ndarray

    def with_data(self, data: ArrayLike) -> "LinearGaussianProblem":
        data = as_vector(data)
        if data.shape[0] != self.data.shape[0]:
            raise DimensionMismatch(f"Data has dimension {data.shape[0]}, expected {self.data.shape[0]}")
        return dataclasses.replace(self, data=data)

    def with_prior(self, prior: GaussianDensity) -> "LinearGaussianProblem":
        if prior.dim != self.prior.dim:
            raise DimensionMismatch(f"Prior has dimension {prior.dim}, expected {self.prior.dim}")
        return dataclasses.replace(self, prior=prior)


@dataclass(frozen=True)
class GainReport:
    """Determinant, trace and KL comparison of the two inferences.

    KL values are divergences of each posterior from the shared prior, in nats.
    """

    det_inv_standard: float
    det_inv_pop: float
    trace_inv_standard: float
    trace_inv_pop: float
    kl_standard: float
    kl_pop: float
    relative_gain: float
    standard: Optional[GaussianDensity] = dataclasses.field(default=None, compare=False, repr=False)
    population: Optional[GaussianDensity] = dataclasses.field(default=None, compare=False, repr=False)
    updated: Optional[GaussianDensity] = dataclasses.field(default=None, compare=False, repr=False)


def make_problem(
    prior: GaussianDensity,
    individual_map: LinearMap,
    noise_covariance: ArrayLike,
    data: ArrayLike,
) -> LinearGaussianProblem:
    """Validate and assemble a linear-Gaussian problem.

    Raises:
        DimensionMismatch: If data, map and noise sizes disagree
        NotPositiveDefinite: If the noise covariance is not SPD
    """
    noise = as_matrix(noise_covariance)
    data = as_vector(data)
    if individual_map.input_dim != prior.dim:
        raise DimensionMismatch(
            f"Individual map takes dimension {individual_map.input_dim}, prior has {prior.dim}"
        )
    if not (data.shape[0] == individual_map.output_dim == noise.shape[0]):
        raise DimensionMismatch(
            f"Data ({data.shape[0]}), map rows ({individual_map.output_dim}) and "
            f"noise covariance ({noise.shape[0]}) must agree"
        )
    # validates symmetry and positive definiteness
    noise_density = make_gaussian(np.zeros(noise.shape[0]), noise)
    return LinearGaussianProblem(
        prior=prior,
        individual_map=individual_map,
        noise_covariance=noise_density.covariance,
        data=data,
    )


def standard_posterior(problem: LinearGaussianProblem) -> GaussianDensity:
    """Gaussian posterior of the linear-Gaussian problem, computed in precision form."""
    b = problem.individual_map.matrix
    prior = problem.prior
    noise_precision = invert_precision(problem.noise_covariance)

    precision = b.T @ noise_precision @ b + precision_matrix(prior)
    cov = invert_precision(precision)
    mean = prior.mean + cov @ b.T @ noise_precision @ (problem.data - b @ prior.mean)
    return make_gaussian(mean, cov)


def population_informed_posterior(
    problem: LinearGaussianProblem,
    pop_map: LinearMap,
    observed: GaussianDensity,
    initial: Optional[GaussianDensity] = None,
    tolerance: Optional[float] = None,
) -> GaussianDensity:
    """Posterior obtained with the updated density as prior.

    Args:
        problem: The individual-level problem; its prior doubles as the
            initial density unless ``initial`` is given
        pop_map: Parameter-to-population-observable map
        observed: Observed density on the population data
        initial: Initial density for the data-consistent update
        tolerance: Predictability tolerance

    Raises:
        PredictabilityViolated: If the observed density is not predictable
    """
    init = initial if initial is not None else problem.prior
    updated = updated_density(init, pop_map, observed, tolerance)
    return standard_posterior(problem.with_prior(updated))


def relative_gain(kl_pop: float, kl_standard: float) -> float:
    """(KL_pop - KL_standard) / KL_standard with a guard on the denominator."""
    if kl_standard < REFERENCE_KL_FLOOR:
        raise DegenerateReference(f"Standard KL {kl_standard:.3e} is too small to compare against")
    return (kl_pop - kl_standard) / kl_standard


def relative_information_gain(
    post_pop: GaussianDensity,
    post_std: GaussianDensity,
    reference: GaussianDensity,
) -> float:
    """Relative difference of KL(post_pop || reference) over KL(post_std || reference)."""
    if not (post_pop.dim == post_std.dim == reference.dim):
        raise DimensionMismatch("Posteriors and reference must share a dimension")
    return relative_gain(kl_gaussian(post_pop, reference), kl_gaussian(post_std, reference))


def compare_inferences(
    problem: LinearGaussianProblem,
    pop_map: LinearMap,
    observed: GaussianDensity,
    initial: Optional[GaussianDensity] = None,
    tolerance: Optional[float] = None,
) -> GainReport:
    """Compute both posteriors once and compare them against the prior."""
    init = initial if initial is not None else problem.prior
    updated = updated_density(init, pop_map, observed, tolerance)
    standard = standard_posterior(problem)
    population = standard_posterior(problem.with_prior(updated))

    std_summary = precision_summaries(standard)
    pop_summary = precision_summaries(population)
    kl_std = kl_gaussian(standard, problem.prior)
    kl_pop = kl_gaussian(population, problem.prior)

    report = GainReport(
        det_inv_standard=std_summary.det_of_inverse,
        det_inv_pop=pop_summary.det_of_inverse,
        trace_inv_standard=std_summary.trace_of_inverse,
        trace_inv_pop=pop_summary.trace_of_inverse,
        kl_standard=kl_std,
        kl_pop=kl_pop,
        relative_gain=relative_gain(kl_pop, kl_std),
        standard=standard,
        population=population,
        updated=updated,
    )
    logger.info(
        f"Standard det/trace {report.det_inv_standard:.4g}/{report.trace_inv_standard:.4g}, "
        f"population-informed {report.det_inv_pop:.4g}/{report.trace_inv_pop:.4g}"
    )
    return report
