"""Closed-form data-consistent inversion for linear maps and Gaussian densities.

The updated density of a Gaussian initial density N(mu_in, G_in) under a
full-row-rank map A and a Gaussian observed density N(f_obs, G_obs) is
Gaussian with precision

    A^T G_obs^-1 A + G_in^-1 - A^T (A G_in A^T)^-1 A

and the predictability assumption holds exactly when every singular value
of Q = G_in^1/2 A^T G_obs^-1/2 is at least one.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

from .core import get_config
from .errors import DimensionMismatch, PredictabilityViolated
from .gaussian import (
    GaussianDensity,
    LinearMap,
    invert_precision,
    make_gaussian,
    precision_matrix,
    sym_inv_sqrt,
    sym_sqrt,
    symmetrize,
)

logger = logging.getLogger("popinfer.dci_linear")


@dataclass(frozen=True)
class PredictabilitySpectrum:
    """Singular values of Q, nonincreasing, with the tolerance used to judge them."""

    singular_values: np.ndarray
    tolerance: float
    left_vectors: Optional[np.ndarray] = None

    @property
    def min_value(self) -> float:
        return float(self.singular_values[-1])


@dataclass(frozen=True)
class PredictabilityStatus:
    """Outcome of the spectral predictability check."""

    satisfied: bool
    min_value: float

    def __str__(self) -> str:
        return "Satisfied" if self.satisfied else f"Violated({self.min_value:.6g})"


@dataclass(frozen=True)
class PrecisionSplit:
    """Updated precision written as init_precision + Y Y^T."""

    init_precision: np.ndarray
    low_rank_factor: np.ndarray

    def reconstruct(self) -> np.ndarray:
        y = self.low_rank_factor
        return symmetrize(self.init_precision + y @ y.T)


def _check_dimensions(init: GaussianDensity, pop_map: LinearMap, observed: GaussianDensity) -> None:
    if pop_map.input_dim != init.dim:
        raise DimensionMismatch(
            f"Population map takes dimension {pop_map.input_dim}, initial density has {init.dim}"
        )
    if pop_map.output_dim != observed.dim:
        raise DimensionMismatch(
            f"Population map returns dimension {pop_map.output_dim}, observed density has {observed.dim}"
        )


def _tolerance(tolerance: Optional[float]) -> float:
    if tolerance is None:
        return float(get_config().get("predictability_tolerance", 1e-8))
    return float(tolerance)


def predictability_spectrum(
    init: GaussianDensity,
    pop_map: LinearMap,
    observed: GaussianDensity,
    tolerance: Optional[float] = None,
) -> PredictabilitySpectrum:
    """Singular values of Q = G_in^1/2 A^T G_obs^-1/2.

    Args:
        init: Initial density on the parameters
        pop_map: Parameter-to-population-observable map A
        observed: Observed density on the population data
        tolerance: Allowed shortfall below unity, the configured default when None

    Returns:
        The spectrum, sorted nonincreasing
    """
    _check_dimensions(init, pop_map, observed)
    q = sym_sqrt(init.covariance) @ pop_map.matrix.T @ sym_inv_sqrt(observed.covariance)
    u, s, _ = la.svd(q, full_matrices=False)
    logger.debug(f"Predictability spectrum: {s}")
    return PredictabilitySpectrum(singular_values=s, tolerance=_tolerance(tolerance), left_vectors=u)


def check_predictability(spectrum: PredictabilitySpectrum) -> PredictabilityStatus:
    """Satisfied iff the smallest singular value is at least 1 - tolerance."""
    min_value = spectrum.min_value
    return PredictabilityStatus(satisfied=min_value >= 1.0 - spectrum.tolerance, min_value=min_value)


def _require_predictability(spectrum: PredictabilitySpectrum) -> None:
    status = check_predictability(spectrum)
    if not status.satisfied:
        logger.error(f"Predictability assumption violated: {status}")
        raise PredictabilityViolated(
            f"Smallest singular value {status.min_value:.6g} is below unity", min_value=status.min_value
        )


def updated_density(
    init: GaussianDensity,
    pop_map: LinearMap,
    observed: GaussianDensity,
    tolerance: Optional[float] = None,
) -> GaussianDensity:
    """Gaussian updated density solving the linear data-consistent inverse problem.

    Raises:
        DimensionMismatch: If the densities and the map disagree in size
        PredictabilityViolated: If some singular value of Q falls below 1 - tolerance
    """
    spectrum = predictability_spectrum(init, pop_map, observed, tolerance)
    _require_predictability(spectrum)

    a = pop_map.matrix
    obs_precision = precision_matrix(observed)
    predicted_cov = symmetrize(a @ init.covariance @ a.T)
    projector = a.T @ la.solve(predicted_cov, a, assume_a="pos")

    precision = a.T @ obs_precision @ a + precision_matrix(init) - projector
    cov_up = invert_precision(precision)
    mean_up = init.mean + cov_up @ a.T @ obs_precision @ (observed.mean - a @ init.mean)

    logger.debug(f"Updated density mean {mean_up}, covariance {cov_up.tolist()}")
    return make_gaussian(mean_up, cov_up)


def precision_split(
    init: GaussianDensity,
    pop_map: LinearMap,
    observed: GaussianDensity,
    tolerance: Optional[float] = None,
) -> PrecisionSplit:
    """Write the updated precision as G_in^-1 + Y Y^T with Y = G_in^-1/2 U (S^2 - I)^1/2.

    U and S are the left singular vectors and singular values of Q. Entries
    of S^2 - I below the SVD rounding level, including those within
    tolerance below zero, are set to zero.

    Raises:
        PredictabilityViolated: If some singular value of Q falls below 1 - tolerance
    """
    spectrum = predictability_spectrum(init, pop_map, observed, tolerance)
    _require_predictability(spectrum)

    s = spectrum.singular_values
    g = s ** 2 - 1.0
    # rounding noise of the SVD, so that observed = predicted gives Y = 0 exactly
    noise = 100.0 * max(init.dim, observed.dim) * np.finfo(float).eps * max(1.0, float(s.max()) ** 2)
    g[g <= noise] = 0.0
    y = sym_inv_sqrt(init.covariance) @ spectrum.left_vectors @ np.diag(np.sqrt(g))
    return PrecisionSplit(init_precision=precision_matrix(init), low_rank_factor=y)
