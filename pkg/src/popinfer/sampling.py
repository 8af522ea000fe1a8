"""Sampling pipeline for population-informed inference.

Implements the Monte Carlo route through data-consistent inversion: a KDE
of the predicted density, ratio weights r = pi_obs / pi_pred, the mean-ratio
diagnostic, the population-informed evidence, rejection sampling of the
posterior and Monte Carlo KL estimates. Products of weights and likelihoods
are accumulated in log space so that very small noise variances do not
underflow.

The same initial ensemble is used to fit the KDE, to estimate the evidence
and to run the rejection step, so these estimates are correlated.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.special import logsumexp
from scipy.stats import genpareto

from .errors import (
    AllRejected,
    DimensionMismatch,
    NonFiniteWeight,
    ZeroEvidence,
)
from .gaussian import GaussianDensity, as_matrix, as_vector, make_gaussian
from .kde import BandwidthRule, KernelDensityEstimate, fit_kde
from .models import evaluate_batch

logger = logging.getLogger("popinfer.sampling")

PREDICTED_DENSITY_FLOOR = 1e-300
DIAGNOSTIC_ABSOLUTE_TOLERANCE = 0.05
# Generalized Pareto shape above which the weights have infinite variance
DIAGNOSTIC_MAX_TAIL_SHAPE = 0.5
TAIL_MIN_EXCEEDANCES = 20

DensityEvaluator = Union[GaussianDensity, KernelDensityEstimate, Callable[[np.ndarray], np.ndarray]]


def _as_rows(a: ArrayLike) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, 1) if a.ndim == 1 else a


@dataclass(frozen=True)
class SampleEnsemble:
    """Initial samples with their model outputs, ratio weights and likelihoods.

    Weights and likelihoods are held as logarithms; ``weights`` and
    ``likelihoods`` give them back on the natural scale.
    """

    params: np.ndarray
    pop_outputs: np.ndarray
    ind_outputs: np.ndarray
    log_weights: np.ndarray
    log_likelihoods: np.ndarray

    def __post_init__(self):
        n = self.params.shape[0]
        for name in ("pop_outputs", "ind_outputs", "log_weights", "log_likelihoods"):
            if getattr(self, name).shape[0] != n:
                raise DimensionMismatch(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        for name in ("log_weights", "log_likelihoods"):
            values = getattr(self, name)
            if np.any(np.isnan(values)) or np.any(values == np.inf):
                raise NonFiniteWeight(f"{name} contains NaN or infinite values")

    @property
    def n_samples(self) -> int:
        return int(self.params.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def likelihoods(self) -> np.ndarray:
        return np.exp(self.log_likelihoods)

    def without_weights(self) -> "SampleEnsemble":
        """Same ensemble with r = 1, i.e. the standard posterior."""
        return dataclasses.replace(self, log_weights=np.zeros(self.n_samples))

    def without_likelihoods(self) -> "SampleEnsemble":
        """Same ensemble with a flat likelihood, i.e. the updated density alone."""
        return dataclasses.replace(self, log_likelihoods=np.zeros(self.n_samples))

    def with_log_likelihoods(self, log_likelihoods: np.ndarray) -> "SampleEnsemble":
        return dataclasses.replace(self, log_likelihoods=np.asarray(log_likelihoods, dtype=float))


@dataclass(frozen=True)
class RejectionResult:
    """Samples accepted by rejection sampling."""

    accepted_params: np.ndarray
    accepted_indices: np.ndarray
    acceptance_rate: float
    scale_M: float

    @property
    def n_accepted(self) -> int:
        return int(self.accepted_params.shape[0])


class MeanRatioDiagnostic(NamedTuple):
    """Sample mean of the ratio weights, its standard error and the verdict.

    ``tail_shape`` is the generalized Pareto shape fitted to the largest
    weights, or None when there are too few distinct large weights to fit.
    """

    mean: float
    std_error: float
    passed: bool
    tail_shape: Optional[float] = None

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "tail_shape": self.tail_shape,
            "passed": self.passed,
        }


def _log_density(evaluator: DensityEvaluator, points: np.ndarray) -> np.ndarray:
    if hasattr(evaluator, "log_pdf"):
        values = evaluator.log_pdf(points)
        return np.atleast_1d(np.asarray(values, dtype=float))
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(evaluator(points), dtype=float))


def log_ratio_weights(
    pop_outputs: ArrayLike,
    observed: DensityEvaluator,
    kde: KernelDensityEstimate,
) -> np.ndarray:
    """Log of r = pi_obs(f_p) / pi_pred(f_p) at every sample.

    Args:
        pop_outputs: (N, m_p) population-model outputs
        observed: Observed density (object with ``log_pdf`` or a pdf callable)
        kde: Estimate of the predicted density

    Raises:
        NonFiniteWeight: If the predicted density falls below 1e-300 at a sample
    """
    pop_outputs = _as_rows(pop_outputs)
    log_pred = kde.log_pdf(pop_outputs)
    low = log_pred < np.log(PREDICTED_DENSITY_FLOOR)
    if np.any(low):
        raise NonFiniteWeight(
            f"Predicted density underflows at {int(np.sum(low))} samples; "
            "the observed density has mass where predictions are absent"
        )
    log_obs = _log_density(observed, pop_outputs)
    if np.any(np.isnan(log_obs)):
        raise NonFiniteWeight("Observed density evaluated to NaN")
    return log_obs - log_pred


def ratio_weights(
    pop_outputs: ArrayLike,
    observed: DensityEvaluator,
    kde: KernelDensityEstimate,
) -> np.ndarray:
    """Ratio weights r = pi_obs(f_p) / pi_pred(f_p) at every sample."""
    weights = np.exp(log_ratio_weights(pop_outputs, observed, kde))
    if not np.all(np.isfinite(weights)):
        raise NonFiniteWeight("Ratio weights overflowed")
    return weights


def weight_tail_shape(weights: ArrayLike) -> Optional[float]:
    """Generalized Pareto shape of the upper tail of the weights.

    Fits the excesses of the largest min(N/5, 3 sqrt(N)) weights over the
    next largest one. A shape above 1/2 means the weights have infinite
    variance. Bounded weights give a shape at or below zero.

    Returns:
        The fitted shape, or None if fewer than 20 excesses are positive
        or the fit fails
    """
    weights = np.sort(as_vector(weights))
    n = weights.shape[0]
    m = int(min(n / 5.0, 3.0 * np.sqrt(n)))
    if m < TAIL_MIN_EXCEEDANCES:
        return None
    threshold = weights[n - m - 1]
    excess = weights[n - m:] - threshold
    if np.count_nonzero(excess > 0.0) < TAIL_MIN_EXCEEDANCES:
        return None
    try:
        shape, _, _ = genpareto.fit(excess / np.mean(excess), floc=0.0)
    except RuntimeError as e:
        # scipy's FitError: no finite likelihood, which happens for sharply bounded tails
        logger.debug(f"Tail fit failed: {e}")
        return None
    return float(shape)


def diagnostic_mean_ratio(weights: ArrayLike) -> MeanRatioDiagnostic:
    """Check E_init[r] = 1 from the sample mean of the ratio weights.

    Passes when |mean - 1| <= max(0.05, 3 standard errors) and the weights
    do not have a heavy upper tail. When the observed density is wider than
    the predicted density the ratio still integrates to one, so the mean
    alone stays near 1; the violation shows up as weights of infinite
    variance, whose fitted tail shape exceeds 1/2.
    """
    weights = as_vector(weights)
    n = weights.shape[0]
    if n < 2:
        raise DimensionMismatch(f"Need at least two weights, got {n}")
    mean = float(np.mean(weights))
    std_error = float(np.std(weights, ddof=1) / np.sqrt(n))
    tail_shape = weight_tail_shape(weights)
    heavy_tail = tail_shape is not None and tail_shape > DIAGNOSTIC_MAX_TAIL_SHAPE
    passed = abs(mean - 1.0) <= max(DIAGNOSTIC_ABSOLUTE_TOLERANCE, 3.0 * std_error) and not heavy_tail
    if passed:
        logger.info(f"Mean ratio diagnostic {mean:.4f} +/- {std_error:.4f} passed")
    elif heavy_tail:
        logger.warning(f"Mean ratio diagnostic failed: weight tail shape {tail_shape:.3f} exceeds 0.5")
    else:
        logger.warning(f"Mean ratio diagnostic {mean:.4f} +/- {std_error:.4f} failed")
    return MeanRatioDiagnostic(mean=mean, std_error=std_error, passed=passed, tail_shape=tail_shape)


def log_pop_evidence(log_weights: ArrayLike, log_likelihoods: ArrayLike) -> float:
    """log C~ with C~ = (1/N) sum_j w_j L_j, accumulated in log space.

    Raises:
        ZeroEvidence: If every term vanishes
    """
    log_weights = as_vector(log_weights)
    log_likelihoods = as_vector(log_likelihoods)
    if log_weights.shape != log_likelihoods.shape:
        raise DimensionMismatch(
            f"{log_weights.shape[0]} weights but {log_likelihoods.shape[0]} likelihoods"
        )
    value = float(logsumexp(log_weights + log_likelihoods) - np.log(log_weights.shape[0]))
    if not np.isfinite(value):
        raise ZeroEvidence("Evidence estimate is zero: data unsupported by the prior")
    return value


def _log(values: ArrayLike) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(as_vector(values))


def estimate_pop_evidence(weights: ArrayLike, likelihoods: ArrayLike) -> float:
    """Monte Carlo population-informed evidence (1/N) sum_j w_j L_j.

    Raises:
        ZeroEvidence: If the estimate underflows
    """
    evidence = float(np.exp(log_pop_evidence(_log(weights), _log(likelihoods))))
    if evidence <= 0.0:
        raise ZeroEvidence("Evidence estimate underflowed")
    return evidence


def standard_evidence(likelihoods: ArrayLike) -> float:
    """Monte Carlo evidence of the standard posterior, mean of the likelihoods."""
    likelihoods = as_vector(likelihoods)
    return estimate_pop_evidence(np.ones_like(likelihoods), likelihoods)


def gaussian_log_likelihoods(
    ind_outputs: ArrayLike,
    data: ArrayLike,
    noise_covariance: ArrayLike,
) -> np.ndarray:
    """Log of the Gaussian likelihood of ``data`` given each row of model outputs."""
    data = as_vector(data)
    ind_outputs = _as_rows(ind_outputs)
    if ind_outputs.shape[1] != data.shape[0]:
        raise DimensionMismatch(
            f"Model outputs have dimension {ind_outputs.shape[1]}, data has {data.shape[0]}"
        )
    noise = make_gaussian(np.zeros(data.shape[0]), as_matrix(noise_covariance))
    return noise.log_pdf(data[None, :] - ind_outputs)


def gaussian_likelihoods(
    ind_outputs: ArrayLike,
    data: ArrayLike,
    noise_covariance: ArrayLike,
) -> np.ndarray:
    """Gaussian likelihood N(data; f_i(lambda_j), noise_covariance) for every sample."""
    return np.exp(gaussian_log_likelihoods(ind_outputs, data, noise_covariance))


def rejection_sample(
    ensemble: SampleEnsemble,
    evidence: float,
    rng: np.random.Generator,
) -> RejectionResult:
    """Accept sample j when t_j < alpha_j / M with alpha_j = w_j L_j / evidence.

    M is the largest alpha over the ensemble and t_j ~ U(0, 1).

    Raises:
        ZeroEvidence: If evidence is not positive
        AllRejected: If no sample is accepted
    """
    if not evidence > 0.0:
        raise ZeroEvidence(f"Evidence must be positive, got {evidence}")
    log_alpha = ensemble.log_weights + ensemble.log_likelihoods - np.log(evidence)
    log_m = float(np.max(log_alpha))
    if not np.isfinite(log_m):
        raise AllRejected("Every sample has zero acceptance probability")

    eta = np.exp(log_alpha - log_m)
    t = rng.uniform(0.0, 1.0, size=ensemble.n_samples)
    accepted = np.flatnonzero(t < eta)
    if accepted.size == 0:
        raise AllRejected("Rejection sampling accepted no samples (severe prior-data conflict)")

    rate = accepted.size / ensemble.n_samples
    logger.info(f"Rejection sampling accepted {accepted.size}/{ensemble.n_samples} (rate {rate:.4f})")
    return RejectionResult(
        accepted_params=ensemble.params[accepted],
        accepted_indices=accepted,
        acceptance_rate=rate,
        scale_M=float(np.exp(log_m)),
    )


def sample_updated_density(ensemble: SampleEnsemble, rng: np.random.Generator) -> RejectionResult:
    """Rejection samples of the updated density, i.e. with a flat likelihood."""
    flat = ensemble.without_likelihoods()
    evidence = float(np.exp(log_pop_evidence(flat.log_weights, flat.log_likelihoods)))
    return rejection_sample(flat, evidence, rng)


def _kl_terms(log_alpha: np.ndarray) -> np.ndarray:
    terms = np.zeros_like(log_alpha)
    finite = np.isfinite(log_alpha)
    terms[finite] = np.exp(log_alpha[finite]) * log_alpha[finite]
    return terms


def _log_alpha(weights: ArrayLike, likelihoods: ArrayLike, evidence: float) -> np.ndarray:
    if not evidence > 0.0:
        raise ZeroEvidence(f"Evidence must be positive, got {evidence}")
    weights = _log(weights)
    likelihoods = _log(likelihoods)
    if weights.shape != likelihoods.shape:
        raise DimensionMismatch(f"{weights.shape[0]} weights but {likelihoods.shape[0]} likelihoods")
    return weights + likelihoods - np.log(evidence)


def mc_kl_estimate(weights: ArrayLike, likelihoods: ArrayLike, evidence: float) -> float:
    """Monte Carlo KL of the posterior from the prior: mean of alpha log alpha.

    Pass weights of one for the standard posterior. Terms with
    w_j L_j = 0 contribute zero.
    """
    return float(np.mean(_kl_terms(_log_alpha(weights, likelihoods, evidence))))


def mc_kl_standard_error(weights: ArrayLike, likelihoods: ArrayLike, evidence: float) -> float:
    """Standard error of :func:`mc_kl_estimate`."""
    terms = _kl_terms(_log_alpha(weights, likelihoods, evidence))
    return float(np.std(terms, ddof=1) / np.sqrt(terms.shape[0]))


def mc_kl_from_logs(log_weights: np.ndarray, log_likelihoods: np.ndarray, log_evidence: float) -> Tuple[float, float]:
    """KL estimate and its standard error from log-space inputs."""
    terms = _kl_terms(log_weights + log_likelihoods - log_evidence)
    return float(np.mean(terms)), float(np.std(terms, ddof=1) / np.sqrt(terms.shape[0]))


def weighted_moments(params: ArrayLike, weights: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
    """Updated-density mean and covariance from ratio weights, normalized by N."""
    params = _as_rows(params)
    weights = as_vector(weights)
    n = params.shape[0]
    mean = weights @ params / n
    second = (params * weights[:, None]).T @ params / n
    return mean, second - np.outer(mean, mean)


def build_ensemble(
    params: ArrayLike,
    pop_model: Callable[[np.ndarray], np.ndarray],
    ind_model: Callable[[np.ndarray], np.ndarray],
    observed: DensityEvaluator,
    data: Optional[ArrayLike],
    noise_covariance: ArrayLike,
    bandwidth: Optional[BandwidthRule] = None,
    n_jobs: int = 1,
) -> Tuple[SampleEnsemble, KernelDensityEstimate]:
    """Sampling pre-processing: model outputs, predicted-density KDE, weights, likelihoods.

    Args:
        params: (N, n) draws from the initial density
        pop_model: Population model evaluated on a batch of parameters
        ind_model: Individual model evaluated on a batch of parameters
        observed: Observed density on the population outputs
        data: Individual data, or None to leave the likelihood flat
        noise_covariance: Noise covariance of the individual data
        bandwidth: KDE bandwidth rule
        n_jobs: joblib workers for the forward evaluations

    Returns:
        The populated ensemble and the predicted-density estimate
    """
    params = _as_rows(params)
    pop_outputs = _as_rows(evaluate_batch(pop_model, params, n_jobs=n_jobs))
    ind_outputs = _as_rows(evaluate_batch(ind_model, params, n_jobs=n_jobs))

    kde = fit_kde(pop_outputs, bandwidth=bandwidth)
    log_weights = log_ratio_weights(pop_outputs, observed, kde)
    if data is None:
        log_likelihoods = np.zeros(params.shape[0])
    else:
        log_likelihoods = gaussian_log_likelihoods(ind_outputs, data, noise_covariance)

    ensemble = SampleEnsemble(
        params=params,
        pop_outputs=pop_outputs,
        ind_outputs=ind_outputs,
        log_weights=log_weights,
        log_likelihoods=log_likelihoods,
    )
    logger.info(f"Built ensemble of {ensemble.n_samples} samples")
    return ensemble, kde
