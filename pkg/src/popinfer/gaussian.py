"""Multivariate Gaussian densities, linear maps and SPD matrix utilities."""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np
import scipy.linalg as la
from numpy.typing import ArrayLike

from .errors import DimensionMismatch, NotPositiveDefinite, NotSymmetric, RankDeficient

logger = logging.getLogger("popinfer.gaussian")

SYMMETRY_TOLERANCE = 1e-12
RANK_TOLERANCE = 1e-12

_LOG_2PI = np.log(2.0 * np.pi)


def as_vector(x: ArrayLike) -> np.ndarray:
    """Return ``x`` as a 1-D float array."""
    return np.atleast_1d(np.asarray(x, dtype=float)).reshape(-1)


def as_matrix(a: ArrayLike) -> np.ndarray:
    """Return ``a`` as a 2-D float array (scalars become 1x1)."""
    return np.atleast_2d(np.asarray(a, dtype=float))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class GaussianDensity:
    """Multivariate Gaussian N(mean, covariance).

    Build instances with :func:`make_gaussian`, which validates the
    covariance and caches its lower Cholesky factor.
    """

    mean: np.ndarray
    covariance: np.ndarray
    cholesky: np.ndarray = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def log_pdf(self, x: ArrayLike) -> Union[float, np.ndarray]:
        return log_pdf(self, x)

    def pdf(self, x: ArrayLike) -> Union[float, np.ndarray]:
        return np.exp(log_pdf(self, x))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return sample(self, rng, n)


@dataclass(frozen=True)
class LinearMap:
    """Dense matrix from parameter space (columns) to data space (rows)."""

    matrix: np.ndarray

    @property
    def input_dim(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def output_dim(self) -> int:
        return int(self.matrix.shape[0])

    def __call__(self, params: ArrayLike) -> np.ndarray:
        params = np.asarray(params, dtype=float)
        return params @ self.matrix.T


class PrecisionSummary(NamedTuple):
    """Determinant and trace of an inverse covariance (D- and A-optimality)."""

    det_of_inverse: float
    trace_of_inverse: float


def make_gaussian(mean: ArrayLike, covariance: ArrayLike) -> GaussianDensity:
    """Validate a mean/covariance pair and build a Gaussian density.

    Args:
        mean: Mean vector of length n
        covariance: Symmetric positive definite n x n matrix

    Returns:
        The validated density with its Cholesky factor cached

    Raises:
        DimensionMismatch: If mean and covariance sizes disagree
        NotSymmetric: If the covariance is not symmetric to 1e-12 relative
        NotPositiveDefinite: If the Cholesky factorization fails
    """
    mean = as_vector(mean)
    covariance = as_matrix(covariance)

    if covariance.ndim != 2 or covariance.shape[0] != covariance.shape[1]:
        raise DimensionMismatch(f"Covariance must be square, got shape {covariance.shape}")
    if covariance.shape[0] != mean.shape[0]:
        raise DimensionMismatch(
            f"Mean has dimension {mean.shape[0]} but covariance is {covariance.shape}"
        )

    scale = np.max(np.abs(covariance))
    asymmetry = np.max(np.abs(covariance - covariance.T))
    if asymmetry > SYMMETRY_TOLERANCE * scale:
        raise NotSymmetric(f"Covariance asymmetry {asymmetry:.3e} exceeds tolerance")

    try:
        chol = la.cholesky(covariance, lower=True)
    except la.LinAlgError as e:
        raise NotPositiveDefinite(f"Covariance is not positive definite: {e}") from e
    if not np.all(np.isfinite(chol)) or np.any(np.diag(chol) <= 0.0):
        raise NotPositiveDefinite("Covariance factorization has non-positive pivots")

    return GaussianDensity(mean=_frozen(mean), covariance=_frozen(covariance), cholesky=_frozen(chol))


def make_linear_map(matrix: ArrayLike) -> LinearMap:
    """Build a linear map, checking full row rank through its singular values.

    Raises:
        RankDeficient: If rank(matrix) < number of rows
    """
    matrix = as_matrix(matrix)
    if matrix.shape[0] > matrix.shape[1]:
        raise RankDeficient(
            f"A {matrix.shape[0]}x{matrix.shape[1]} map cannot have full row rank"
        )
    singular_values = la.svdvals(matrix)
    cutoff = RANK_TOLERANCE * max(singular_values[0], 1.0) if singular_values.size else 0.0
    rank = int(np.sum(singular_values > cutoff))
    if rank < matrix.shape[0]:
        raise RankDeficient(f"Map has rank {rank}, expected {matrix.shape[0]}")
    return LinearMap(matrix=_frozen(matrix))


def log_pdf(g: GaussianDensity, x: ArrayLike) -> Union[float, np.ndarray]:
    """Exact Gaussian log density at a point or at each row of a batch.

    Args:
        g: The density
        x: A vector of length n, or an (N, n) array of points

    Returns:
        A float for a single point, an N-vector for a batch

    Raises:
        DimensionMismatch: If the point dimension differs from the density's
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    points = x.reshape(1, -1) if single else x
    if points.shape[1] != g.dim:
        raise DimensionMismatch(f"Point dimension {points.shape[1]} != density dimension {g.dim}")

    diff = points - g.mean
    z = la.solve_triangular(g.cholesky, diff.T, lower=True)
    maha = np.sum(z * z, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(g.cholesky)))
    values = -0.5 * (g.dim * _LOG_2PI + log_det + maha)
    return float(values[0]) if single else values


def sample(g: GaussianDensity, rng: np.random.Generator, n: int) -> np.ndarray:
    """Draw ``n`` i.i.d. samples as an (n, dim) array; n = 0 gives an empty array."""
    if n < 0:
        raise ValueError(f"Sample count must be non-negative, got {n}")
    z = rng.standard_normal((int(n), g.dim))
    return g.mean + z @ g.cholesky.T


def pushforward_linear(g: GaussianDensity, linear_map: LinearMap) -> GaussianDensity:
    """Push a Gaussian through a linear map: N(A mean, A cov A^T)."""
    if linear_map.input_dim != g.dim:
        raise DimensionMismatch(
            f"Map expects dimension {linear_map.input_dim}, density has {g.dim}"
        )
    a = linear_map.matrix
    cov = a @ g.covariance @ a.T
    return make_gaussian(a @ g.mean, symmetrize(cov))


def kl_gaussian(p: GaussianDensity, q: GaussianDensity) -> float:
    """Analytic KL(p || q) in nats."""
    if p.dim != q.dim:
        raise DimensionMismatch(f"KL between dimensions {p.dim} and {q.dim}")
    k = p.dim
    log_det_p = 2.0 * np.sum(np.log(np.diag(p.cholesky)))
    log_det_q = 2.0 * np.sum(np.log(np.diag(q.cholesky)))
    diff = p.mean - q.mean
    z = la.solve_triangular(q.cholesky, diff, lower=True)
    # Tr(Γq⁻¹ Γp) = ||Lq⁻¹ Lp||_F²
    w = la.solve_triangular(q.cholesky, p.cholesky, lower=True)
    value = 0.5 * (log_det_q - log_det_p - k + float(z @ z) + float(np.sum(w * w)))
    return max(value, 0.0)


def precision_matrix(g: GaussianDensity) -> np.ndarray:
    """Inverse covariance from the cached factorization."""
    inv = la.cho_solve((g.cholesky, True), np.eye(g.dim))
    return symmetrize(inv)


def precision_summaries(g: GaussianDensity) -> PrecisionSummary:
    """Determinant and trace of the inverse covariance."""
    diag = np.diag(g.cholesky)
    det_inv = float(np.prod(1.0 / diag) ** 2)
    l_inv = la.solve_triangular(g.cholesky, np.eye(g.dim), lower=True)
    return PrecisionSummary(det_of_inverse=det_inv, trace_of_inverse=float(np.sum(l_inv * l_inv)))


def symmetrize(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)


def sym_sqrt(a: ArrayLike) -> np.ndarray:
    """Symmetric square root of an SPD matrix via eigendecomposition."""
    vals, vecs = la.eigh(as_matrix(a))
    if np.any(vals <= 0.0):
        raise NotPositiveDefinite(f"Matrix has non-positive eigenvalue {vals.min():.3e}")
    return symmetrize((vecs * np.sqrt(vals)) @ vecs.T)


def sym_inv_sqrt(a: ArrayLike) -> np.ndarray:
    """Symmetric inverse square root of an SPD matrix via eigendecomposition."""
    vals, vecs = la.eigh(as_matrix(a))
    if np.any(vals <= 0.0):
        raise NotPositiveDefinite(f"Matrix has non-positive eigenvalue {vals.min():.3e}")
    return symmetrize((vecs / np.sqrt(vals)) @ vecs.T)


def invert_precision(precision: ArrayLike) -> np.ndarray:
    """Covariance from a precision matrix through a single Cholesky factorization."""
    precision = symmetrize(as_matrix(precision))
    try:
        factor = la.cho_factor(precision, lower=True)
    except la.LinAlgError as e:
        raise NotPositiveDefinite(f"Precision matrix is not positive definite: {e}") from e
    return symmetrize(la.cho_solve(factor, np.eye(precision.shape[0])))
