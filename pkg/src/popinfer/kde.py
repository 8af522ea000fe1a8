"""Gaussian kernel density estimation with a diagonal bandwidth."""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy.interpolate import RegularGridInterpolator
from scipy.signal import fftconvolve
from scipy.special import logsumexp

from .core import get_config
from .errors import DegenerateSamples, DimensionMismatch

logger = logging.getLogger("popinfer.kde")

_LOG_2PI = np.log(2.0 * np.pi)

# Query/support pair count above which "auto" switches to the binned evaluator
AUTO_BINNED_THRESHOLD = 5e7
# Kernel truncation in bandwidths
KERNEL_REACH = 6.0
# Grid spacing as a fraction of the bandwidth
GRID_RESOLUTION = 0.1
MAX_GRID_POINTS = {1: 8192, 2: 640}
EXACT_CHUNK_ELEMENTS = 4_000_000

BandwidthRule = Union[str, float]


def _as_points(points: ArrayLike, dim: int) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    if points.ndim <= 1:
        points = points.reshape(-1, dim) if dim == 1 else points.reshape(1, -1)
    if points.shape[1] != dim:
        raise DimensionMismatch(f"Points have dimension {points.shape[1]}, estimate has {dim}")
    return points


def bandwidth_factor(rule: BandwidthRule, n: int, dim: int) -> float:
    """Multiplier applied to the per-dimension sample standard deviations.

    Args:
        rule: "scott", "silverman" or a positive number used as the factor
        n: Number of samples
        dim: Output dimension

    Returns:
        The bandwidth factor
    """
    if isinstance(rule, str):
        if rule == "scott":
            return n ** (-1.0 / (dim + 4))
        if rule == "silverman":
            return (4.0 / (dim + 2)) ** (1.0 / (dim + 4)) * n ** (-1.0 / (dim + 4))
        raise ValueError(f"Unknown bandwidth rule: {rule}")
    factor = float(rule)
    if factor <= 0:
        raise ValueError(f"Bandwidth factor must be positive, got {factor}")
    return factor


@dataclass(frozen=True)
class KernelDensityEstimate:
    """Gaussian-kernel density estimate of push-forward samples."""

    support_points: np.ndarray
    bandwidth_matrix: np.ndarray
    kernel: str = "gaussian"

    @property
    def dim(self) -> int:
        return int(self.support_points.shape[1])

    @property
    def n_points(self) -> int:
        return int(self.support_points.shape[0])

    @property
    def bandwidths(self) -> np.ndarray:
        return np.sqrt(np.diag(self.bandwidth_matrix))

    def log_pdf(self, points: ArrayLike, method: str = "auto") -> np.ndarray:
        """Log density at each query point.

        Args:
            points: (M, m) query points, or a flat array for m = 1
            method: "exact", "binned" or "auto"

        Returns:
            An M-vector of log densities (-inf where the density vanishes)
        """
        points = _as_points(points, self.dim)
        if method == "auto":
            large = self.n_points * points.shape[0] > AUTO_BINNED_THRESHOLD
            method = "binned" if large and self.dim in MAX_GRID_POINTS else "exact"
        if method == "exact":
            return self._log_pdf_exact(points)
        if method == "binned":
            return self._log_pdf_binned(points)
        raise ValueError(f"Unknown evaluation method: {method}")

    def pdf(self, points: ArrayLike, method: str = "auto") -> np.ndarray:
        return np.exp(self.log_pdf(points, method=method))

    def _log_pdf_exact(self, points: np.ndarray) -> np.ndarray:
        h = self.bandwidths
        support = self.support_points / h
        scaled = points / h
        norm = np.log(self.n_points) + np.sum(np.log(h)) + 0.5 * self.dim * _LOG_2PI

        chunk = max(1, EXACT_CHUNK_ELEMENTS // (self.n_points * self.dim))
        out = np.empty(points.shape[0])
        for start in range(0, points.shape[0], chunk):
            block = scaled[start:start + chunk]
            sq = np.sum((block[:, None, :] - support[None, :, :]) ** 2, axis=2)
            out[start:start + chunk] = logsumexp(-0.5 * sq, axis=1) - norm
        return out

    def _grid(self) -> Tuple[list, np.ndarray]:
        h = self.bandwidths
        axes = []
        for k in range(self.dim):
            lo = self.support_points[:, k].min() - KERNEL_REACH * h[k]
            hi = self.support_points[:, k].max() + KERNEL_REACH * h[k]
            n_grid = int(np.ceil((hi - lo) / (GRID_RESOLUTION * h[k]))) + 1
            if n_grid > MAX_GRID_POINTS[self.dim]:
                logger.warning(
                    f"KDE grid capped at {MAX_GRID_POINTS[self.dim]} points in dimension {k}; "
                    "binned densities lose resolution"
                )
                n_grid = MAX_GRID_POINTS[self.dim]
            axes.append(np.linspace(lo, hi, n_grid))
        return axes, self._binned_density(axes)

    def _binned_density(self, axes: list) -> np.ndarray:
        """Linear binning of the support points followed by FFT convolution."""
        shape = tuple(len(a) for a in axes)
        steps = np.array([a[1] - a[0] for a in axes])
        pos = (self.support_points - np.array([a[0] for a in axes])) / steps
        base = np.clip(np.floor(pos).astype(int), 0, np.array(shape) - 2)
        frac = pos - base

        counts = np.zeros(int(np.prod(shape)))
        for corner in np.ndindex(*([2] * self.dim)):
            corner = np.array(corner)
            idx = base + corner
            w = np.prod(np.where(corner == 1, frac, 1.0 - frac), axis=1)
            counts += np.bincount(np.ravel_multi_index(idx.T, shape), weights=w, minlength=counts.size)
        counts = counts.reshape(shape) / self.n_points

        kernel = None
        for k, step in enumerate(steps):
            h = self.bandwidths[k]
            reach = int(np.ceil(KERNEL_REACH * h / step))
            offsets = np.arange(-reach, reach + 1) * step
            k1 = np.exp(-0.5 * (offsets / h) ** 2)
            k1 /= k1.sum()
            kernel = k1 if kernel is None else np.multiply.outer(kernel, k1)
        density = fftconvolve(counts, kernel, mode="same") / np.prod(steps)
        return np.clip(density, 0.0, None)

    def _log_pdf_binned(self, points: np.ndarray) -> np.ndarray:
        if self.dim not in MAX_GRID_POINTS:
            logger.warning(f"Binned evaluation unsupported for dimension {self.dim}, using exact")
            return self._log_pdf_exact(points)
        axes, density = self._grid()
        inside = np.all(
            [(points[:, k] >= axes[k][0]) & (points[:, k] <= axes[k][-1]) for k in range(self.dim)],
            axis=0,
        )
        values = np.empty(points.shape[0])
        if self.dim == 1:
            values[inside] = np.interp(points[inside, 0], axes[0], density)
        else:
            interp = RegularGridInterpolator(axes, density, method="linear")
            values[inside] = interp(points[inside])
        with np.errstate(divide="ignore"):
            out = np.log(values)
        if not np.all(inside):
            out[~inside] = self._log_pdf_exact(points[~inside])
        return out


def fit_kde(outputs: ArrayLike, bandwidth: Optional[BandwidthRule] = None) -> KernelDensityEstimate:
    """Fit a Gaussian KDE with diagonal bandwidth h_k = factor * std_k.

    Args:
        outputs: (N, m) samples, or a flat array of N scalar samples
        bandwidth: Bandwidth rule name or numeric factor; the configured
            default (``scott``) when None

    Returns:
        The fitted estimate

    Raises:
        DegenerateSamples: If N < 2 or some output dimension has zero spread
    """
    outputs = np.asarray(outputs, dtype=float)
    if outputs.ndim == 1:
        outputs = outputs.reshape(-1, 1)
    n, dim = outputs.shape
    if n < 2 or dim < 1:
        raise DegenerateSamples(f"Need at least two samples to fit a KDE, got {n}")

    std = np.std(outputs, axis=0, ddof=1)
    if not np.all(np.isfinite(std)) or np.any(std <= 0.0):
        raise DegenerateSamples(f"Output samples have zero spread: std = {std}")

    if bandwidth is None:
        bandwidth = get_config().get("kde_bandwidth", "scott")
    h = bandwidth_factor(bandwidth, n, dim) * std
    logger.debug(f"KDE fitted on {n} samples with bandwidths {h}")
    return KernelDensityEstimate(support_points=outputs.copy(), bandwidth_matrix=np.diag(h ** 2))
