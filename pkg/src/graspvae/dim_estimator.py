"""Grasp-space dimension from the spectrum of a centred kernel matrix.

The estimate is the number of leading eigenvalues of the centred kernel
matrix needed to reach a fraction (default 0.9) of their total.

Default kernel: rbf with gamma = 1 / n_features on normalized inputs. The
median-distance bandwidth is available but spreads the spectrum of flat
manifolds over many nonlinear modes and overestimates their dimension.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import kernels
from .errors import NumericError, UsageError, ValidationError

log = logging.getLogger(__name__)

MEDIAN_HEURISTIC = "median-heuristic"
INVERSE_FEATURES = "inverse-features"
CLIP_REL_TOL = 1e-10


@dataclass(frozen=True)
class KpcaConfig:
    kernel: str = "rbf"
    gamma: Union[float, str] = INVERSE_FEATURES
    threshold: float = 0.9
    solver: str = "jacobi"  # or "lapack"

    def __post_init__(self):
        if self.kernel not in ("rbf", "linear"):
            raise ValidationError(f"unknown kernel {self.kernel!r}")
        if not 0.0 < self.threshold <= 1.0:
            raise ValidationError("threshold must be in (0, 1]")
        if self.gamma not in (MEDIAN_HEURISTIC, INVERSE_FEATURES) and not float(self.gamma) > 0:
            raise ValidationError("explicit gamma must be > 0")
        if self.solver not in ("jacobi", "lapack"):
            raise ValidationError(f"unknown solver {self.solver!r}")


@dataclass(frozen=True)
class SpectrumReport:
    eigenvalues: np.ndarray  # descending, clipped at 0
    cumulative: np.ndarray  # cumulative information fraction
    dimension: int
    threshold: float
    gamma: float  # nan for the linear kernel
    degenerate: bool = False

    def to_dict(self):
        return {
            "dimension": self.dimension,
            "threshold": self.threshold,
            "gamma": None if np.isnan(self.gamma) else self.gamma,
            "degenerate": self.degenerate,
            "eigenvalues": self.eigenvalues.tolist(),
            "cumulative": self.cumulative.tolist(),
        }


def median_gamma(sq_dists):
    """gamma = 1 / (2 * median^2) over distinct pairs; None if all pairs coincide."""
    iu = np.triu_indices(len(sq_dists), 1)
    med = np.median(np.sqrt(sq_dists[iu]))
    if med <= 0.0:
        return None
    return 1.0 / (2.0 * med * med)


def kernel_matrix(x, config: KpcaConfig):
    """Kernel matrix of rows of ``x`` and the gamma used (nan for linear)."""
    x = np.ascontiguousarray(x, dtype=float)
    if config.kernel == "linear":
        return x @ x.T, float("nan")
    sq = kernels.sq_distances(x)
    if config.gamma == INVERSE_FEATURES:
        gamma = 1.0 / x.shape[1]
    elif config.gamma == MEDIAN_HEURISTIC:
        gamma = median_gamma(sq)
        if gamma is None:
            gamma = 1.0  # all points coincide; the centred matrix vanishes anyway
    else:
        gamma = float(config.gamma)
    return np.exp(-gamma * sq), gamma


def symmetric_eigenvalues(a, solver="jacobi"):
    if solver == "lapack":
        return np.linalg.eigvalsh(a)
    vals, _, _ = kernels.jacobi_eigh(np.ascontiguousarray(a))
    return vals


def dimension_from_spectrum(eigenvalues, threshold):
    """Smallest m whose leading-m eigenvalue share reaches ``threshold``."""
    total = eigenvalues.sum()
    cumulative = np.cumsum(eigenvalues) / total
    # guard against the last partial sum landing a few ulps under 1
    m = int(np.searchsorted(cumulative, threshold - 1e-12, side="left")) + 1
    return min(m, len(eigenvalues)), cumulative


def estimate_dimension(configs, config: KpcaConfig = KpcaConfig()) -> SpectrumReport:
    """Kernel-PCA dimension of a set of (already normalized) configurations."""
    x = np.asarray(configs, dtype=float)
    if x.ndim != 2 or len(x) < 3:
        raise UsageError("estimate_dimension needs at least 3 configurations as an (N, d) array")
    if not np.all(np.isfinite(x)):
        raise NumericError("non-finite configuration component")
    k, gamma = kernel_matrix(x, config)
    if not np.all(np.isfinite(k)):
        raise NumericError("non-finite kernel entry")
    kc = kernels.center_gram(k)
    kc = 0.5 * (kc + kc.T)
    vals = np.sort(symmetric_eigenvalues(kc, config.solver))[::-1]
    lam_max = max(vals[0], 0.0)
    if vals[-1] < -CLIP_REL_TOL * lam_max:
        log.warning("kernel matrix not PSD: eigenvalue %.3g clipped to 0", vals[-1])
    vals = np.maximum(vals, 0.0)
    scale = max(1.0, float(np.abs(k).max()))
    if lam_max <= 1e-12 * scale * len(x):
        log.warning("centred kernel matrix vanishes: all configurations coincide; dimension 0")
        return SpectrumReport(vals * 0.0, np.zeros_like(vals), 0, config.threshold, gamma, degenerate=True)
    dim, cumulative = dimension_from_spectrum(vals, config.threshold)
    return SpectrumReport(vals, cumulative, dim, config.threshold, gamma)
