"""Spatial covariance matrices over zones and Gaussian-process prior densities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from spatiodlm.model import KernelParams, ZoneGeometry

EXPONENTIAL = "exponential"
SQUARED_EXPONENTIAL = "squared-exponential"
KERNEL_FORMS = (EXPONENTIAL, SQUARED_EXPONENTIAL)

JITTER_START = 1e-9
JITTER_MAX = 1e-3


class KernelSingularError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CovMatrix:
    """Kernel covariance with the jitter already on its diagonal.

    ``chol`` is the lower Cholesky factor of ``entries``.
    """

    entries: np.ndarray
    jitter: float
    chol: np.ndarray

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def kernel_values(distances, params: KernelParams, form: str = EXPONENTIAL) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if form == EXPONENTIAL:
        return params.sigma ** 2 * np.exp(-params.phi * d)
    if form == SQUARED_EXPONENTIAL:
        return params.sigma ** 2 * np.exp(-params.phi * d ** 2)
    raise ValueError(f"unknown kernel form {form!r}; expected one of {KERNEL_FORMS}")


def kernel_matrix(geometry: ZoneGeometry, params: KernelParams,
                  form: str = EXPONENTIAL) -> CovMatrix:
    """Covariance ``sigma^2 exp(-phi d)`` between zones, factorized.

    The smallest jitter in the ladder 1e-9, 1e-8, ..., 1e-3 (times sigma^2)
    for which a Cholesky factorization succeeds is added to the diagonal.
    """
    K = kernel_values(geometry.distances, params, form)
    K = 0.5 * (K + K.T)
    s2 = params.sigma ** 2
    jitter = JITTER_START * s2
    while jitter <= JITTER_MAX * s2 * (1 + 1e-12):
        Kj = K + jitter * np.eye(K.shape[0])
        try:
            L = np.linalg.cholesky(Kj)
        except np.linalg.LinAlgError:
            jitter *= 10.0
            continue
        Kj.setflags(write=False)
        L.setflags(write=False)
        return CovMatrix(Kj, jitter, L)
    raise KernelSingularError(
        f"kernel numerically singular (sigma={params.sigma}, phi={params.phi})"
    )


def gp_log_density(values, mean, cov: CovMatrix) -> float:
    """Multivariate normal log-density of ``values`` under ``N(mean, cov)``."""
    values = np.asarray(values, dtype=float)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), values.shape)
    if values.shape != (cov.n,):
        raise ValueError(f"values shape {values.shape} does not match covariance size {cov.n}")
    z = linalg.solve_triangular(cov.chol, values - mean, lower=True)
    return float(-0.5 * (cov.n * np.log(2 * np.pi) + z @ z) - 0.5 * cov.logdet())
