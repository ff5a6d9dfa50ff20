"""Within-sample predictive draws, k-step forecasts, harmonic summaries and RMSE."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from spatiodlm.kernels import EXPONENTIAL, kernel_matrix
from spatiodlm.model import HarmonicConfig, JointStaticParams, PanelData, TimeGrid, ZoneGeometry, harmonic_design
from spatiodlm.smoother import LatentPath, psd_factor


@dataclass(frozen=True)
class AmplitudePhase:
    amplitude: float
    phase: float


def amplitude_phase(theta1: float, theta2: float) -> AmplitudePhase:
    """Rewrite ``theta1 sin(wt) + theta2 cos(wt)`` as ``A cos(wt - phase)``.

    The phase lies in (-pi, pi] and is 0 when both coefficients vanish.
    """
    amp = math.hypot(theta1, theta2)
    if amp == 0.0:
        return AmplitudePhase(0.0, 0.0)
    phase = math.atan2(theta1, theta2)
    if phase <= -math.pi:
        phase = math.pi
    return AmplitudePhase(amp, phase)


def amplitude_phase_arrays(theta1, theta2) -> tuple[np.ndarray, np.ndarray]:
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    amp = np.hypot(theta1, theta2)
    phase = np.where(amp == 0, 0.0, np.arctan2(theta1, theta2))
    phase = np.where(phase <= -np.pi, np.pi, phase)
    return amp, phase


def _summaries(draws: np.ndarray, level: float):
    q = (1 - level) / 2
    return draws.mean(axis=0), np.quantile(draws, q, axis=0), np.quantile(draws, 1 - q, axis=0)


@dataclass(frozen=True)
class PredictiveResult:
    """Replicated observations ``draws[r, i, j]`` with per-cell summaries."""

    times: np.ndarray
    draws: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95


@dataclass(frozen=True)
class ForecastResult:
    horizons: np.ndarray
    draws: np.ndarray
    state_draws: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]


def within_sample_predictive(psi_draws: Sequence[JointStaticParams], latent_paths: Sequence[LatentPath],
                             panel: PanelData, config: HarmonicConfig = HarmonicConfig(),
                             rng: np.random.Generator | None = None, level: float = 0.95) -> PredictiveResult:
    """One replicated panel per posterior draw, at every fitted time."""
    if len(psi_draws) != len(latent_paths):
        raise ValueError(f"misaligned draws: {len(psi_draws)} parameter draws, {len(latent_paths)} paths")
    if not psi_draws:
        raise ValueError("no posterior draws supplied")
    rng = np.random.default_rng() if rng is None else rng
    s, c = harmonic_design(panel.grid.times, config)
    n, nz = panel.n, panel.n_zones
    out = np.empty((len(psi_draws), n, nz))
    for r, (psi, path) in enumerate(zip(psi_draws, latent_paths)):
        if path.states.shape != (n + 1, nz):
            raise ValueError(f"path {r} has shape {path.states.shape}, expected {(n + 1, nz)}")
        mean = np.outer(s, psi.theta1) + np.outer(c, psi.theta2) + path.states[1:]
        out[r] = mean + rng.standard_normal((n, nz)) * np.sqrt(psi.obs_var)
    return PredictiveResult(panel.grid.times, out, *_summaries(out, level), level=level)


def single_zone_predictive(variances, latent_paths: Sequence[LatentPath], panel: PanelData,
                           config: HarmonicConfig = HarmonicConfig(),
                           rng: np.random.Generator | None = None, level: float = 0.95) -> PredictiveResult:
    """Replicated series under the time-varying harmonic model of one zone.

    ``variances`` rows are ``(V, W1, W2, W3)``; only ``V`` is used here.
    """
    variances = np.asarray(variances, dtype=float).reshape(-1, 4)
    if variances.shape[0] != len(latent_paths):
        raise ValueError("misaligned draws")
    rng = np.random.default_rng() if rng is None else rng
    s, c = harmonic_design(panel.grid.times, config)
    out = np.empty((len(latent_paths), panel.n, 1))
    for r, path in enumerate(latent_paths):
        th = path.states[1:]
        mean = s * th[:, 0] + c * th[:, 1] + th[:, 2]
        out[r, :, 0] = mean + math.sqrt(variances[r, 0]) * rng.standard_normal(panel.n)
    return PredictiveResult(panel.grid.times, out, *_summaries(out, level), level=level)


def forecast_moments(m_n, C_n, Wbase, V, gap_scales):
    """Level and observation forecast covariances for each horizon.

    Returns ``(mean, R, Q)`` with ``R[k-1] = C_n + sum_{i<=k} k_i^2 Wbase`` and
    ``Q = R + diag(V)``; the mean does not move under a random walk.
    """
    gap2 = np.asarray(gap_scales, dtype=float) ** 2
    steps = np.cumsum(gap2)
    R = np.asarray(C_n)[None] + steps[:, None, None] * np.asarray(Wbase)[None]
    Q = R + np.diag(np.asarray(V, dtype=float))[None]
    return np.asarray(m_n, dtype=float), R, Q


def k_step_forecast(traj_ends, psi_draws: Sequence[JointStaticParams], grid_extension: TimeGrid,
                    geometry: ZoneGeometry, config: HarmonicConfig = HarmonicConfig(),
                    rng: np.random.Generator | None = None, kernel: str = EXPONENTIAL,
                    level: float = 0.95) -> ForecastResult:
    """Forecast draws at future times, one per posterior draw.

    ``traj_ends[r]`` is ``(m_n, C_n)`` from the filter run with ``psi_draws[r]``.
    ``grid_extension`` must start where the fitted grid stopped, so its first
    gap is the distance from the last fitted time.
    """
    if grid_extension.n == 0:
        raise ValueError("forecast horizon must be at least one step")
    if len(traj_ends) != len(psi_draws):
        raise ValueError("misaligned draws")
    rng = np.random.default_rng() if rng is None else rng
    s, c = harmonic_design(grid_extension.times, config)
    k, nz = grid_extension.n, geometry.n_zones
    N = len(psi_draws)
    obs = np.empty((N, k, nz))
    states = np.empty((N, k, nz))
    for r, ((m_n, C_n), psi) in enumerate(zip(traj_ends, psi_draws)):
        K3 = kernel_matrix(geometry, psi.eta3, kernel)
        mean, R, Q = forecast_moments(m_n, C_n, np.diag(psi.sys_var) + K3.entries, psi.obs_var,
                                      grid_extension.gap_scales)
        harmonic = np.outer(s, psi.theta1) + np.outer(c, psi.theta2)
        for h in range(k):
            states[r, h] = mean + psd_factor(R[h]) @ rng.standard_normal(nz)
            obs[r, h] = mean + harmonic[h] + psd_factor(Q[h]) @ rng.standard_normal(nz)
    return ForecastResult(grid_extension.times, obs, states, *_summaries(obs, level), level=level)


def rmse_by_zone(observed: PanelData, predictive_draws) -> np.ndarray:
    """Mean over observed times of the across-draw RMSE, per zone."""
    draws = np.asarray(getattr(predictive_draws, "draws", predictive_draws), dtype=float)
    if draws.shape[1:] != observed.values.shape:
        raise ValueError(f"draws shape {draws.shape[1:]} does not match panel {observed.values.shape}")
    counts = observed.observed.sum(axis=0)
    if np.any(counts == 0):
        raise ValueError(f"zones without observations: {np.flatnonzero(counts == 0) + 1}")
    per_time = np.sqrt(np.mean((draws - observed.filled()[None]) ** 2, axis=0))
    return np.where(observed.observed, per_time, 0.0).sum(axis=0) / counts


def interval_coverage(lower, upper, truth, mask=None) -> float:
    truth = np.asarray(truth, dtype=float)
    inside = (np.asarray(lower) <= truth) & (truth <= np.asarray(upper))
    if mask is not None:
        inside = inside[np.asarray(mask, dtype=bool)]
    return float(np.mean(inside))
