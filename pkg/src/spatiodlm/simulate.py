"""Synthetic data from the joint and single-zone generative models."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from spatiodlm.kernels import EXPONENTIAL, kernel_matrix
from spatiodlm.model import (
    HarmonicConfig,
    JointStaticParams,
    KernelParams,
    PanelData,
    SpecValidationError,
    TimeGrid,
    ZoneGeometry,
    harmonic_design,
)
from spatiodlm.smoother import LatentPath, psd_factor

# Posterior means for eight zones reported for the North Florida fit.
TABLE1_V = (0.034, 0.025, 0.059, 0.037, 0.031, 0.041, 0.119, 0.045)
TABLE1_W = (0.021, 0.024, 0.023, 0.025, 0.024, 0.034, 0.099, 0.029)
TABLE1_THETA1 = (0.357, 0.213, 0.213, 0.251, 0.226, 0.249, -0.181, -0.014)
TABLE1_THETA2 = (0.585, 0.651, 0.566, 0.424, 0.809, 0.601, 1.264, 0.945)
TABLE1_ETA1 = (1.688, 1.527)
TABLE1_ETA2 = (1.545, 1.603)
TABLE1_ETA3 = (1.352, 1.103)


def table1_geometry(spacing_deg: float = 0.0004, lon0: float = -82.0, lat0: float = 30.0) -> ZoneGeometry:
    """Eight zones on a 4 x 2 lattice; the default spacing is roughly 40 m.

    At the published kernel decay the level shocks of neighbouring zones are
    then strongly correlated.
    """
    col = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    row = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    return ZoneGeometry.from_coordinates(
        [f"zone_{j + 1}" for j in range(8)], lon0 + spacing_deg * col, lat0 + spacing_deg * row
    )


def table1_params(level_init_mean: float = 6.0, level_init_var: float = 20.0,
                  eta3: Optional[tuple] = None) -> JointStaticParams:
    """Eight-zone parameters at the published posterior means."""
    nz = len(TABLE1_V)
    return JointStaticParams(
        obs_var=TABLE1_V, sys_var=TABLE1_W, theta1=TABLE1_THETA1, theta2=TABLE1_THETA2,
        eta1=KernelParams(*TABLE1_ETA1), eta2=KernelParams(*TABLE1_ETA2),
        eta3=KernelParams(*(eta3 or TABLE1_ETA3)),
        init_mean=np.full(nz, level_init_mean), init_var=level_init_var * np.eye(nz),
    )


@dataclass(frozen=True)
class SimulationRecipe:
    params: JointStaticParams
    geometry: ZoneGeometry
    grid: TimeGrid
    missingness: Union[float, np.ndarray] = 0.0
    seed: int = 0
    harmonic: HarmonicConfig = HarmonicConfig()
    kernel: str = EXPONENTIAL

    def __post_init__(self):
        problems = []
        if np.ndim(self.missingness) == 0:
            if not 0 <= float(self.missingness) < 1:
                problems.append("missingness probability must be in [0, 1)")
        elif np.shape(self.missingness) != (self.grid.n, self.geometry.n_zones):
            problems.append("explicit missingness mask has the wrong shape")
        if self.params.n_zones != self.geometry.n_zones:
            problems.append("params and geometry disagree on the number of zones")
        if problems:
            raise SpecValidationError(problems)


def _mask(missingness, shape, rng) -> np.ndarray:
    """Observation mask, independent of the simulated values."""
    if np.ndim(missingness) == 0:
        return rng.random(shape) >= float(missingness)
    return np.asarray(missingness, dtype=bool)


def simulate_joint(recipe: SimulationRecipe) -> tuple[PanelData, LatentPath]:
    """Draw a panel and its true level path from the joint model."""
    p = recipe.params
    rng = np.random.default_rng(recipe.seed)
    nz, n = p.n_zones, recipe.grid.n
    K3 = kernel_matrix(recipe.geometry, p.eta3, recipe.kernel)
    Lw = psd_factor(np.diag(p.sys_var) + K3.entries)
    L0 = psd_factor(p.init_var)
    states = np.empty((n + 1, nz))
    states[0] = p.init_mean + L0 @ rng.standard_normal(nz)
    for i in range(n):
        states[i + 1] = states[i] + recipe.grid.gap_scales[i] * (Lw @ rng.standard_normal(nz))
    s, c = harmonic_design(recipe.grid.times, recipe.harmonic)
    mean = np.outer(s, p.theta1) + np.outer(c, p.theta2) + states[1:]
    values = mean + rng.standard_normal((n, nz)) * np.sqrt(p.obs_var)
    observed = _mask(recipe.missingness, (n, nz), rng)
    return PanelData(recipe.grid, values, observed), LatentPath(states)


@dataclass(frozen=True)
class SingleZoneRecipe:
    obs_var: float
    sys_var: tuple
    grid: TimeGrid
    init_mean: tuple = (1.5, 1.5, 6.0)
    init_var: tuple = (1.5, 1.5, 20.0)
    missingness: float = 0.0
    seed: int = 0
    harmonic: HarmonicConfig = HarmonicConfig()


def simulate_single(recipe: SingleZoneRecipe) -> tuple[PanelData, LatentPath]:
    """Single-zone series with random-walk harmonic coefficients and level."""
    rng = np.random.default_rng(recipe.seed)
    n = recipe.grid.n
    W = np.asarray(recipe.sys_var, dtype=float)
    C0 = np.asarray(recipe.init_var, dtype=float)
    C0 = np.diag(C0) if C0.ndim == 1 else C0
    states = np.empty((n + 1, 3))
    states[0] = np.asarray(recipe.init_mean, float) + psd_factor(C0) @ rng.standard_normal(3)
    for i in range(n):
        states[i + 1] = states[i] + recipe.grid.gap_scales[i] * np.sqrt(W) * rng.standard_normal(3)
    s, c = harmonic_design(recipe.grid.times, recipe.harmonic)
    mean = s * states[1:, 0] + c * states[1:, 1] + states[1:, 2]
    values = mean + rng.standard_normal(n) * np.sqrt(recipe.obs_var)
    observed = _mask(recipe.missingness, (n,), rng)
    return PanelData(recipe.grid, values[:, None], observed[:, None]), LatentPath(states)
