"""Forward Kalman filtering for the joint level model and the single-zone DLM.

Both models use an identity evolution matrix, so the prior mean at each
step is the previous posterior mean and only covariances change.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba as nb
import numpy as np

from spatiodlm._linalg import LOG_2PI, cholesky_lower, forward_subst
from spatiodlm.kernels import CovMatrix
from spatiodlm.model import HarmonicConfig, JointStaticParams, PanelData, harmonic_design


class FilterError(FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite likelihood"):
        self.step = step
        super().__init__(f"{message} at step {step}")


@dataclass(frozen=True)
class FilterTrajectory:
    """Stored moments of a forward pass.

    Row 0 of ``m`` and ``C`` is the initial state; row ``i`` (i >= 1) is the
    posterior after the i-th observation time. ``R[i-1]`` and
    ``evolution[i-1]`` are the prior covariance and evolution covariance for
    that same step.
    """

    m: np.ndarray
    C: np.ndarray
    R: np.ndarray
    evolution: np.ndarray
    loglik_steps: np.ndarray

    @property
    def loglik(self) -> float:
        return float(np.sum(self.loglik_steps))

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def m0(self) -> np.ndarray:
        return self.m[0]

    @property
    def C0(self) -> np.ndarray:
        return self.C[0]


@dataclass(frozen=True)
class IncidenceMatrix:
    rows: np.ndarray

    @property
    def n_obs(self) -> int:
        return self.rows.shape[0]


def incidence(mask_row) -> IncidenceMatrix:
    """Selection matrix picking the observed components in zone order."""
    mask_row = np.asarray(mask_row, dtype=bool)
    return IncidenceMatrix(np.eye(mask_row.size)[mask_row])


def detrend(panel: PanelData, theta1, theta2, config: HarmonicConfig = HarmonicConfig()) -> PanelData:
    s, c = harmonic_design(panel.grid.times, config)
    theta1 = np.asarray(theta1, dtype=float)
    theta2 = np.asarray(theta2, dtype=float)
    values = panel.values - np.outer(s, theta1) - np.outer(c, theta2)
    return PanelData(panel.grid, values, panel.observed)


def retrend(panel: PanelData, theta1, theta2, config: HarmonicConfig = HarmonicConfig()) -> PanelData:
    return detrend(panel, -np.asarray(theta1, float), -np.asarray(theta2, float), config)


@nb.njit(cache=True)
def _joint_filter(y, mask, gap2, Wbase, V, m0, C0, store, m_out, C_out, R_out, ll_out):
    n, nz = y.shape
    m = m0.copy()
    C = C0.copy()
    R = np.empty((nz, nz))
    S = np.empty((nz, nz))
    L = np.empty((nz, nz))
    B = np.empty((nz, nz))
    e = np.empty(nz)
    z = np.empty(nz)
    col = np.empty(nz)
    tmp = np.empty(nz)
    idx = np.empty(nz, dtype=np.int64)
    if store:
        m_out[0] = m
        C_out[0] = C
    total = 0.0
    for t in range(n):
        k2 = gap2[t]
        for i in range(nz):
            for j in range(nz):
                R[i, j] = C[i, j] + k2 * Wbase[i, j]
        p = 0
        for j in range(nz):
            if mask[t, j]:
                idx[p] = j
                p += 1
        ll = 0.0
        if p == 0:
            for i in range(nz):
                for j in range(nz):
                    C[i, j] = R[i, j]
        else:
            Sv = S[:p, :p]
            Lv = L[:p, :p]
            for a in range(p):
                for b in range(p):
                    Sv[a, b] = R[idx[a], idx[b]]
                Sv[a, a] += V[idx[a]]
                e[a] = y[t, idx[a]] - m[idx[a]]
            if not cholesky_lower(Sv, Lv):
                return -np.inf, t
            forward_subst(Lv, e[:p], z[:p])
            q = 0.0
            logdet = 0.0
            for a in range(p):
                q += z[a] * z[a]
                logdet += math.log(Lv[a, a])
            ll = -0.5 * (p * LOG_2PI + q) - logdet
            # B = L^{-1} R[idx, :]
            for j in range(nz):
                for a in range(p):
                    col[a] = R[idx[a], j]
                forward_subst(Lv, col[:p], tmp[:p])
                for a in range(p):
                    B[a, j] = tmp[a]
            for i in range(nz):
                s = 0.0
                for a in range(p):
                    s += B[a, i] * z[a]
                m[i] += s
            for i in range(nz):
                for j in range(i, nz):
                    s = 0.0
                    for a in range(p):
                        s += B[a, i] * B[a, j]
                    v = 0.5 * (R[i, j] + R[j, i]) - s
                    C[i, j] = v
                    C[j, i] = v
        if not math.isfinite(ll):
            return -np.inf, t
        total += ll
        if store:
            m_out[t + 1] = m
            C_out[t + 1] = C
            R_out[t] = R
            ll_out[t] = ll
    return total, -1


@nb.njit(cache=True)
def _single_filter(y, mask, F, gap2, Wdiag, V, m0, C0, store, m_out, C_out, R_out, ll_out):
    n = y.shape[0]
    d = m0.shape[0]
    m = m0.copy()
    C = C0.copy()
    R = np.empty((d, d))
    RF = np.empty(d)
    if store:
        m_out[0] = m
        C_out[0] = C
    total = 0.0
    for t in range(n):
        for i in range(d):
            for j in range(d):
                R[i, j] = C[i, j]
            R[i, i] += gap2[t] * Wdiag[i]
        ll = 0.0
        if mask[t]:
            f = 0.0
            for i in range(d):
                f += F[t, i] * m[i]
            for i in range(d):
                s = 0.0
                for j in range(d):
                    s += R[i, j] * F[t, j]
                RF[i] = s
            Q = V
            for i in range(d):
                Q += F[t, i] * RF[i]
            if not Q > 0.0:
                return -np.inf, t
            err = y[t] - f
            ll = -0.5 * (LOG_2PI + math.log(Q) + err * err / Q)
            for i in range(d):
                m[i] += RF[i] * err / Q
            for i in range(d):
                for j in range(i, d):
                    v = 0.5 * (R[i, j] + R[j, i]) - RF[i] * RF[j] / Q
                    C[i, j] = v
                    C[j, i] = v
        else:
            for i in range(d):
                for j in range(d):
                    C[i, j] = R[i, j]
        if not math.isfinite(ll):
            return -np.inf, t
        total += ll
        if store:
            m_out[t + 1] = m
            C_out[t + 1] = C
            R_out[t] = R
            ll_out[t] = ll
    return total, -1


def joint_loglik_arrays(y, mask, gap2, Wbase, V, m0, C0) -> float:
    """Total log-likelihood only, without storing the trajectory."""
    empty2 = np.empty((0, 0))
    empty3 = np.empty((0, 0, 0))
    total, _ = _joint_filter(y, mask, gap2, Wbase, V, m0, C0, False,
                             empty2, empty3, empty3, np.empty(0))
    return total


def run_joint_filter(y, mask, gap2, Wbase, V, m0, C0) -> FilterTrajectory:
    """Filter raw arrays: ``y`` (n, nz) with NaN-free filled values, ``Wbase`` the
    evolution covariance per unit time."""
    y = np.ascontiguousarray(y, dtype=float)
    mask = np.ascontiguousarray(mask, dtype=np.bool_)
    n, nz = y.shape
    gap2 = np.ascontiguousarray(gap2, dtype=float)
    Wbase = np.ascontiguousarray(Wbase, dtype=float)
    m_out = np.zeros((n + 1, nz))
    C_out = np.zeros((n + 1, nz, nz))
    R_out = np.zeros((n, nz, nz))
    ll_out = np.zeros(n)
    total, bad = _joint_filter(y, mask, gap2, Wbase, np.ascontiguousarray(V, dtype=float),
                               np.array(m0, dtype=float), np.array(C0, dtype=float), True,
                               m_out, C_out, R_out, ll_out)
    if bad >= 0:
        raise FilterError(bad)
    evolution = gap2[:, None, None] * Wbase[None, :, :]
    return FilterTrajectory(m_out, C_out, R_out, evolution, ll_out)


def evolution_base(params: JointStaticParams, K3: CovMatrix) -> np.ndarray:
    """Per-unit-time level evolution covariance ``diag(W) + K3``."""
    return np.diag(params.sys_var) + K3.entries


def forward_filter_joint(detrended: PanelData, params: JointStaticParams,
                         K3: CovMatrix) -> FilterTrajectory:
    """Filter the detrended panel for the level process of all zones.

    Partially observed steps use the observed subvector only; fully missing
    steps are pure time updates with zero likelihood contribution.
    Raises ``FilterError`` with the offending step if the likelihood is not
    finite.
    """
    if detrended.n_zones != params.n_zones or K3.n != params.n_zones:
        raise ValueError("panel, params and K3 disagree on the number of zones")
    return run_joint_filter(
        detrended.filled(), detrended.observed, detrended.grid.gap_scales ** 2,
        evolution_base(params, K3), params.obs_var, params.init_mean, params.init_var,
    )


def single_design(times, config: HarmonicConfig = HarmonicConfig()) -> np.ndarray:
    s, c = harmonic_design(times, config)
    return np.column_stack([s, c, np.ones_like(s)])


def forward_filter_single(panel: PanelData, V: float, W, m0, C0,
                          config: HarmonicConfig = HarmonicConfig(),
                          store: bool = True) -> FilterTrajectory | float:
    """Filter one zone's series under the time-varying harmonic DLM.

    With ``store=False`` only the total log-likelihood is returned.
    """
    if panel.n_zones != 1:
        raise ValueError("forward_filter_single expects a single-zone panel")
    y = np.ascontiguousarray(panel.filled()[:, 0])
    mask = np.ascontiguousarray(panel.observed[:, 0])
    F = single_design(panel.grid.times, config)
    gap2 = panel.grid.gap_scales ** 2
    W = np.asarray(W, dtype=float)
    m0 = np.asarray(m0, dtype=float)
    C0 = np.asarray(C0, dtype=float)
    n, d = y.size, m0.size
    if not store:
        e2, e3 = np.empty((0, 0)), np.empty((0, 0, 0))
        total, _ = _single_filter(y, mask, F, gap2, W, float(V), m0, C0, False, e2, e3, e3, np.empty(0))
        return total
    m_out = np.zeros((n + 1, d))
    C_out = np.zeros((n + 1, d, d))
    R_out = np.zeros((n, d, d))
    ll_out = np.zeros(n)
    total, bad = _single_filter(y, mask, F, gap2, W, float(V), m0, C0, True, m_out, C_out, R_out, ll_out)
    if bad >= 0:
        raise FilterError(bad)
    evolution = gap2[:, None, None] * np.diag(W)[None, :, :]
    return FilterTrajectory(m_out, C_out, R_out, evolution, ll_out)
