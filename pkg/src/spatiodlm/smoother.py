"""Backward sampling of latent paths from a stored forward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from spatiodlm.filtering import FilterTrajectory


class SmoothingError(np.linalg.LinAlgError):
    def __init__(self, step: int):
        self.step = step
        super().__init__(f"degenerate smoothing step at index {step}")


@dataclass(frozen=True)
class LatentPath:
    """Sampled states, row 0 being the initial state at ``origin_time``."""

    states: np.ndarray

    @property
    def n(self) -> int:
        return self.states.shape[0] - 1


def psd_factor(H: np.ndarray) -> np.ndarray:
    """Lower-triangular factor of a symmetric PSD matrix.

    Falls back to an eigen-decomposition (clipping tiny negative
    eigenvalues) when Cholesky fails on a singular matrix; the fallback
    factor is square, not triangular, but generates the same covariance.
    """
    H = 0.5 * (H + H.T)
    try:
        return np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(H)
        scale = max(1.0, float(np.abs(vals).max()))
        if vals.min() < -1e-8 * scale:
            raise
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _backward_gain(C: np.ndarray, Wnext: np.ndarray, step: int):
    S = C + Wnext
    S = 0.5 * (S + S.T)
    try:
        cf = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError:
        raise SmoothingError(step) from None
    # J = C S^{-1}; S and C symmetric so J^T = S^{-1} C
    J = linalg.cho_solve(cf, C).T
    H = C - J @ C
    return J, 0.5 * (H + H.T)


def backward_sample(traj: FilterTrajectory, rng: np.random.Generator, size: int | None = None):
    """Draw joint posterior paths of the state given a forward pass.

    Samples the final state from the last filtered moments and walks back to
    the initial state, conditioning each step on the state drawn after it.
    With ``size`` given, returns a list of that many independent paths drawn
    in one vectorised sweep.
    """
    n = traj.n
    d = traj.m.shape[1]
    count = 1 if size is None else int(size)
    out = np.empty((count, n + 1, d))
    Ln = psd_factor(traj.C[n])
    out[:, n] = traj.m[n] + rng.standard_normal((count, d)) @ Ln.T
    for i in range(n - 1, -1, -1):
        C = traj.C[i]
        J, H = _backward_gain(C, traj.evolution[i], i)
        h = traj.m[i] + (out[:, i + 1] - traj.m[i]) @ J.T
        try:
            LH = psd_factor(H)
        except np.linalg.LinAlgError:
            raise SmoothingError(i) from None
        out[:, i] = h + rng.standard_normal((count, d)) @ LH.T
    if not np.all(np.isfinite(out)):
        raise SmoothingError(int(np.flatnonzero(~np.isfinite(out).all(axis=(0, 2)))[0]))
    if size is None:
        return LatentPath(out[0])
    return [LatentPath(p) for p in out]


def backward_moments(traj: FilterTrajectory, step: int):
    """Mean map and covariance of the backward conditional at ``step``.

    Returns ``(J, H)`` such that the state at ``step`` given the next one is
    ``N(m + J (next - m), H)``.
    """
    return _backward_gain(traj.C[step], traj.evolution[step], step)
