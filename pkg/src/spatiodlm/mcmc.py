"""Random-walk Metropolis over the static parameters, and the two-stage fit.

The latent level path is integrated out by the forward filter, so the chain
targets the marginal posterior of the static parameters. Positive
parameters are proposed on the log scale; the Jacobian of that transform is
part of the target.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numba as nb
import numpy as np
from scipy import special

from spatiodlm import _linalg
from spatiodlm._linalg import jittered_cholesky, kernel_fill, mvn_logpdf_chol
from spatiodlm.filtering import (
    FilterError,
    FilterTrajectory,
    _joint_filter,
    _single_filter,
    detrend,
    forward_filter_joint,
    forward_filter_single,
    single_design,
)
from spatiodlm.kernels import (
    EXPONENTIAL,
    SQUARED_EXPONENTIAL,
    KernelSingularError,
    gp_log_density,
    kernel_matrix,
)
from spatiodlm.model import (
    HarmonicConfig,
    JointStaticParams,
    KernelParams,
    PanelData,
    PriorSpec,
    ZoneGeometry,
    harmonic_design,
)
from spatiodlm.smoother import LatentPath, backward_sample, psd_factor

log = logging.getLogger(__name__)

PAPER_SINGLE_M0 = (1.5, 1.5, 6.0)
PAPER_SINGLE_C0 = (1.5, 1.5, 20.0)

_FORM_CODES = {EXPONENTIAL: _linalg.EXPONENTIAL, SQUARED_EXPONENTIAL: _linalg.SQUARED_EXPONENTIAL}


# ---------------------------------------------------------------------------
# parameter vector layout


def param_names(n_zones: int) -> list[str]:
    names = []
    for prefix in ("V", "W", "theta1", "theta2"):
        names += [f"{prefix}_{j + 1}" for j in range(n_zones)]
    for k in (1, 2, 3):
        names += [f"sigma_{k}", f"phi_{k}"]
    return names


def _log_mask(n_zones: int) -> np.ndarray:
    mask = np.zeros(4 * n_zones + 6, dtype=bool)
    mask[: 2 * n_zones] = True
    mask[4 * n_zones:] = True
    return mask


def natural_vector(psi: JointStaticParams) -> np.ndarray:
    return np.concatenate([
        psi.obs_var, psi.sys_var, psi.theta1, psi.theta2,
        [psi.eta1.sigma, psi.eta1.phi, psi.eta2.sigma, psi.eta2.phi, psi.eta3.sigma, psi.eta3.phi],
    ])


def params_from_natural(x, init_mean, init_var) -> JointStaticParams:
    x = np.asarray(x, dtype=float)
    nz = (x.size - 6) // 4
    tail = x[4 * nz:]
    return JointStaticParams(
        obs_var=x[:nz], sys_var=x[nz:2 * nz], theta1=x[2 * nz:3 * nz], theta2=x[3 * nz:4 * nz],
        eta1=KernelParams(tail[0], tail[1]), eta2=KernelParams(tail[2], tail[3]),
        eta3=KernelParams(tail[4], tail[5]), init_mean=init_mean, init_var=init_var,
    )


def to_unconstrained(psi: JointStaticParams) -> np.ndarray:
    """Log for variances and kernel parameters, identity for harmonic coefficients."""
    x = natural_vector(psi)
    mask = _log_mask(psi.n_zones)
    if np.any(x[mask] <= 0):
        raise ValueError("positive parameters must be strictly positive")
    z = x.copy()
    z[mask] = np.log(x[mask])
    return z


def natural_from_unconstrained(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    x = z.copy()
    mask = _log_mask((z.shape[-1] - 6) // 4)
    x[..., mask] = np.exp(z[..., mask])
    return x


def from_unconstrained(z, init_mean, init_var) -> JointStaticParams:
    return params_from_natural(natural_from_unconstrained(z), init_mean, init_var)


# ---------------------------------------------------------------------------
# prior pieces


def log_inverse_gamma_variance(v, shape: float, rate: float):
    """Log-density of a variance whose reciprocal is Gamma(shape, rate)."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        tau = 1.0 / v
        return shape * math.log(rate) - special.gammaln(shape) + (shape - 1) * np.log(tau) - rate * tau - 2 * np.log(v)


def log_lognormal(x, mu: float, sd: float):
    x = np.asarray(x, dtype=float)
    lx = np.log(x)
    return -0.5 * np.log(2 * np.pi * sd ** 2) - 0.5 * ((lx - mu) / sd) ** 2 - lx


def log_prior(psi: JointStaticParams, geometry: ZoneGeometry, priors: PriorSpec,
              kernel: str = EXPONENTIAL) -> float:
    nz = psi.n_zones
    K1 = kernel_matrix(geometry, psi.eta1, kernel)
    K2 = kernel_matrix(geometry, psi.eta2, kernel)
    lp = gp_log_density(psi.theta1, np.full(nz, priors.gp_mean1), K1)
    lp += gp_log_density(psi.theta2, np.full(nz, priors.gp_mean2), K2)
    a, b = priors.precision_shape, priors.precision_rate
    lp += float(np.sum(log_inverse_gamma_variance(psi.obs_var, a, b)))
    lp += float(np.sum(log_inverse_gamma_variance(psi.sys_var, a, b)))
    for eta in (psi.eta1, psi.eta2, psi.eta3):
        lp += float(log_lognormal(eta.sigma, priors.log_sigma_mean, priors.log_sigma_sd))
        lp += float(log_lognormal(eta.phi, priors.log_phi_mean, priors.log_phi_sd))
    return lp


def log_posterior(psi: JointStaticParams, panel: PanelData, geometry: ZoneGeometry,
                  priors: PriorSpec = PriorSpec(), config: HarmonicConfig = HarmonicConfig(),
                  kernel: str = EXPONENTIAL, transformed: bool = False) -> float:
    """Unnormalised log marginal posterior of the static parameters.

    Composed from the public kernel, GP-density and filter functions. With
    ``transformed=True`` the log-Jacobian of the log-scale coordinates is
    added, giving the density the sampler targets. Numerical failures map
    to ``-inf``.
    """
    try:
        lp = log_prior(psi, geometry, priors, kernel)
        K3 = kernel_matrix(geometry, psi.eta3, kernel)
        traj = forward_filter_joint(detrend(panel, psi.theta1, psi.theta2, config), psi, K3)
    except (KernelSingularError, FilterError, np.linalg.LinAlgError):
        return -np.inf
    total = lp + traj.loglik
    if transformed:
        x = natural_vector(psi)
        total += float(np.sum(np.log(x[_log_mask(psi.n_zones)])))
    return float(total) if np.isfinite(total) else -np.inf


# ---------------------------------------------------------------------------
# compiled posterior for sampling


@nb.njit(cache=True)
def _joint_log_post(z, nz, y, mask, sinv, cosv, gap2, dist, m0, C0, a, b, lga,
                    mu_s, sd_s, mu_p, sd_p, gm1, gm2, form):
    lp = 0.0
    loga = a * math.log(b) - lga
    for j in range(2 * nz):
        u = z[j]
        lp += loga - a * u - b * math.exp(-u)
    c_s = -0.5 * math.log(2 * math.pi * sd_s * sd_s)
    c_p = -0.5 * math.log(2 * math.pi * sd_p * sd_p)
    off = 4 * nz
    for k in range(3):
        s = z[off + 2 * k]
        p = z[off + 2 * k + 1]
        lp += c_s - 0.5 * ((s - mu_s) / sd_s) ** 2
        lp += c_p - 0.5 * ((p - mu_p) / sd_p) ** 2
    if not math.isfinite(lp):
        return -np.inf
    K = np.empty((nz, nz))
    L = np.empty((nz, nz))
    work = np.empty(nz)
    mean = np.empty(nz)
    for k in range(2):
        sigma = math.exp(z[off + 2 * k])
        phi = math.exp(z[off + 2 * k + 1])
        kernel_fill(dist, sigma, phi, form, K)
        if jittered_cholesky(K, sigma * sigma, L) < 0:
            return -np.inf
        gm = gm1 if k == 0 else gm2
        for j in range(nz):
            mean[j] = gm
        lp += mvn_logpdf_chol(z[(2 + k) * nz:(3 + k) * nz], mean, L, work)
    sigma3 = math.exp(z[off + 4])
    phi3 = math.exp(z[off + 5])
    kernel_fill(dist, sigma3, phi3, form, K)
    if jittered_cholesky(K, sigma3 * sigma3, L) < 0:
        return -np.inf
    V = np.empty(nz)
    for j in range(nz):
        V[j] = math.exp(z[j])
        K[j, j] += math.exp(z[nz + j])
    n = y.shape[0]
    yt = np.empty((n, nz))
    for t in range(n):
        for j in range(nz):
            yt[t, j] = y[t, j] - z[2 * nz + j] * sinv[t] - z[3 * nz + j] * cosv[t]
    e2 = np.empty((0, 0))
    e3 = np.empty((0, 0, 0))
    ll, bad = _joint_filter(yt, mask, gap2, K, V, m0, C0, False, e2, e3, e3, np.empty(0))
    if bad >= 0:
        return -np.inf
    # prior terms above are densities of the log coordinates, Jacobian included
    total = lp + ll
    if not math.isfinite(total):
        return -np.inf
    return total


class JointPosterior:
    """Marginal log-posterior over unconstrained coordinates, compiled.

    Calling the object with a coordinate vector returns the same value as
    ``log_posterior(..., transformed=True)`` at the mapped parameters.
    """

    def __init__(self, panel: PanelData, geometry: ZoneGeometry, priors: PriorSpec = PriorSpec(),
                 config: HarmonicConfig = HarmonicConfig(), kernel: str = EXPONENTIAL):
        if panel.n_zones != geometry.n_zones:
            raise ValueError("panel and geometry disagree on the number of zones")
        self.panel, self.geometry, self.priors, self.config, self.kernel = panel, geometry, priors, config, kernel
        self.n_zones = nz = geometry.n_zones
        self.names = param_names(nz)
        self.dim = len(self.names)
        self.init_mean = np.full(nz, priors.level_init_mean)
        self.init_var = priors.level_init_var * np.eye(nz)
        s, c = harmonic_design(panel.grid.times, config)
        self._args = (
            nz, np.ascontiguousarray(panel.filled()), np.ascontiguousarray(panel.observed),
            np.ascontiguousarray(s), np.ascontiguousarray(c),
            np.ascontiguousarray(panel.grid.gap_scales ** 2), np.ascontiguousarray(geometry.distances),
            self.init_mean, self.init_var,
            float(priors.precision_shape), float(priors.precision_rate), float(special.gammaln(priors.precision_shape)),
            float(priors.log_sigma_mean), float(priors.log_sigma_sd),
            float(priors.log_phi_mean), float(priors.log_phi_sd),
            float(priors.gp_mean1), float(priors.gp_mean2), _FORM_CODES[kernel],
        )

    def __call__(self, z) -> float:
        return _joint_log_post(np.asarray(z, dtype=float), *self._args)

    def to_natural(self, z) -> np.ndarray:
        return natural_from_unconstrained(z)

    def params(self, z) -> JointStaticParams:
        return from_unconstrained(z, self.init_mean, self.init_var)


def initial_params(panel: PanelData, priors: PriorSpec = PriorSpec()) -> JointStaticParams:
    """Starting point: prior means for the harmonic, moment split for variances."""
    nz = panel.n_zones
    dv = np.empty(nz)
    for j in range(nz):
        x = panel.values[panel.observed[:, j], j]
        d = np.diff(x)
        dv[j] = np.var(d, ddof=1) if d.size > 1 else 1.0
    dv = np.where(np.isfinite(dv) & (dv > 0), dv, 1.0)
    sigma0 = math.exp(priors.log_sigma_mean)
    phi0 = math.exp(priors.log_phi_mean)
    eta = KernelParams(sigma0, phi0)
    return JointStaticParams.with_priors(
        obs_var=dv / 2, sys_var=dv / 2,
        theta1=np.full(nz, priors.gp_mean1), theta2=np.full(nz, priors.gp_mean2),
        eta1=eta, eta2=eta, eta3=eta, priors=priors,
    )


# ---------------------------------------------------------------------------
# sampler


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 22_000
    burn_in: int = 2_000
    thin: int = 1
    step_scale: Optional[float] = None
    proposal_cov: Optional[np.ndarray] = None
    seed: int = 0
    target_acceptance: float = 0.25
    adapt: bool = True
    pilot_rounds: int = 3
    pilot_iterations: int = 4_000

    def __post_init__(self):
        problems = []
        if not 0 <= self.burn_in < self.iterations:
            problems.append("burn_in must be in [0, iterations)")
        if self.thin < 1:
            problems.append("thin must be >= 1")
        if self.step_scale is not None and not self.step_scale > 0:
            problems.append("step_scale must be positive")
        if not 0 < self.target_acceptance < 1:
            problems.append("target_acceptance must be in (0, 1)")
        if self.proposal_cov is not None:
            P = np.asarray(self.proposal_cov, dtype=float)
            if P.ndim != 2 or P.shape[0] != P.shape[1] or not np.allclose(P, P.T):
                problems.append("proposal_cov must be a symmetric square matrix")
            elif np.linalg.eigvalsh(P).min() < -1e-12 * max(1.0, np.abs(P).max()):
                problems.append("proposal_cov must be positive semi-definite")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def kept(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))

    def describe(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "proposal_cov"}
        d["proposal_cov"] = "identity" if self.proposal_cov is None else "matrix"
        return d


@dataclass
class ChainOutput:
    draws: np.ndarray
    unconstrained: np.ndarray
    names: list
    acceptance_rate: float
    burn_in_acceptance_rate: float
    log_posterior_trace: np.ndarray
    seed: int
    config: McmcConfig
    step_scale: float
    proposal_cov: np.ndarray
    final_state: np.ndarray
    accepted: int = 0
    proposed: int = 0
    meta: dict = field(default_factory=dict)

    def summary(self, level: float = 0.95) -> list[tuple[str, float, float, float]]:
        lo_q, hi_q = (1 - level) / 2, 1 - (1 - level) / 2
        mean = self.draws.mean(axis=0)
        lo = np.quantile(self.draws, lo_q, axis=0)
        hi = np.quantile(self.draws, hi_q, axis=0)
        return [(n, float(m), float(a), float(b)) for n, m, a, b in zip(self.names, mean, lo, hi)]


def run_chain(config: McmcConfig, posterior: Callable[[np.ndarray], float], init,
              to_natural: Optional[Callable] = None, names: Optional[Sequence[str]] = None) -> ChainOutput:
    """Gaussian random-walk Metropolis.

    Proposals are ``N(current, gamma * Sigma)``; gamma adapts toward
    ``target_acceptance`` during burn-in only and is frozen afterwards.
    Kept draws are mapped through ``to_natural`` before storage.
    """
    x = np.array(init, dtype=float)
    dim = x.size
    lp = float(posterior(x))
    if not np.isfinite(lp):
        raise FloatingPointError("initial state has non-finite log posterior")
    rng = np.random.default_rng(config.seed)
    Sigma = np.eye(dim) if config.proposal_cov is None else np.asarray(config.proposal_cov, dtype=float)
    L = psd_factor(Sigma)
    log_gamma = math.log(config.step_scale if config.step_scale is not None else 2.38 ** 2 / dim)
    target = config.target_acceptance

    kept = config.kept
    draws = np.empty((kept, dim))
    trace = np.empty(kept)
    accepted = proposed = burn_acc = 0
    k = 0
    chunk = 4096
    for start in range(0, config.iterations, chunk):
        # full-size blocks keep the random stream independent of chain length
        m = min(chunk, config.iterations - start)
        eps = rng.standard_normal((chunk, dim)) @ L.T
        logu = np.log(rng.random(chunk))
        for c in range(m):
            it = start + c
            prop = x + math.exp(0.5 * log_gamma) * eps[c]
            lp_prop = float(posterior(prop))
            delta = lp_prop - lp
            accept = logu[c] < delta
            if accept:
                x, lp = prop, lp_prop
            if it < config.burn_in:
                burn_acc += accept
                if config.adapt:
                    alpha = 1.0 if delta >= 0 else (math.exp(delta) if np.isfinite(delta) else 0.0)
                    log_gamma += (alpha - target) / (it + 1) ** 0.6
            else:
                proposed += 1
                accepted += accept
                if (it - config.burn_in) % config.thin == 0:
                    draws[k] = x
                    trace[k] = lp
                    k += 1
    natural = draws if to_natural is None else np.asarray(to_natural(draws))
    names = list(names) if names is not None else [f"x{i}" for i in range(dim)]
    return ChainOutput(
        draws=natural, unconstrained=draws, names=names,
        acceptance_rate=accepted / proposed if proposed else float("nan"),
        burn_in_acceptance_rate=burn_acc / config.burn_in if config.burn_in else float("nan"),
        log_posterior_trace=trace, seed=config.seed, config=config,
        step_scale=math.exp(log_gamma), proposal_cov=Sigma, final_state=x.copy(),
        accepted=accepted, proposed=proposed,
    )


def pilot_covariance(draws, shrink: float = 0.1, jitter: float = 1e-8) -> np.ndarray:
    """Shrunk sample covariance of pilot draws (rows are iterations)."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 2:
        raise ValueError("draws must be a 2-d array")
    n, dim = draws.shape
    if n < 10 * dim:
        raise ValueError(f"need at least {10 * dim} pilot draws, got {n}")
    S = np.cov(draws, rowvar=False).reshape(dim, dim)
    if np.any(np.diag(S) <= 0):
        raise ValueError("pilot draws are rank-deficient (a coordinate never moved)")
    out = (1 - shrink) * S + shrink * np.diag(np.diag(S)) + jitter * np.eye(dim)
    return 0.5 * (out + out.T)


def tune_proposal(posterior, init, config: McmcConfig, initial_cov=None):
    """Pilot runs estimating the proposal covariance.

    Each round adapts the step scale over its first half, then collects
    draws over the second half; the next round starts from the last state
    using the shrunk covariance of those draws.
    Returns ``(state, covariance, step_scale)``.
    """
    x = np.array(init, dtype=float)
    dim = x.size
    cov = np.eye(dim) if initial_cov is None else np.asarray(initial_cov, dtype=float)
    gamma = None
    length = max(config.pilot_iterations, 40 * dim)
    for r in range(config.pilot_rounds):
        pc = McmcConfig(iterations=length, burn_in=length // 2, thin=1, proposal_cov=cov,
                        seed=config.seed * 1000 + 17 + r, target_acceptance=config.target_acceptance,
                        step_scale=gamma, adapt=True)
        out = run_chain(pc, posterior, x)
        x = out.final_state
        try:
            cov = pilot_covariance(out.unconstrained)
            gamma = None
        except ValueError:
            gamma = out.step_scale
        log.debug("pilot round %d: acceptance %.3f", r, out.acceptance_rate)
    return x, cov, gamma


# ---------------------------------------------------------------------------
# two-stage fit


@dataclass
class JointFit:
    chain: ChainOutput
    psi_draws: list
    paths: list
    filter_ends: list
    thin_interval: int
    posterior: JointPosterior

    @property
    def geometry(self) -> ZoneGeometry:
        return self.posterior.geometry


def ffbs_thin_interval(kept: int, ffbs_draws: int) -> int:
    if ffbs_draws <= 0:
        return 0
    return max(1, kept // ffbs_draws)


def joint_ffbs(posterior: JointPosterior, psi: JointStaticParams, rng):
    """Filter and backward-sample the level path for one parameter draw."""
    K3 = kernel_matrix(posterior.geometry, psi.eta3, posterior.kernel)
    traj = forward_filter_joint(detrend(posterior.panel, psi.theta1, psi.theta2, posterior.config), psi, K3)
    return traj, backward_sample(traj, rng)


def two_stage_fit(panel: PanelData, geometry: ZoneGeometry, priors: PriorSpec = PriorSpec(),
                  config: McmcConfig = McmcConfig(), ffbs_draws: int = 1000,
                  harmonic: HarmonicConfig = HarmonicConfig(), kernel: str = EXPONENTIAL,
                  init: Optional[JointStaticParams] = None) -> JointFit:
    """Sample static parameters, then latent level paths given thinned draws."""
    post = JointPosterior(panel, geometry, priors, harmonic, kernel)
    psi0 = init if init is not None else initial_params(panel, priors)
    z0 = to_unconstrained(psi0)
    gamma = config.step_scale
    if config.proposal_cov is None and config.pilot_rounds > 0:
        z0, cov, gamma = tune_proposal(post, z0, config)
        config = replace(config, proposal_cov=cov, step_scale=gamma)
    chain = run_chain(config, post, z0, to_natural=post.to_natural, names=post.names)
    interval = ffbs_thin_interval(chain.draws.shape[0], ffbs_draws)
    psi_draws, paths, ends = [], [], []
    if interval:
        rng = np.random.default_rng([config.seed, 1])
        for row in chain.unconstrained[::interval][:ffbs_draws]:
            psi = post.params(row)
            traj, path = joint_ffbs(post, psi, rng)
            psi_draws.append(psi)
            paths.append(path)
            ends.append((traj.m[-1].copy(), traj.C[-1].copy()))
    return JointFit(chain, psi_draws, paths, ends, interval, post)


# ---------------------------------------------------------------------------
# single-zone model


SINGLE_NAMES = ["V", "W1", "W2", "W3"]


@nb.njit(cache=True)
def _single_log_post(z, y, mask, F, gap2, m0, C0, a, b, lga):
    lp = 0.0
    loga = a * math.log(b) - lga
    for j in range(4):
        # density of log V when 1/V ~ Gamma(a, b); the Jacobian is already included
        lp += loga - a * z[j] - b * math.exp(-z[j])
    W = np.empty(3)
    for j in range(3):
        W[j] = math.exp(z[1 + j])
    e2 = np.empty((0, 0))
    e3 = np.empty((0, 0, 0))
    ll, bad = _single_filter(y, mask, F, gap2, W, math.exp(z[0]), m0, C0, False, e2, e3, e3, np.empty(0))
    if bad >= 0:
        return -np.inf
    total = lp + ll
    return total if math.isfinite(total) else -np.inf


class SingleZonePosterior:
    """Log-posterior of ``log(V, W1, W2, W3)`` for one zone, Jacobian included.

    The precisions ``1/V`` and ``1/W_k`` carry independent Gamma priors.
    """

    names = SINGLE_NAMES
    dim = 4

    def __init__(self, panel: PanelData, priors: PriorSpec = PriorSpec(), m0=PAPER_SINGLE_M0,
                 C0=np.diag(PAPER_SINGLE_C0), config: HarmonicConfig = HarmonicConfig()):
        if panel.n_zones != 1:
            raise ValueError("single-zone posterior needs a one-column panel")
        self.panel, self.priors, self.config = panel, priors, config
        self.m0 = np.asarray(m0, dtype=float)
        self.C0 = np.asarray(C0, dtype=float)
        self._args = (
            np.ascontiguousarray(panel.filled()[:, 0]), np.ascontiguousarray(panel.observed[:, 0]),
            single_design(panel.grid.times, config), np.ascontiguousarray(panel.grid.gap_scales ** 2),
            self.m0, self.C0, float(priors.precision_shape), float(priors.precision_rate),
            float(special.gammaln(priors.precision_shape)),
        )

    def __call__(self, z) -> float:
        return _single_log_post(np.asarray(z, dtype=float), *self._args)

    def reference(self, z) -> float:
        """Same value assembled from the public filter and prior helpers."""
        V, W1, W2, W3 = np.exp(np.asarray(z, dtype=float))
        a, b = self.priors.precision_shape, self.priors.precision_rate
        lp = float(np.sum(log_inverse_gamma_variance([V, W1, W2, W3], a, b))) + float(np.sum(z))
        try:
            ll = forward_filter_single(self.panel, V, [W1, W2, W3], self.m0, self.C0, self.config).loglik
        except FilterError:
            return -np.inf
        return lp + ll

    @staticmethod
    def to_natural(z):
        return np.exp(z)


@dataclass
class SingleZoneFit:
    chain: ChainOutput
    variances: np.ndarray
    paths: list
    posterior: SingleZonePosterior


def single_zone_initial(panel: PanelData) -> np.ndarray:
    x = panel.values[panel.observed[:, 0], 0]
    d = np.diff(x)
    v = float(np.var(d, ddof=1)) if d.size > 1 else 1.0
    if not (np.isfinite(v) and v > 0):
        v = 1.0
    return np.log([v / 2, 0.05 * v, 0.05 * v, v / 2])


def single_zone_fit(panel: PanelData, priors: PriorSpec = PriorSpec(), config: McmcConfig = McmcConfig(),
                    ffbs_draws: int = 1000, m0=PAPER_SINGLE_M0, C0=np.diag(PAPER_SINGLE_C0),
                    harmonic: HarmonicConfig = HarmonicConfig()) -> SingleZoneFit:
    post = SingleZonePosterior(panel, priors, m0, C0, harmonic)
    z0 = single_zone_initial(panel)
    if config.proposal_cov is None and config.pilot_rounds > 0:
        z0, cov, gamma = tune_proposal(post, z0, config, initial_cov=0.1 * np.eye(4))
        config = replace(config, proposal_cov=cov, step_scale=gamma)
    chain = run_chain(config, post, z0, to_natural=post.to_natural, names=SINGLE_NAMES)
    interval = ffbs_thin_interval(chain.draws.shape[0], ffbs_draws)
    paths, variances = [], []
    if interval:
        rng = np.random.default_rng([config.seed, 2])
        for V, W1, W2, W3 in chain.draws[::interval][:ffbs_draws]:
            traj = forward_filter_single(panel, V, [W1, W2, W3], post.m0, post.C0, harmonic)
            paths.append(backward_sample(traj, rng))
            variances.append((V, W1, W2, W3))
    return SingleZoneFit(chain, np.array(variances).reshape(-1, 4), paths, post)
