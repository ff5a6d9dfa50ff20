import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_geometry, random_grid, random_params
from spatiodlm.filtering import evolution_base, run_joint_filter
from spatiodlm.kernels import kernel_matrix
from spatiodlm.mcmc import McmcConfig, two_stage_fit
from spatiodlm.model import HarmonicConfig, PanelData, TimeGrid, ZoneGeometry, harmonic_design
from spatiodlm.predict import (
    amplitude_phase,
    amplitude_phase_arrays,
    forecast_moments,
    interval_coverage,
    k_step_forecast,
    rmse_by_zone,
    within_sample_predictive,
)
from spatiodlm.simulate import SimulationRecipe, simulate_joint, table1_params
from spatiodlm.smoother import LatentPath


# ---------------------------------------------------------------------------
# amplitude and phase


def test_pure_cosine():
    ap = amplitude_phase(0.0, 2.5)
    assert ap.amplitude == 2.5 and ap.phase == 0.0


def test_equal_coefficients():
    ap = amplitude_phase(1.0, 1.0)
    assert ap.amplitude == pytest.approx(math.sqrt(2))
    assert ap.phase == pytest.approx(math.pi / 4)


def test_second_quadrant_identity():
    ap = amplitude_phase(1.0, -1.0)
    assert ap.amplitude == pytest.approx(math.sqrt(2))
    assert ap.phase == pytest.approx(3 * math.pi / 4)
    w = 2 * math.pi / 12
    for t in np.random.default_rng(0).uniform(0, 120, 10):
        lhs = math.sin(w * t) - math.cos(w * t)
        assert lhs == pytest.approx(ap.amplitude * math.cos(w * t - ap.phase), abs=1e-12)


def test_zero_coefficients():
    assert amplitude_phase(0.0, 0.0) == amplitude_phase(0.0, 0.0).__class__(0.0, 0.0)


def test_phase_range_and_arrays():
    ap = amplitude_phase(-0.0, -1.0)
    assert -math.pi < ap.phase <= math.pi
    amp, ph = amplitude_phase_arrays([1.0, 0.0, -1.0], [1.0, 0.0, -1.0])
    np.testing.assert_allclose(amp, [math.sqrt(2), 0.0, math.sqrt(2)])
    assert ph[1] == 0.0 and ph[2] == pytest.approx(-3 * math.pi / 4)


@given(st.floats(-50, 50, allow_nan=False), st.floats(-50, 50, allow_nan=False))
def test_inverse_reconstruction(t1, t2):
    ap = amplitude_phase(t1, t2)
    assert ap.amplitude * math.sin(ap.phase) == pytest.approx(t1, abs=1e-12)
    assert ap.amplitude * math.cos(ap.phase) == pytest.approx(t2, abs=1e-12)
    assert -math.pi < ap.phase <= math.pi


def test_cos_difference_identity_random_triples():
    rng = np.random.default_rng(1)
    w = 2 * math.pi / 12
    for t1, t2, t in zip(rng.normal(0, 3, 100), rng.normal(0, 3, 100), rng.uniform(-200, 200, 100)):
        ap = amplitude_phase(t1, t2)
        lhs = t1 * math.sin(w * t) + t2 * math.cos(w * t)
        assert lhs == pytest.approx(ap.amplitude * math.cos(w * t - ap.phase), abs=1e-10)


# ---------------------------------------------------------------------------
# within-sample predictive


def fake_draws(rng, n, nz, R, vscale=1.0):
    base = random_params(rng, nz)
    psis = [base.replace(obs_var=vscale * rng.uniform(0.1, 1, nz), theta1=base.theta1 + 0.1 * rng.normal(size=nz))
            for _ in range(R)]
    paths = [LatentPath(rng.normal(size=(n + 1, nz))) for _ in range(R)]
    return psis, paths


def test_noiseless_predictive_equals_path():
    rng = np.random.default_rng(0)
    grid = TimeGrid.regular(6)
    panel = PanelData.from_values(grid, np.zeros((6, 2)))
    psis, paths = fake_draws(rng, 6, 2, 3, vscale=1e-30)
    out = within_sample_predictive(psis, paths, panel, rng=rng)
    s, c = harmonic_design(grid.times)
    for r in range(3):
        exact = np.outer(s, psis[r].theta1) + np.outer(c, psis[r].theta2) + paths[r].states[1:]
        np.testing.assert_allclose(out.draws[r], exact, atol=1e-12)


def test_predictive_reproducible():
    rng = np.random.default_rng(1)
    panel = PanelData.from_values(TimeGrid.regular(4), np.zeros((4, 2)))
    psis, paths = fake_draws(rng, 4, 2, 1)
    a = within_sample_predictive(psis, paths, panel, rng=np.random.default_rng(9))
    b = within_sample_predictive(psis, paths, panel, rng=np.random.default_rng(9))
    np.testing.assert_array_equal(a.draws, b.draws)


def test_predictive_rejects_misaligned():
    rng = np.random.default_rng(2)
    panel = PanelData.from_values(TimeGrid.regular(4), np.zeros((4, 2)))
    psis, paths = fake_draws(rng, 4, 2, 3)
    with pytest.raises(ValueError, match="misaligned"):
        within_sample_predictive(psis, paths[:2], panel)
    with pytest.raises(ValueError):
        within_sample_predictive([], [], panel)


def test_predictive_mean_converges_and_bands_nest():
    rng = np.random.default_rng(3)
    grid = TimeGrid.regular(5)
    panel = PanelData.from_values(grid, np.zeros((5, 2)))
    psis, paths = fake_draws(rng, 5, 2, 4)
    R = 4000
    psis, paths = psis * (R // 4), paths * (R // 4)
    s, c = harmonic_design(grid.times)
    per_draw = np.mean([np.outer(s, p.theta1) + np.outer(c, p.theta2) + q.states[1:] for p, q in zip(psis, paths)],
                       axis=0)
    out = within_sample_predictive(psis, paths, panel, rng=rng, level=0.8)
    assert np.max(np.abs(out.mean - per_draw)) < 0.06
    wide = within_sample_predictive(psis, paths, panel, rng=np.random.default_rng(0), level=0.95)
    narrow = within_sample_predictive(psis, paths, panel, rng=np.random.default_rng(0), level=0.5)
    truth = rng.normal(size=(5, 2))
    assert interval_coverage(wide.lower, wide.upper, truth) >= interval_coverage(narrow.lower, narrow.upper, truth)
    assert np.all(wide.lower <= narrow.lower) and np.all(wide.upper >= narrow.upper)


def test_two_zone_fit_band_calibration():
    truth = table1_params()
    from spatiodlm.model import JointStaticParams

    truth = JointStaticParams.with_priors(truth.obs_var[:2], truth.sys_var[:2], truth.theta1[:2],
                                          truth.theta2[:2], truth.eta1, truth.eta2, truth.eta3)
    geo = ZoneGeometry(("a", "b"), [[0.0, 0.05], [0.05, 0.0]])
    panel, _ = simulate_joint(SimulationRecipe(truth, geo, TimeGrid.regular(60), seed=3))
    cfg = McmcConfig(iterations=12_000, burn_in=2_000, pilot_rounds=2, pilot_iterations=2000, seed=1)
    fit = two_stage_fit(panel, geo, config=cfg, ffbs_draws=200)
    pred = within_sample_predictive(fit.psi_draws, fit.paths, panel, rng=np.random.default_rng(0))
    assert interval_coverage(pred.lower, pred.upper, panel.values) >= 0.9


# ---------------------------------------------------------------------------
# forecasting


def test_one_step_is_time_update():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(3, 3))
    C, W = A @ A.T, np.diag([0.3, 0.2, 0.5])
    mean, R, Q = forecast_moments(np.zeros(3), C, W, np.ones(3), [1.0])
    np.testing.assert_allclose(R[0], C + W)
    np.testing.assert_allclose(Q[0], C + W + np.eye(3))


def test_forecast_variance_increases():
    rng = np.random.default_rng(5)
    A = rng.normal(size=(3, 3))
    W = A @ A.T + 0.1 * np.eye(3)
    _, R, _ = forecast_moments(np.zeros(3), np.eye(3), W, np.ones(3), np.ones(8))
    for k in range(1, 8):
        assert np.linalg.eigvalsh(R[k] - R[k - 1]).min() > 0


@pytest.mark.parametrize("seed", range(4))
def test_forecast_equals_filtering_missing_points(seed):
    rng = np.random.default_rng(seed)
    nz = int(rng.integers(1, 4))
    geo = random_geometry(rng, nz)
    params = random_params(rng, nz)
    grid = random_grid(rng, 20)
    K3 = kernel_matrix(geo, params.eta3)
    Wb = evolution_base(params, K3)
    y = rng.normal(size=(20, nz))
    gap2 = grid.gap_scales ** 2
    fitted = run_joint_filter(y[:8], np.ones((8, nz), bool), gap2[:8], Wb, params.obs_var,
                              params.init_mean, params.init_var)
    for k in range(1, 13):
        mask = np.zeros((8 + k, nz), bool)
        mask[:8] = True
        full = run_joint_filter(y[:8 + k], mask, gap2[:8 + k], Wb, params.obs_var, params.init_mean, params.init_var)
        mean, R, Q = forecast_moments(fitted.m[-1], fitted.C[-1], Wb, params.obs_var, grid.gap_scales[8:8 + k])
        np.testing.assert_allclose(mean, full.m[-1], rtol=0, atol=1e-10)
        np.testing.assert_allclose(R[-1], full.R[-1], rtol=0, atol=1e-10)


def test_k_step_forecast_shapes_and_errors():
    rng = np.random.default_rng(6)
    geo = random_geometry(rng, 2)
    params = random_params(rng, 2)
    ends = [(np.zeros(2), np.eye(2))] * 5
    grid = TimeGrid.regular(10).extend_regular(4)
    fc = k_step_forecast(ends, [params] * 5, grid, geo, rng=rng)
    assert fc.draws.shape == (5, 4, 2) and fc.state_draws.shape == (5, 4, 2)
    assert np.all(fc.lower <= fc.upper)
    with pytest.raises(ValueError, match="at least one"):
        k_step_forecast(ends, [params] * 5, TimeGrid(np.empty(0), 10.0), geo)
    with pytest.raises(ValueError, match="misaligned"):
        k_step_forecast(ends[:2], [params] * 5, grid, geo)


def test_k_step_forecast_moments_by_monte_carlo():
    rng = np.random.default_rng(7)
    geo = random_geometry(rng, 2)
    params = random_params(rng, 2)
    N = 40_000
    grid = TimeGrid.regular(10).extend_regular(3)
    fc = k_step_forecast([(np.zeros(2), np.eye(2))] * N, [params] * N, grid, geo, rng=rng)
    Wb = evolution_base(params, kernel_matrix(geo, params.eta3))
    _, R, Q = forecast_moments(np.zeros(2), np.eye(2), Wb, params.obs_var, np.ones(3))
    s, c = harmonic_design(grid.times)
    np.testing.assert_allclose(fc.draws.mean(axis=0), np.outer(s, params.theta1) + np.outer(c, params.theta2),
                               atol=0.1)
    np.testing.assert_allclose(np.cov(fc.draws[:, 2], rowvar=False), Q[2], rtol=0.05)


# ---------------------------------------------------------------------------
# RMSE


def test_rmse_zero_for_exact_predictions():
    panel = PanelData.from_values(TimeGrid.regular(3), np.arange(6.0).reshape(3, 2))
    assert np.all(rmse_by_zone(panel, np.stack([panel.values] * 4)) == 0)


def test_rmse_hand_arithmetic():
    panel = PanelData.from_values(TimeGrid.regular(1), [[2.0]])
    draws = np.array([[[3.0]], [[1.0]]])
    assert rmse_by_zone(panel, draws)[0] == pytest.approx(1.0)


def test_rmse_ignores_missing_cells():
    panel = PanelData.from_values(TimeGrid.regular(2), [[1.0], [np.nan]])
    draws = np.array([[[2.0], [100.0]]])
    assert rmse_by_zone(panel, draws)[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        rmse_by_zone(PanelData.from_values(TimeGrid.regular(1), [[np.nan]]), np.zeros((1, 1, 1)))


def test_identical_predictions_equal_rmse():
    rng = np.random.default_rng(0)
    panel = PanelData.from_values(TimeGrid.regular(5), rng.normal(size=(5, 3)))
    draws = rng.normal(size=(50, 5, 3))
    np.testing.assert_array_equal(rmse_by_zone(panel, draws), rmse_by_zone(panel, draws.copy()))
