"""Command-line entry point: ``spatiodlm {fit,forecast,simulate,compare,validate}``."""
from __future__ import annotations

import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional

import click
import numpy as np
import yaml

from spatiodlm import __version__
from spatiodlm.filtering import FilterError
from spatiodlm.io import (
    ParseError,
    RunConfig,
    panel_digest,
    read_chain,
    read_geometry_csv,
    read_panel_csv,
    read_params_json,
    summary_rows,
    write_chain,
    write_geometry_csv,
    write_panel_csv,
    write_params_json,
    write_summary,
    write_tidy,
    write_tidy_draws,
)
from spatiodlm.kernels import KernelSingularError
from spatiodlm.mcmc import (
    JointFit,
    JointPosterior,
    joint_ffbs,
    single_zone_fit,
    two_stage_fit,
)
from spatiodlm.model import (
    HarmonicConfig,
    JointStaticParams,
    KernelParams,
    PanelData,
    SpecValidationError,
    TimeGrid,
    ZoneGeometry,
    validate_joint_spec,
)
from spatiodlm.predict import (
    interval_coverage,
    k_step_forecast,
    rmse_by_zone,
    single_zone_predictive,
    within_sample_predictive,
)
from spatiodlm.simulate import SimulationRecipe, simulate_joint, table1_geometry, table1_params
from spatiodlm.smoother import SmoothingError

log = logging.getLogger("spatiodlm")

EXIT_PARSE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4


class CommandError(Exception):
    def __init__(self, message: str, code: int):
        self.code = code
        super().__init__(message)


# ---------------------------------------------------------------------------
# loading


def load_inputs(cfg: RunConfig) -> tuple[PanelData, list[str], Optional[ZoneGeometry]]:
    if cfg.panel is None:
        raise SpecValidationError(["config does not name a panel file"])
    panel, zones = read_panel_csv(cfg.resolve(cfg.panel))
    geometry = None
    if cfg.geometry is not None:
        geometry = read_geometry_csv(cfg.resolve(cfg.geometry))
        if list(geometry.zone_ids) != list(zones):
            if sorted(geometry.zone_ids) != sorted(zones):
                raise SpecValidationError(["panel zones and geometry zones differ"])
            order = [geometry.zone_ids.index(z) for z in zones]
            geometry = geometry.permuted(order)
    elif cfg.model == "joint":
        raise SpecValidationError(["joint model needs a geometry file"])
    if cfg.holdout >= panel.n:
        raise SpecValidationError([f"holdout {cfg.holdout} must be smaller than n = {panel.n}"])
    return panel, zones, geometry


def _prepare_output(cfg: RunConfig, output: Optional[str]) -> Path:
    out = Path(output) if output else cfg.resolve(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(out: Path, command: str, cfg: RunConfig, panel: Optional[PanelData] = None,
                   extra: Optional[dict] = None) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "mcmc_seed": cfg.mcmc.seed,
        "config": cfg.to_dict(),
    }
    if panel is not None:
        manifest["panel_sha256"] = panel_digest(panel)
        manifest["n_times"] = panel.n
    manifest.update(extra or {})
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


# ---------------------------------------------------------------------------
# fitting


def fit_joint(cfg: RunConfig, panel: PanelData, geometry: ZoneGeometry) -> JointFit:
    return two_stage_fit(panel, geometry, cfg.priors, cfg.mcmc, cfg.ffbs_draws, cfg.harmonic, cfg.kernel)


def _fit_one_zone(cfg: RunConfig, panel: PanelData, j: int):
    mc = replace(cfg.mcmc, seed=cfg.mcmc.seed + 7919 * (j + 1))
    return single_zone_fit(panel.zone(j), cfg.priors, mc, max(cfg.ffbs_draws, 1), harmonic=cfg.harmonic)


def fit_single_zones(cfg: RunConfig, panel: PanelData) -> list:
    if cfg.threads > 1:
        from joblib import Parallel, delayed

        return Parallel(n_jobs=cfg.threads)(delayed(_fit_one_zone)(cfg, panel, j) for j in range(panel.n_zones))
    return [_fit_one_zone(cfg, panel, j) for j in range(panel.n_zones)]


def joint_predictive(cfg: RunConfig, fit: JointFit, panel: PanelData):
    rng = np.random.default_rng([cfg.mcmc.seed, 3])
    return within_sample_predictive(fit.psi_draws, fit.paths, panel, cfg.harmonic, rng)


def single_predictive(cfg: RunConfig, fits, panel: PanelData):
    """Stack per-zone predictive draws into one (draws, n, n_zones) array."""
    rng = np.random.default_rng([cfg.mcmc.seed, 4])
    per_zone = [single_zone_predictive(f.variances, f.paths, panel.zone(j), cfg.harmonic, rng)
                for j, f in enumerate(fits)]
    draws = np.concatenate([p.draws for p in per_zone], axis=2)
    mean = np.concatenate([p.mean for p in per_zone], axis=1)
    lower = np.concatenate([p.lower for p in per_zone], axis=1)
    upper = np.concatenate([p.upper for p in per_zone], axis=1)
    return draws, mean, lower, upper


def cmd_fit(cfg: RunConfig, output: Optional[str] = None) -> Path:
    panel, zones, geometry = load_inputs(cfg)
    out = _prepare_output(cfg, output)
    if cfg.model == "joint":
        fit = fit_joint(cfg, panel, geometry)
        names = [_label(n, zones) for n in fit.chain.names]
        write_chain(out, fit.chain, extra={"names": names, "ffbs_thin_interval": fit.thin_interval,
                                           "panel_sha256": panel_digest(panel)})
        text = write_summary(out, summary_rows(names, fit.chain.draws))
        if fit.paths:
            np.savez_compressed(out / "latent_paths.npz",
                                states=np.stack([p.states for p in fit.paths]),
                                times=np.concatenate([[panel.grid.origin_time], panel.grid.times]))
            pred = joint_predictive(cfg, fit, panel)
            write_tidy(out / "predictive.csv", panel.grid.times, zones, pred.mean, pred.lower, pred.upper)
            np.savez_compressed(out / "predictive_draws.npz", draws=pred.draws)
        acc = {"acceptance_rate": fit.chain.acceptance_rate}
    else:
        fits = fit_single_zones(cfg, panel)
        rows = []
        for z, f in zip(zones, fits):
            write_chain(out, f.chain, stem=f"chain_{z}", extra={"zone": z})
            rows += summary_rows([f"{n}^{z}" for n in f.chain.names], f.chain.draws)
        text = write_summary(out, rows)
        draws, mean, lower, upper = single_predictive(cfg, fits, panel)
        write_tidy(out / "predictive.csv", panel.grid.times, zones, mean, lower, upper)
        np.savez_compressed(out / "predictive_draws.npz", draws=draws)
        acc = {"acceptance_rate": {z: f.chain.acceptance_rate for z, f in zip(zones, fits)}}
    write_manifest(out, "fit", cfg, panel, acc)
    click.echo(text, nl=False)
    return out


def _label(name: str, zones) -> str:
    prefix, _, idx = name.rpartition("_")
    if prefix in ("V", "W", "theta1", "theta2"):
        return f"{prefix}_{zones[int(idx) - 1]}"
    return name


def cmd_forecast(cfg: RunConfig, output: Optional[str] = None, fit_dir: Optional[str] = None) -> Path:
    """Fit on all but the last ``holdout`` points (or reuse a fit) and forecast ahead."""
    if cfg.horizon < 1:
        raise SpecValidationError(["forecast horizon must be at least 1"])
    if cfg.model != "joint":
        raise SpecValidationError(["forecasting is implemented for the joint model"])
    panel, zones, geometry = load_inputs(cfg)
    out = _prepare_output(cfg, output)
    n_fit = panel.n - cfg.holdout
    train = panel.head(n_fit)
    post = JointPosterior(train, geometry, cfg.priors, cfg.harmonic, cfg.kernel)
    if fit_dir is not None:
        manifest = json.loads((Path(fit_dir) / "manifest.json").read_text())
        if manifest.get("panel_sha256") != panel_digest(train):
            raise SpecValidationError(["fit artifacts were produced on a different (training) panel"])
        _, draws = read_chain(Path(fit_dir) / "chain.csv")
        step = max(1, draws.shape[0] // max(cfg.ffbs_draws, 1))
        rng = np.random.default_rng([cfg.mcmc.seed, 5])
        psi_draws, ends = [], []
        for row in draws[::step][:cfg.ffbs_draws]:
            psi = post.params(np.where(_log_positions(row.size), np.log(row), row))
            traj, _ = joint_ffbs(post, psi, rng)
            psi_draws.append(psi)
            ends.append((traj.m[-1], traj.C[-1]))
    else:
        fit = fit_joint(cfg, train, geometry)
        write_chain(out, fit.chain, extra={"panel_sha256": panel_digest(train)})
        psi_draws, ends = fit.psi_draws, fit.filter_ends
    if not psi_draws:
        raise SpecValidationError(["forecasting needs ffbs_draws >= 1"])
    future = panel.grid.times[n_fit:n_fit + cfg.horizon]
    grid = train.grid.extend(future) if future.size == cfg.horizon else _extend_to(train.grid, future, cfg.horizon)
    rng = np.random.default_rng([cfg.mcmc.seed, 6])
    fc = k_step_forecast(ends, psi_draws, grid, geometry, cfg.harmonic, rng, cfg.kernel)
    write_tidy(out / "forecast.csv", fc.horizons, zones, fc.mean, fc.lower, fc.upper)
    write_tidy_draws(out / "forecast_draws.csv", fc.horizons, zones, fc.draws)
    report = {"horizon": cfg.horizon, "holdout": cfg.holdout}
    m = min(cfg.holdout, cfg.horizon)
    if m > 0:
        held = panel.values[n_fit:n_fit + m]
        mask = panel.observed[n_fit:n_fit + m]
        per_zone = {}
        for j, z in enumerate(zones):
            if mask[:, j].any():
                per_zone[z] = interval_coverage(fc.lower[:m, j], fc.upper[:m, j], held[:, j], mask[:, j])
        report["coverage_by_zone"] = per_zone
        report["coverage"] = interval_coverage(fc.lower[:m], fc.upper[:m], np.nan_to_num(held), mask)
        click.echo(f"holdout coverage of {int(fc.level * 100)}% intervals: {report['coverage']:.3f}")
    (out / "coverage.json").write_text(json.dumps(report, indent=2))
    write_manifest(out, "forecast", cfg, train, report)
    return out


def _log_positions(dim: int) -> np.ndarray:
    nz = (dim - 6) // 4
    mask = np.zeros(dim, dtype=bool)
    mask[: 2 * nz] = True
    mask[4 * nz:] = True
    return mask


def _extend_to(grid: TimeGrid, known, horizon: int) -> TimeGrid:
    step = float(np.median(np.diff(grid.times))) if grid.n > 1 else 1.0
    last = known[-1] if len(known) else grid.times[-1]
    extra = last + step * np.arange(1, horizon - len(known) + 1)
    return grid.extend(np.concatenate([known, extra]))


def load_recipe(path) -> tuple[SimulationRecipe, list[str]]:
    """Parse a simulation recipe YAML file."""
    path = Path(path)
    try:
        d = yaml.safe_load(path.read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ParseError(path, f"cannot read recipe ({exc})") from None
    preset = d.get("preset")
    g = d.get("geometry")
    if isinstance(g, str):
        geometry = read_geometry_csv(path.parent / g)
    elif isinstance(g, dict):
        geometry = ZoneGeometry.from_coordinates(g["zone_ids"], g["lon"], g["lat"])
    elif preset == "table1":
        geometry = table1_geometry()
    else:
        raise SpecValidationError(["recipe needs a geometry (file, coordinates, or preset: table1)"])
    if preset == "table1":
        params = table1_params()
    elif preset is None:
        params = None
    else:
        raise SpecValidationError([f"unknown preset {preset!r}"])
    overrides = d.get("params") or {}
    if params is None:
        nz = geometry.n_zones
        overrides.setdefault("init_mean", [6.0] * nz)
        overrides.setdefault("init_var", (20.0 * np.eye(nz)).tolist())
        params = JointStaticParams.from_dict(overrides)
    elif overrides:
        base = params.to_dict()
        base.update(overrides)
        params = JointStaticParams.from_dict(base)
    n = int(d.get("n", 115))
    grid = TimeGrid.regular(n, start=float(d.get("start", 1.0)), step=float(d.get("step", 1.0)))
    recipe = SimulationRecipe(
        params=params, geometry=geometry, grid=grid,
        missingness=float(d.get("missingness", 0.0)), seed=int(d.get("seed", 0)),
        harmonic=HarmonicConfig(**(d.get("harmonic") or {})), kernel=d.get("kernel", "exponential"),
    )
    return recipe, list(geometry.zone_ids)


def cmd_simulate(recipe_path, output: str, seed: Optional[int] = None) -> Path:
    recipe, zones = load_recipe(recipe_path)
    if seed is not None:
        recipe = replace(recipe, seed=seed)
    out = Path(output)
    out.mkdir(parents=True, exist_ok=True)
    panel, truth = simulate_joint(recipe)
    write_panel_csv(out / "panel.csv", panel, zones)
    write_geometry_csv(out / "geometry.csv", recipe.geometry)
    write_params_json(out / "truth_params.json", recipe.params)
    times = np.concatenate([[recipe.grid.origin_time], recipe.grid.times])
    with open(out / "truth_latent.csv", "w") as fh:
        fh.write(",".join(["time", *zones]) + "\n")
        for t, row in zip(times, truth.states):
            fh.write(",".join(repr(float(v)) for v in (t, *row)) + "\n")
    (out / "manifest.json").write_text(json.dumps(
        {"command": "simulate", "version": __version__, "seed": recipe.seed,
         "recipe": str(recipe_path), "panel_sha256": panel_digest(panel)}, indent=2))
    click.echo(f"wrote {panel.n} x {panel.n_zones} panel to {out}")
    return out


def _load_predictive(directory) -> tuple[np.ndarray, dict]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    draws = np.load(directory / "predictive_draws.npz")["draws"]
    return draws, manifest


def cmd_compare(cfg: RunConfig, output: Optional[str] = None, joint_dir: Optional[str] = None,
                single_dir: Optional[str] = None) -> Path:
    """Per-zone mean RMSE of within-sample predictions, single-zone vs joint."""
    panel, zones, geometry = load_inputs(cfg)
    out = _prepare_output(cfg, output)
    digest = panel_digest(panel)
    if joint_dir is not None:
        joint_draws, man = _load_predictive(joint_dir)
        if man.get("panel_sha256") != digest:
            raise SpecValidationError(["joint fit was run on a different panel"])
    else:
        if geometry is None:
            raise SpecValidationError(["joint model needs a geometry file"])
        fit = fit_joint(replace(cfg, model="joint"), panel, geometry)
        joint_draws = joint_predictive(cfg, fit, panel).draws
    if single_dir is not None:
        single_draws, man = _load_predictive(single_dir)
        if man.get("panel_sha256") != digest:
            raise SpecValidationError(["single-zone fits were run on a different panel"])
    else:
        single_draws = single_predictive(cfg, fit_single_zones(cfg, panel), panel)[0]
    rs = rmse_by_zone(panel, single_draws)
    rj = rmse_by_zone(panel, joint_draws)
    lines = ["zone,single_zone_rmse,joint_rmse"]
    lines += [f"{z},{a!r},{b!r}" for z, a, b in zip(zones, rs, rj)]
    (out / "rmse.csv").write_text("\n".join(lines) + "\n")
    write_manifest(out, "compare", cfg, panel)
    click.echo(f"{'Zone':<10}{'Single zone':>14}{'Joint zone':>14}")
    for z, a, b in zip(zones, rs, rj):
        click.echo(f"{z:<10}{a:>14.3f}{b:>14.3f}")
    return out


def cmd_validate(cfg: RunConfig, params_path: Optional[str] = None) -> None:
    panel, zones, geometry = load_inputs(cfg)
    msg = f"panel: {panel.n} times x {panel.n_zones} zones, {int(panel.observed.sum())} observed"
    if params_path is not None:
        if geometry is None:
            raise SpecValidationError(["validating parameters needs a geometry file"])
        validate_joint_spec(read_params_json(params_path), geometry, panel)
        msg += "; parameters valid"
    click.echo(msg)


# ---------------------------------------------------------------------------
# click wiring


def _run(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ParseError as exc:
        raise CommandError(f"parse error: {exc}", EXIT_PARSE) from exc
    except SpecValidationError as exc:
        raise CommandError(f"validation error: {exc}", EXIT_VALIDATION) from exc
    except (FilterError, SmoothingError, KernelSingularError, FloatingPointError, np.linalg.LinAlgError) as exc:
        raise CommandError(f"numerical failure: {exc}", EXIT_NUMERICAL) from exc


def _config(path, seed, threads) -> RunConfig:
    cfg = _run(RunConfig.load, path)
    if seed is not None:
        cfg = replace(cfg, seed=seed, mcmc=replace(cfg.mcmc, seed=seed))
    if threads is not None:
        cfg = replace(cfg, threads=threads)
    return cfg


config_opt = click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
                          help="YAML run configuration.")
seed_opt = click.option("--seed", type=click.IntRange(0, 2 ** 64 - 1), default=None, help="Override the seed.")
threads_opt = click.option("--threads", type=click.IntRange(1), default=None, help="Worker processes.")
output_opt = click.option("--output", type=click.Path(file_okay=False), default=None, help="Output directory.")


@click.group()
@click.version_option(__version__)
@click.option("-v", "--verbose", count=True)
def main(verbose):
    """Bayesian harmonic DLMs with spatially correlated levels."""
    logging.basicConfig(level=logging.WARNING - 10 * verbose, format="%(levelname)s %(name)s: %(message)s")


def _invoke(fn, *args, **kwargs):
    try:
        _run(fn, *args, **kwargs)
    except CommandError as exc:
        click.echo(str(exc), err=True)
        sys.exit(exc.code)


@main.command()
@config_opt
@seed_opt
@threads_opt
@output_opt
def fit(config_path, seed, threads, output):
    """Two-stage fit: MCMC over static parameters, then latent paths."""
    _invoke(lambda: cmd_fit(_config(config_path, seed, threads), output))


@main.command()
@config_opt
@seed_opt
@threads_opt
@output_opt
@click.option("--fit-dir", type=click.Path(file_okay=False, exists=True), default=None,
              help="Reuse a fit on the training panel instead of refitting.")
def forecast(config_path, seed, threads, output, fit_dir):
    """k-step-ahead forecasts with holdout coverage."""
    _invoke(lambda: cmd_forecast(_config(config_path, seed, threads), output, fit_dir))


@main.command()
@click.option("--config", "recipe_path", required=True, type=click.Path(dir_okay=False),
              help="YAML simulation recipe.")
@seed_opt
@threads_opt
@click.option("--output", type=click.Path(file_okay=False), required=True)
def simulate(recipe_path, seed, threads, output):
    """Simulate a panel, geometry and ground truth from the joint model."""
    _invoke(cmd_simulate, recipe_path, output, seed)


@main.command()
@config_opt
@seed_opt
@threads_opt
@output_opt
@click.option("--joint-dir", type=click.Path(file_okay=False, exists=True), default=None)
@click.option("--single-dir", type=click.Path(file_okay=False, exists=True), default=None)
def compare(config_path, seed, threads, output, joint_dir, single_dir):
    """RMSE table of single-zone versus joint within-sample predictions."""
    _invoke(lambda: cmd_compare(_config(config_path, seed, threads), output, joint_dir, single_dir))


@main.command()
@config_opt
@seed_opt
@threads_opt
@output_opt
@click.option("--params", "params_path", type=click.Path(dir_okay=False, exists=True), default=None)
def validate(config_path, seed, threads, output, params_path):
    """Check that the configuration and data files parse and agree."""
    _invoke(lambda: cmd_validate(_config(config_path, seed, threads), params_path))


if __name__ == "__main__":
    main()
