"""File formats: panel and geometry CSVs, chain output, tidy summaries, run config."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from spatiodlm.kernels import KERNEL_FORMS, EXPONENTIAL
from spatiodlm.mcmc import ChainOutput, McmcConfig
from spatiodlm.model import (
    HarmonicConfig,
    JointStaticParams,
    PanelData,
    PriorSpec,
    SpecValidationError,
    TimeGrid,
    ZoneGeometry,
)

log = logging.getLogger(__name__)


class ParseError(ValueError):
    def __init__(self, path, message: str, line: Optional[int] = None):
        self.path, self.line = str(path), line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# panel


def read_panel_csv(path) -> tuple[PanelData, list[str]]:
    """Read ``time,zone_1,...``; empty cells are missing.

    Exact zeros are treated as missing too, with a warning, since the model
    is for strictly positive rates.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(path, f"cannot read panel file ({exc.strerror})") from None
    rows = list(csv.reader(text.splitlines()))
    if not rows or not any(cell.strip() for cell in rows[0]):
        raise ParseError(path, "empty panel file", 1)
    header = [h.strip() for h in rows[0]]
    if header[0].lower() != "time" or len(header) < 2:
        raise ParseError(path, "header must be 'time,<zone>,...'", 1)
    zones = header[1:]
    times, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or not any(cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise ParseError(path, f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            times.append(float(row[0]))
            values.append([float(c) if c.strip() else math.nan for c in row[1:]])
        except ValueError as exc:
            raise ParseError(path, f"non-numeric entry ({exc})", lineno) from None
    if not times:
        raise ParseError(path, "panel has no data rows", 2)
    values = np.array(values, dtype=float)
    zeros = values == 0.0
    if zeros.any():
        log.warning("%s: %d zero rates treated as missing", path, int(zeros.sum()))
        values[zeros] = math.nan
    if np.any(np.isinf(values)):
        raise ParseError(path, "infinite values are not allowed")
    try:
        grid = TimeGrid.from_times(times)
    except SpecValidationError as exc:
        raise ParseError(path, str(exc)) from None
    return PanelData.from_values(grid, values), zones


def write_panel_csv(path, panel: PanelData, zone_ids) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", *zone_ids])
        for t, row, obs in zip(panel.grid.times, panel.values, panel.observed):
            w.writerow([_fmt(t)] + [_fmt(v) if o else "" for v, o in zip(row, obs)])


def panel_digest(panel: PanelData) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(panel.grid.times).tobytes())
    h.update(np.ascontiguousarray(panel.filled()).tobytes())
    h.update(np.ascontiguousarray(panel.observed).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# geometry


def read_geometry_csv(path) -> ZoneGeometry:
    """Either ``zone_id,lon,lat`` rows or a square labelled distance matrix (km)."""
    path = Path(path)
    try:
        rows = [r for r in csv.reader(path.read_text().splitlines())]
    except OSError as exc:
        raise ParseError(path, f"cannot read geometry file ({exc.strerror})") from None
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(path, "empty geometry file", 1)
    header = [h.strip() for h in rows[0]]
    try:
        if [h.lower() for h in header] == ["zone_id", "lon", "lat"]:
            ids = [r[0].strip() for r in rows[1:]]
            lon = [float(r[1]) for r in rows[1:]]
            lat = [float(r[2]) for r in rows[1:]]
            return ZoneGeometry.from_coordinates(ids, lon, lat)
        ids = header[1:]
        d = np.empty((len(ids), len(ids)))
        if len(rows) - 1 != len(ids):
            raise ParseError(path, f"distance matrix has {len(rows) - 1} rows for {len(ids)} zones")
        for i, r in enumerate(rows[1:]):
            if r[0].strip() != ids[i]:
                raise ParseError(path, f"row label {r[0]!r} does not match column {ids[i]!r}", i + 2)
            if len(r) != len(ids) + 1:
                raise ParseError(path, "ragged distance matrix row", i + 2)
            d[i] = [float(c) for c in r[1:]]
        return ZoneGeometry(tuple(ids), d)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, ParseError):
            raise
        if isinstance(exc, SpecValidationError):
            raise
        raise ParseError(path, f"malformed geometry ({exc})") from None


def write_geometry_csv(path, geometry: ZoneGeometry) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if geometry.coordinates is not None:
            w.writerow(["zone_id", "lon", "lat"])
            for z, (lon, lat) in zip(geometry.zone_ids, geometry.coordinates):
                w.writerow([z, _fmt(lon), _fmt(lat)])
        else:
            w.writerow(["zone_id", *geometry.zone_ids])
            for z, row in zip(geometry.zone_ids, geometry.distances):
                w.writerow([z] + [_fmt(v) for v in row])


# ---------------------------------------------------------------------------
# chain and summaries


def write_chain(directory, chain: ChainOutput, stem: str = "chain", extra: Optional[dict] = None) -> None:
    directory = Path(directory)
    with open(directory / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(chain.names)
        for row in chain.draws:
            w.writerow([_fmt(v) for v in row])
    meta = {
        "seed": chain.seed,
        "acceptance_rate": chain.acceptance_rate,
        "accepted": chain.accepted,
        "proposed": chain.proposed,
        "burn_in_acceptance_rate": chain.burn_in_acceptance_rate,
        "step_scale": chain.step_scale,
        "kept_draws": int(chain.draws.shape[0]),
        "config": chain.config.describe(),
    }
    meta.update(extra or {})
    (directory / f"{stem}_meta.json").write_text(json.dumps(meta, indent=2, default=float))


def read_chain(path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    rows = list(csv.reader(path.read_text().splitlines()))
    if len(rows) < 2:
        raise ParseError(path, "chain file has no draws")
    try:
        return rows[0], np.array([[float(c) for c in r] for r in rows[1:]])
    except ValueError as exc:
        raise ParseError(path, f"non-numeric draw ({exc})") from None


def summary_rows(names, draws, level: float = 0.95):
    q = (1 - level) / 2
    draws = np.asarray(draws)
    return [(n, float(np.mean(draws[:, i])), float(np.quantile(draws[:, i], q)),
             float(np.quantile(draws[:, i], 1 - q))) for i, n in enumerate(names)]


def write_summary(directory, rows, stem: str = "summary") -> str:
    """Posterior mean and quantile interval table, as CSV and aligned text."""
    directory = Path(directory)
    with open(directory / f"{stem}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["parameter", "mean", "ci_lower", "ci_upper"])
        for name, m, lo, hi in rows:
            w.writerow([name, _fmt(m), _fmt(lo), _fmt(hi)])
    lines = [f"{'psi':<12}{'Mean':>10}   95% CI"]
    lines += [f"{name:<12}{m:>10.3f}   ({lo:.3f}, {hi:.3f})" for name, m, lo, hi in rows]
    text = "\n".join(lines) + "\n"
    (directory / f"{stem}.txt").write_text(text)
    return text


def write_tidy(path, times, zone_ids, mean, lower, upper) -> None:
    """``time,zone,mean,lo,hi`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "zone", "mean", "lo", "hi"])
        for i, t in enumerate(times):
            for j, z in enumerate(zone_ids):
                w.writerow([_fmt(t), z, _fmt(mean[i, j]), _fmt(lower[i, j]), _fmt(upper[i, j])])


def write_tidy_draws(path, times, zone_ids, draws) -> None:
    """``time,zone,draw,value`` rows for every draw."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "zone", "draw", "value"])
        for i, t in enumerate(times):
            for j, z in enumerate(zone_ids):
                for r in range(draws.shape[0]):
                    w.writerow([_fmt(t), z, r, _fmt(draws[r, i, j])])


def read_tidy(path) -> dict:
    rows = list(csv.DictReader(Path(path).read_text().splitlines()))
    return {k: [r[k] for r in rows] for k in (rows[0].keys() if rows else [])}


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Everything a CLI run needs; defaults follow the published settings."""

    model: str = "joint"
    panel: Optional[str] = None
    geometry: Optional[str] = None
    harmonic: HarmonicConfig = field(default_factory=HarmonicConfig)
    kernel: str = EXPONENTIAL
    priors: PriorSpec = field(default_factory=PriorSpec)
    mcmc: McmcConfig = field(default_factory=McmcConfig)
    ffbs_draws: int = 1000
    horizon: int = 10
    holdout: int = 0
    output: str = "output"
    seed: int = 0
    threads: int = 1
    base_dir: str = "."

    def __post_init__(self):
        problems = []
        if self.model not in ("joint", "single-zone"):
            problems.append(f"model must be 'joint' or 'single-zone', got {self.model!r}")
        if self.kernel not in KERNEL_FORMS:
            problems.append(f"kernel must be one of {KERNEL_FORMS}")
        if self.ffbs_draws < 0:
            problems.append("ffbs_draws must be >= 0")
        if self.holdout < 0:
            problems.append("holdout must be >= 0")
        if self.threads < 1:
            problems.append("threads must be >= 1")
        if problems:
            raise SpecValidationError(problems)

    def resolve(self, p: Optional[str]) -> Optional[Path]:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @classmethod
    def from_dict(cls, d: dict, base_dir=".") -> "RunConfig":
        d = dict(d or {})
        known = {f.name for f in fields(cls)}
        data = d.pop("data", {}) or {}
        forecast = d.pop("forecast", {}) or {}
        unknown = set(d) - known
        if unknown:
            raise SpecValidationError([f"unknown config keys: {sorted(unknown)}"])
        kw = {k: v for k, v in d.items() if k not in ("harmonic", "priors", "mcmc")}
        kw["panel"] = data.get("panel", d.get("panel"))
        kw["geometry"] = data.get("geometry", d.get("geometry"))
        kw["horizon"] = int(forecast.get("horizon", d.get("horizon", 10)))
        kw["holdout"] = int(forecast.get("holdout", d.get("holdout", 0)))
        kw["harmonic"] = HarmonicConfig(**(d.get("harmonic") or {}))
        kw["priors"] = PriorSpec.from_dict(d.get("priors") or {})
        mc = dict(d.get("mcmc") or {})
        mc.setdefault("seed", int(d.get("seed", 0)))
        if mc.get("proposal_cov") == "identity":
            mc["proposal_cov"] = None
        elif mc.get("proposal_cov") is not None:
            mc["proposal_cov"] = np.asarray(mc["proposal_cov"], dtype=float)
        kw["mcmc"] = McmcConfig(**mc)
        kw["base_dir"] = str(base_dir)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            d = yaml.safe_load(path.read_text())
        except OSError as exc:
            raise ParseError(path, f"cannot read config ({exc.strerror})") from None
        except yaml.YAMLError as exc:
            line = getattr(getattr(exc, "problem_mark", None), "line", None)
            raise ParseError(path, f"invalid YAML ({exc})", None if line is None else line + 1) from None
        if d is not None and not isinstance(d, dict):
            raise ParseError(path, "config must be a mapping")
        try:
            return cls.from_dict(d or {}, base_dir=path.parent)
        except TypeError as exc:
            raise ParseError(path, str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "data": {"panel": self.panel, "geometry": self.geometry},
            "harmonic": {"period": self.harmonic.period},
            "kernel": self.kernel,
            "priors": self.priors.to_dict(),
            "mcmc": self.mcmc.describe(),
            "ffbs_draws": self.ffbs_draws,
            "forecast": {"horizon": self.horizon, "holdout": self.holdout},
            "output": self.output,
            "seed": self.seed,
            "threads": self.threads,
        }


def write_params_json(path, params: JointStaticParams) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2))


def read_params_json(path) -> JointStaticParams:
    path = Path(path)
    try:
        return JointStaticParams.from_dict(json.loads(path.read_text()))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(path, f"cannot parse parameter file ({exc})") from None
