"""Domain types for the single-zone and joint harmonic DLMs.

Everything here is immutable once constructed; arrays are copied and
flagged read-only so the same objects can be shared between chains.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0


class SpecValidationError(ValueError):
    """Raised when a model specification violates one or more invariants.

    ``violations`` holds every problem found, not just the first one.
    """

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TimeGrid:
    """Observation times plus the origin time of the initial state.

    ``gap_scales[i]**2`` is the elapsed time between consecutive states, so
    the first entry refers to the gap ``times[0] - origin_time``.
    """

    times: np.ndarray
    origin_time: float
    gap_scales: np.ndarray = field(init=False)

    def __post_init__(self):
        times = _frozen(self.times)
        if times.ndim != 1:
            raise SpecValidationError(["times must be one-dimensional"])
        origin = float(self.origin_time)
        gaps = np.diff(np.concatenate([[origin], times]))
        if times.size and not np.all(gaps > 0):
            raise SpecValidationError(
                ["times must be strictly increasing and origin_time < times[0]"]
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "origin_time", origin)
        object.__setattr__(self, "gap_scales", _frozen(np.sqrt(gaps)))

    @classmethod
    def from_times(cls, times, origin_time: Optional[float] = None) -> "TimeGrid":
        """Build a grid, defaulting the origin to one median gap before ``times[0]``."""
        times = np.asarray(times, dtype=float)
        if origin_time is None:
            step = float(np.median(np.diff(times))) if times.size > 1 else 1.0
            origin_time = times[0] - step
        return cls(times, origin_time)

    @classmethod
    def regular(cls, n: int, start: float = 1.0, step: float = 1.0) -> "TimeGrid":
        times = start + step * np.arange(n)
        return cls(times, start - step)

    @property
    def n(self) -> int:
        return int(self.times.size)

    def head(self, n: int) -> "TimeGrid":
        return TimeGrid(self.times[:n], self.origin_time)

    def extend(self, times) -> "TimeGrid":
        """Grid for future times continuing this one; origin is the last fitted time."""
        times = np.asarray(times, dtype=float)
        last = self.times[-1] if self.n else self.origin_time
        return TimeGrid(times, last)

    def extend_regular(self, k: int) -> "TimeGrid":
        step = float(np.median(np.diff(self.times))) if self.n > 1 else 1.0
        last = self.times[-1] if self.n else self.origin_time
        return TimeGrid(last + step * np.arange(1, k + 1), last)


def great_circle_km(lon, lat) -> np.ndarray:
    """Pairwise haversine distances (km) between points given in degrees."""
    lon = np.radians(np.asarray(lon, dtype=float))
    lat = np.radians(np.asarray(lat, dtype=float))
    dlon = lon[:, None] - lon[None, :]
    dlat = lat[:, None] - lat[None, :]
    h = np.sin(dlat / 2) ** 2 + np.cos(lat[:, None]) * np.cos(lat[None, :]) * np.sin(dlon / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))
    d = 0.5 * (d + d.T)
    np.fill_diagonal(d, 0.0)
    return d


@dataclass(frozen=True)
class ZoneGeometry:
    zone_ids: tuple
    distances: np.ndarray
    coordinates: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "zone_ids", tuple(str(z) for z in self.zone_ids))
        object.__setattr__(self, "distances", _frozen(self.distances))
        if self.coordinates is not None:
            object.__setattr__(self, "coordinates", _frozen(self.coordinates))
        problems = self.violations()
        if problems:
            raise SpecValidationError(problems)

    def violations(self) -> list[str]:
        d = self.distances
        nz = len(self.zone_ids)
        if d.shape != (nz, nz):
            return [f"distance matrix shape {d.shape} does not match {nz} zones"]
        out = []
        if not np.all(np.isfinite(d)):
            out.append("distance matrix has non-finite entries")
        if not np.array_equal(d, d.T):
            out.append("asymmetric distance matrix")
        if np.any(np.diag(d) != 0):
            out.append("distance matrix diagonal must be zero")
        if np.any(d < 0):
            out.append("negative distances")
        if self.coordinates is not None and self.coordinates.shape != (nz, 2):
            out.append("coordinates must be an (n_zones, 2) array of lon/lat")
        return out

    @classmethod
    def from_coordinates(cls, zone_ids, lon, lat) -> "ZoneGeometry":
        coords = np.column_stack([np.asarray(lon, float), np.asarray(lat, float)])
        return cls(tuple(zone_ids), great_circle_km(coords[:, 0], coords[:, 1]), coords)

    @property
    def n_zones(self) -> int:
        return len(self.zone_ids)

    def permuted(self, order) -> "ZoneGeometry":
        order = np.asarray(order)
        coords = None if self.coordinates is None else self.coordinates[order]
        return ZoneGeometry(
            tuple(self.zone_ids[i] for i in order),
            self.distances[np.ix_(order, order)],
            coords,
        )


@dataclass(frozen=True)
class PanelData:
    """Rates per time (rows) and zone (columns) with an observation mask.

    Unobserved cells are stored as NaN so they cannot leak into arithmetic.
    """

    grid: TimeGrid
    values: np.ndarray
    observed: np.ndarray

    def __post_init__(self):
        observed = np.array(self.observed, dtype=bool)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
            observed = observed.reshape(values.shape)
        problems = []
        if values.shape != observed.shape:
            problems.append(f"values shape {values.shape} != mask shape {observed.shape}")
        elif values.shape[0] != self.grid.n:
            problems.append(f"panel has {values.shape[0]} rows but grid has {self.grid.n} times")
        elif not np.all(np.isfinite(values[observed])):
            problems.append("observed entries must be finite")
        if problems:
            raise SpecValidationError(problems)
        values = np.where(observed, values, np.nan)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "observed", _frozen(observed, dtype=bool))

    @classmethod
    def from_values(cls, grid: TimeGrid, values) -> "PanelData":
        """Mask derived from finiteness of ``values``."""
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        return cls(grid, values, np.isfinite(values))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def n_zones(self) -> int:
        return self.values.shape[1]

    def head(self, n: int) -> "PanelData":
        return PanelData(self.grid.head(n), self.values[:n], self.observed[:n])

    def zone(self, j: int) -> "PanelData":
        return PanelData(self.grid, self.values[:, [j]], self.observed[:, [j]])

    def permuted(self, order) -> "PanelData":
        order = np.asarray(order)
        return PanelData(self.grid, self.values[:, order], self.observed[:, order])

    def filled(self, fill: float = 0.0) -> np.ndarray:
        return np.where(self.observed, self.values, fill)


@dataclass(frozen=True)
class HarmonicConfig:
    period: float = 12.0

    def __post_init__(self):
        if not self.period > 0:
            raise SpecValidationError([f"period must be positive, got {self.period}"])

    def angular(self, t):
        return 2.0 * np.pi * np.asarray(t, dtype=float) / self.period


def observation_row(t: float, config: HarmonicConfig = HarmonicConfig()) -> np.ndarray:
    """Single-zone observation row ``(sin, cos, 1)`` at calendar time ``t``."""
    w = 2.0 * math.pi * float(t) / config.period
    return np.array([math.sin(w), math.cos(w), 1.0])


def harmonic_design(times, config: HarmonicConfig = HarmonicConfig()) -> tuple[np.ndarray, np.ndarray]:
    w = config.angular(times)
    return np.sin(w), np.cos(w)


@dataclass(frozen=True)
class SingleZoneState:
    theta1: float
    theta2: float
    theta3: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.theta1, self.theta2, self.theta3)):
            raise SpecValidationError(["single-zone state must be finite"])


@dataclass(frozen=True)
class KernelParams:
    sigma: float
    phi: float

    def __post_init__(self):
        problems = []
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            problems.append(f"kernel sigma must be positive, got {self.sigma}")
        if not (math.isfinite(self.phi) and self.phi > 0):
            problems.append(f"kernel phi must be positive, got {self.phi}")
        if problems:
            raise SpecValidationError(problems)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "phi", float(self.phi))


@dataclass(frozen=True)
class PriorSpec:
    """Prior hyperparameters.

    Variances of the log-normal kernel priors are given as standard
    deviations here; the defaults correspond to a variance of 0.1.
    """

    precision_shape: float = 0.1
    precision_rate: float = 0.1
    log_sigma_mean: float = math.log(0.1)
    log_sigma_sd: float = math.sqrt(0.1)
    log_phi_mean: float = math.log(0.1)
    log_phi_sd: float = math.sqrt(0.1)
    gp_mean1: float = 1.5
    gp_mean2: float = 1.5
    level_init_mean: float = 6.0
    level_init_var: float = 20.0

    def __post_init__(self):
        positive = ("precision_shape", "precision_rate", "log_sigma_sd", "log_phi_sd", "level_init_var")
        problems = [f"{name} must be positive" for name in positive if not getattr(self, name) > 0]
        if problems:
            raise SpecValidationError(problems)

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(**{k: float(v) for k, v in d.items()})


@dataclass(frozen=True)
class JointStaticParams:
    """Static parameters of the joint model plus the initial level distribution."""

    obs_var: np.ndarray
    sys_var: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray
    eta1: KernelParams
    eta2: KernelParams
    eta3: KernelParams
    init_mean: np.ndarray
    init_var: np.ndarray

    def __post_init__(self):
        for name in ("obs_var", "sys_var", "theta1", "theta2", "init_mean"):
            object.__setattr__(self, name, _frozen(np.atleast_1d(getattr(self, name))))
        object.__setattr__(self, "init_var", _frozen(np.atleast_2d(self.init_var)))
        problems = self.violations()
        if problems:
            raise SpecValidationError(problems)

    def violations(self) -> list[str]:
        nz = self.obs_var.size
        out = []
        for name in ("sys_var", "theta1", "theta2", "init_mean"):
            if getattr(self, name).shape != (nz,):
                out.append(f"{name} has shape {getattr(self, name).shape}, expected ({nz},)")
        if self.init_var.shape != (nz, nz):
            out.append(f"init_var has shape {self.init_var.shape}, expected ({nz}, {nz})")
        for name in ("obs_var", "sys_var"):
            v = getattr(self, name)
            bad = np.flatnonzero(~(v > 0))
            if bad.size:
                out.append(f"non-positive variance {name}[{', '.join(str(i + 1) for i in bad)}]")
        for name in ("theta1", "theta2", "init_mean"):
            if not np.all(np.isfinite(getattr(self, name))):
                out.append(f"{name} must be finite")
        if self.init_var.shape == (nz, nz):
            C0 = self.init_var
            if not np.array_equal(C0, C0.T):
                out.append("init_var must be symmetric")
            elif not np.all(np.isfinite(C0)) or np.linalg.eigvalsh(C0).min() <= 0:
                out.append("init_var must be positive definite")
        return out

    @property
    def n_zones(self) -> int:
        return self.obs_var.size

    @classmethod
    def with_priors(cls, obs_var, sys_var, theta1, theta2, eta1, eta2, eta3,
                    priors: PriorSpec = PriorSpec()) -> "JointStaticParams":
        nz = np.atleast_1d(obs_var).size
        return cls(obs_var, sys_var, theta1, theta2, eta1, eta2, eta3,
                   np.full(nz, priors.level_init_mean), priors.level_init_var * np.eye(nz))

    def replace(self, **changes) -> "JointStaticParams":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return JointStaticParams(**kw)

    def permuted(self, order) -> "JointStaticParams":
        order = np.asarray(order)
        return self.replace(
            obs_var=self.obs_var[order], sys_var=self.sys_var[order],
            theta1=self.theta1[order], theta2=self.theta2[order],
            init_mean=self.init_mean[order], init_var=self.init_var[np.ix_(order, order)],
        )

    def to_dict(self) -> dict:
        return {
            "obs_var": self.obs_var.tolist(),
            "sys_var": self.sys_var.tolist(),
            "theta1": self.theta1.tolist(),
            "theta2": self.theta2.tolist(),
            "eta1": [self.eta1.sigma, self.eta1.phi],
            "eta2": [self.eta2.sigma, self.eta2.phi],
            "eta3": [self.eta3.sigma, self.eta3.phi],
            "init_mean": self.init_mean.tolist(),
            "init_var": self.init_var.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "JointStaticParams":
        return cls(
            obs_var=d["obs_var"], sys_var=d["sys_var"],
            theta1=d["theta1"], theta2=d["theta2"],
            eta1=KernelParams(*d["eta1"]), eta2=KernelParams(*d["eta2"]), eta3=KernelParams(*d["eta3"]),
            init_mean=d["init_mean"], init_var=d["init_var"],
        )

    def __eq__(self, other):
        if not isinstance(other, JointStaticParams):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


@dataclass(frozen=True)
class ValidatedModel:
    params: JointStaticParams
    geometry: ZoneGeometry
    panel: PanelData

    @property
    def n_zones(self) -> int:
        return self.geometry.n_zones


def validate_joint_spec(params: JointStaticParams, geometry: ZoneGeometry,
                        panel: PanelData) -> ValidatedModel:
    """Cross-check dimensions of a joint specification.

    The individual types validate themselves on construction; this collects
    the remaining consistency problems and raises them together.
    """
    problems = params.violations() + geometry.violations()
    nz = geometry.n_zones
    if params.n_zones != nz:
        problems.append(f"dimension mismatch: params have {params.n_zones} zones, geometry {nz}")
    if panel.n_zones != nz:
        problems.append(f"dimension mismatch: panel has {panel.n_zones} columns, geometry {nz} zones")
    if problems:
        raise SpecValidationError(problems)
    return ValidatedModel(params, geometry, panel)
