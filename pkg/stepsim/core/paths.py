"""
Domain types shared by every engine module: state vectors, step sizes,
trajectories and their piecewise-linear interpolation, occupation measures,
Cesaro means and the drift + martingale split of one observed increment.

Continuous time is never stored: row k of a trajectory sits at t = gamma * thin * k.
"""

import math
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from stepsim.core.config import settings
from stepsim.core.errors import DimensionError, DomainError, ParameterError, RangeError

# 1-D float64 array of length N
StateVector = np.ndarray

WEIGHT_TOLERANCE = 1e-12
SNAP_ULPS = 4


def near_integer(pos, k):
    """True where pos is within a few ulps of the integer k."""
    return np.abs(pos - k) <= SNAP_ULPS * np.spacing(np.maximum(1.0, np.abs(k)))


def as_state(x, dimension: int = None) -> StateVector:
    """Coerce to a finite 1-D float array, optionally of a given dimension."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionError(f"state must be a non-empty vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("state has non-finite entries")
    if dimension is not None and arr.size != dimension:
        raise DimensionError(f"expected dimension {dimension}, got {arr.size}")
    return arr


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


class StepSize(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float
    gamma_max: float

    @model_validator(mode="after")
    def check_bounds(self):
        if not (0.0 < self.gamma < self.gamma_max):
            raise ParameterError(
                f"step size must satisfy 0 < gamma < gamma_max, "
                f"got gamma={self.gamma}, gamma_max={self.gamma_max}"
            )
        return self

    @classmethod
    def coerce(cls, gamma: Union["StepSize", float]) -> "StepSize":
        if isinstance(gamma, StepSize):
            return gamma
        gamma = float(gamma)
        return cls(gamma=gamma, gamma_max=max(settings.GAMMA_MAX, 2.0 * gamma))


class Trajectory(BaseModel):
    """Iterates x_0 ... x_n of one chain, kept every `thin` steps."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    gamma: StepSize
    states: np.ndarray
    seed: int
    thin: int = 1

    @field_validator("states", mode="before")
    @classmethod
    def check_states(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise DimensionError("states must be a non-empty (n+1, N) array")
        if not np.all(np.isfinite(arr)):
            raise DomainError("trajectory has non-finite entries")
        return _frozen(arr)

    @field_validator("thin")
    @classmethod
    def check_thin(cls, v):
        if v < 1:
            raise ParameterError("thin must be a positive integer")
        return v

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def spacing(self) -> float:
        """Continuous-time distance between two stored rows."""
        return self.gamma.gamma * self.thin

    @property
    def horizon(self) -> float:
        return self.spacing * (len(self) - 1)

    def times(self) -> np.ndarray:
        return self.spacing * np.arange(len(self))

    def __len__(self) -> int:
        return self.states.shape[0]


class InterpolatedPath(BaseModel):
    """Piecewise-linear continuous-time interpolation of a trajectory."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    trajectory: Trajectory

    @property
    def horizon(self) -> float:
        return self.trajectory.horizon

    def breakpoints(self) -> np.ndarray:
        return self.trajectory.times()

    def evaluate(self, t: float) -> StateVector:
        return interpolate(self, t)

    def evaluate_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < 0.0 or ts.max() > self.horizon * (1 + 1e-12)):
            raise RangeError(f"evaluation times outside [0, {self.horizon}]")
        states = self.trajectory.states
        pos = ts / self.trajectory.spacing
        nearest = np.rint(pos)
        on_grid = near_integer(pos, nearest)
        idx = np.minimum(np.floor(pos).astype(int), len(states) - 1)
        frac = pos - idx
        nxt = np.minimum(idx + 1, len(states) - 1)
        out = states[idx] + frac[:, None] * (states[nxt] - states[idx])
        grid_idx = np.minimum(nearest.astype(int), len(states) - 1)
        out[on_grid] = states[grid_idx[on_grid]]
        return out


class OccupationMeasure(BaseModel):
    """Weighted empirical measure over visited states."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    atoms: np.ndarray
    weights: np.ndarray

    @field_validator("atoms", mode="before")
    @classmethod
    def check_atoms(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise DimensionError("atoms must be a non-empty (K, N) array")
        return _frozen(arr)

    @field_validator("weights", mode="before")
    @classmethod
    def check_weights(cls, v):
        arr = np.asarray(v, dtype=float).reshape(-1)
        if np.any(arr < 0):
            raise DomainError("occupation weights must be nonnegative")
        if abs(arr.sum() - 1.0) > WEIGHT_TOLERANCE:
            raise DomainError(f"occupation weights sum to {arr.sum()!r}, not 1")
        return _frozen(arr)

    @model_validator(mode="after")
    def check_lengths(self):
        if self.atoms.shape[0] != self.weights.shape[0]:
            raise DimensionError("one weight per atom is required")
        return self

    def mean(self) -> StateVector:
        return self.weights @ self.atoms

    def mass_at(self, point, tol: float = 0.0) -> float:
        point = as_state(point, self.atoms.shape[1])
        hit = np.all(np.abs(self.atoms - point) <= tol, axis=1)
        return float(self.weights[hit].sum())

    def marginal(self, coordinate: int):
        return self.atoms[:, coordinate], self.weights


class MartingaleDecomposition(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    drift_part: np.ndarray
    noise_part: np.ndarray


def interpolate(path: InterpolatedPath, t: float) -> StateVector:
    """Evaluate the linearly interpolated process X_gamma at time t."""
    traj = path.trajectory
    if t < 0.0 or t > traj.horizon * (1 + 1e-12):
        raise RangeError(f"t={t} outside [0, {traj.horizon}]")
    pos = t / traj.spacing
    k = round(pos)
    if near_integer(pos, float(k)):
        return traj.states[min(k, len(traj) - 1)].copy()
    k = math.floor(pos)
    if k >= len(traj) - 1:
        return traj.states[-1].copy()
    frac = pos - k
    return traj.states[k] + frac * (traj.states[k + 1] - traj.states[k])


def _check_index(traj: Trajectory, n: int) -> None:
    if n < 0 or n >= len(traj):
        raise RangeError(f"index n={n} outside [0, {len(traj) - 1}]")


def occupation_measure(traj: Trajectory, n: int) -> OccupationMeasure:
    """Uniform empirical measure over x_0 ... x_n."""
    _check_index(traj, n)
    return OccupationMeasure(
        atoms=traj.states[: n + 1], weights=np.full(n + 1, 1.0 / (n + 1))
    )


def occupation_window(traj: Trajectory, start: int, stop: int = None) -> OccupationMeasure:
    """Uniform empirical measure over x_start ... x_stop (burn-in trimmed)."""
    stop = len(traj) - 1 if stop is None else stop
    _check_index(traj, stop)
    if start < 0 or start > stop:
        raise RangeError(f"window [{start}, {stop}] is empty or out of range")
    count = stop - start + 1
    return OccupationMeasure(
        atoms=traj.states[start : stop + 1], weights=np.full(count, 1.0 / count)
    )


def cesaro_mean(traj: Trajectory, n: int) -> StateVector:
    _check_index(traj, n)
    return traj.states[: n + 1].mean(axis=0)


def decompose_increment(
    x, x_next, gamma: Union[StepSize, float], drift
) -> MartingaleDecomposition:
    """Split x_next - x into gamma * g(x) and the martingale increment gamma * U."""
    x = as_state(x)
    x_next = as_state(x_next)
    drift = as_state(drift)
    if not (x.shape == x_next.shape == drift.shape):
        raise DimensionError(
            f"dimension mismatch: x {x.shape}, x_next {x_next.shape}, drift {drift.shape}"
        )
    g = StepSize.coerce(gamma).gamma
    drift_part = g * drift
    return MartingaleDecomposition(
        drift_part=drift_part, noise_part=(x_next - x) - drift_part
    )
