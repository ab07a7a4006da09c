"""
Empirical statistics over simulated chains: narrow-convergence sweeps against
a DI solution, long-run occupation of a target set, ergodic averages,
stationarity residuals and 1-D Wasserstein distances between occupation
measures.
"""

import math
from typing import Callable, List, Literal, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator
from scipy import stats

from stepsim.core.errors import DimensionError, ParameterError, RangeError
from stepsim.core.paths import (
    InterpolatedPath,
    OccupationMeasure,
    Trajectory,
    as_state,
    occupation_window,
)
from stepsim.core.workers import map_bounded
from stepsim.engine import prox_calculus as pc
from stepsim.engine.di_solver import AnyPath, path_sup_distance
from stepsim.engine.models import Kernel, ProxSgdProblem, QueueKernel, grid_round, run_chain
from stepsim.engine.setvalued import ConvexValue, project_onto_hull

DEFAULT_BURNIN_FRACTION = 0.1

TargetKind = Literal["point", "finite_set", "hull", "residual"]


class TargetSet(BaseModel):
    """A set the long-run iterates should approach, with a distance to it."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: TargetKind
    points: Optional[np.ndarray] = None
    hull: Optional[ConvexValue] = None
    residual: Optional[Callable] = None

    @field_validator("points", mode="before")
    @classmethod
    def check_points(cls, v):
        if v is None:
            return v
        arr = np.atleast_2d(np.asarray(v, dtype=float))
        if arr.shape[0] == 0:
            raise ParameterError("a target set needs at least one point")
        arr.setflags(write=False)
        return arr

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind in ("point", "finite_set") and self.points is None:
            raise ParameterError(f"{self.kind} target needs points")
        if self.kind == "point" and self.points.shape[0] != 1:
            raise ParameterError("point target takes exactly one point")
        if self.kind == "hull" and self.hull is None:
            raise ParameterError("hull target needs a convex value")
        if self.kind == "residual" and self.residual is None:
            raise ParameterError("residual target needs a residual function")
        return self

    @classmethod
    def point(cls, x) -> "TargetSet":
        return cls(kind="point", points=as_state(x)[None, :])

    @classmethod
    def finite_set(cls, points) -> "TargetSet":
        return cls(kind="finite_set", points=points)

    @classmethod
    def convex_hull(cls, generators) -> "TargetSet":
        return cls(kind="hull", hull=ConvexValue(generators=generators))

    @classmethod
    def from_residual(cls, fn: Callable) -> "TargetSet":
        return cls(kind="residual", residual=fn)

    def distance(self, x) -> float:
        return float(self.distances(np.atleast_2d(np.asarray(x, dtype=float)))[0])

    def distances(self, xs: np.ndarray) -> np.ndarray:
        """Distance of every row of xs to the target."""
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        if self.kind in ("point", "finite_set"):
            if xs.shape[1] != self.points.shape[1]:
                raise DimensionError(
                    f"target dimension {self.points.shape[1]}, states {xs.shape[1]}"
                )
            diff = xs[:, None, :] - self.points[None, :, :]
            return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).min(axis=1)
        if self.kind == "hull":
            return np.array([np.linalg.norm(project_onto_hull(self.hull, x) - x) for x in xs])
        return np.array([float(self.residual(x)) for x in xs])


class SweepRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float
    seed: int
    sup_distance: float


class SweepSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    gamma: float
    exceedance: float
    median: float
    q90: float


class ConvergenceSweep(BaseModel):
    """sup-distances of interpolated chains to the DI solution, per step size."""

    model_config = ConfigDict(frozen=True)

    gammas: List[float]
    eps: float
    records: List[SweepRecord]

    @field_validator("gammas")
    @classmethod
    def check_grid(cls, v):
        if not v or any(b >= a for a, b in zip(v, v[1:])):
            raise ParameterError(f"step grid must be non-empty and strictly decreasing, got {v}")
        return v

    @field_validator("records")
    @classmethod
    def check_records(cls, v):
        if any(r.sup_distance < 0 for r in v):
            raise ParameterError("sup-distances must be nonnegative")
        return v

    def distances(self, gamma: float) -> np.ndarray:
        return np.array([r.sup_distance for r in self.records if r.gamma == gamma])

    def summary(self) -> List[SweepSummary]:
        out = []
        for g in self.gammas:
            d = self.distances(g)
            out.append(
                SweepSummary(
                    gamma=g,
                    exceedance=float(np.mean(d > self.eps)),
                    median=float(np.median(d)),
                    q90=float(np.quantile(d, 0.9)),
                )
            )
        return out


def chain_length(T: float, gamma: float) -> int:
    """ceil(T / gamma), robust to representation error in T / gamma."""
    ratio = T / gamma
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, nearest):
        return int(nearest)
    return int(math.ceil(ratio))


def _sweep_task(task) -> SweepRecord:
    k, exact, a, gamma, gamma_index, T, seed, m = task
    n = chain_length(T, gamma)
    if isinstance(k, QueueKernel):
        # start from the grid point nearest to a
        a = grid_round(a, gamma)
    traj = run_chain(k, a, gamma, n, seed, key=(gamma_index, m))
    distance = path_sup_distance(InterpolatedPath(trajectory=traj), exact, T)
    return SweepRecord(gamma=gamma, seed=m, sup_distance=distance)


def narrow_convergence_sweep(
    k: Kernel,
    exact: AnyPath,
    a,
    gammas: Sequence[float],
    T: float,
    M: int,
    eps: float,
    seed: int = 0,
    workers: int = 1,
) -> ConvergenceSweep:
    """For each gamma, M chains of length ceil(T/gamma) from a, compared to `exact` on [0, T].

    Chain m at grid index j draws from the stream (seed, j, m).
    """
    if M < 1:
        raise ParameterError(f"sweep needs at least one chain, got M={M}")
    if eps <= 0 or T <= 0:
        raise ParameterError("eps and T must be positive")
    gammas = [float(g) for g in gammas]
    if not gammas or any(b >= a_ for a_, b in zip(gammas, gammas[1:])):
        raise ParameterError(f"step grid must be non-empty and strictly decreasing, got {gammas}")
    if exact.horizon < T * (1 - 1e-12):
        raise RangeError(f"reference solution ends at {exact.horizon} < T={T}")
    tasks = [
        (k, exact, a, g, j, T, seed, m) for j, g in enumerate(gammas) for m in range(M)
    ]
    records = map_bounded(_sweep_task, tasks, workers)
    return ConvergenceSweep(gammas=gammas, eps=eps, records=records)


def default_burnin(traj: Trajectory) -> int:
    return int(DEFAULT_BURNIN_FRACTION * len(traj))


def _check_trajectories(trajs: Sequence[Trajectory], burnin: Optional[int]) -> None:
    if not trajs:
        raise ParameterError("at least one trajectory is required")
    if burnin is not None:
        shortest = min(len(t) for t in trajs)
        if burnin < 0 or burnin >= shortest:
            raise ParameterError(f"burn-in {burnin} must lie in [0, {shortest})")


def longrun_fraction(
    trajs: Sequence[Trajectory], target: TargetSet, eps: float, burnin: int = None
) -> float:
    """Fraction of post-burn-in iterates within eps of the target, averaged over trajectories."""
    if eps <= 0:
        raise ParameterError(f"eps must be positive, got {eps}")
    _check_trajectories(trajs, burnin)
    fractions = []
    for traj in trajs:
        start = default_burnin(traj) if burnin is None else burnin
        d = target.distances(traj.states[start:])
        fractions.append(float(np.mean(d <= eps)))
    return float(np.mean(fractions))


def ergodic_distance(trajs: Sequence[Trajectory], target: TargetSet, burnin: int = None) -> float:
    """Distance of the post-burn-in Cesaro mean to the target, averaged over trajectories."""
    _check_trajectories(trajs, burnin)
    distances = []
    for traj in trajs:
        start = default_burnin(traj) if burnin is None else burnin
        mean = occupation_window(traj, start).mean()
        distances.append(target.distance(mean))
    return float(np.mean(distances))


def stationarity_residual(p: ProxSgdProblem, x, gamma: float) -> float:
    """|prox_{gamma r}(x - gamma grad L(x)) - x| / gamma; zero exactly on the stationary set."""
    if gamma <= 0:
        raise ParameterError(f"gamma must be positive, got {gamma}")
    x = as_state(x, p.dimension)
    step = pc.prox(p.regularizer, gamma, x - gamma * p.mean_gradient(x))
    return float(np.linalg.norm(step - x) / gamma)


class StationarityResidual:
    """Picklable x -> stationarity_residual(problem, x, gamma) for residual targets."""

    def __init__(self, problem: ProxSgdProblem, gamma: float = 1.0):
        self.problem = problem
        self.gamma = float(gamma)

    def __call__(self, x) -> float:
        return stationarity_residual(self.problem, x, self.gamma)


def wasserstein_1d(mu: OccupationMeasure, nu: OccupationMeasure, coordinate: int) -> float:
    """W1 between the `coordinate` marginals of two weighted empirical measures."""
    if coordinate < 0 or coordinate >= mu.atoms.shape[1] or coordinate >= nu.atoms.shape[1]:
        raise RangeError(f"coordinate {coordinate} out of range")
    u_values, u_weights = mu.marginal(coordinate)
    v_values, v_weights = nu.marginal(coordinate)
    return float(stats.wasserstein_distance(u_values, v_values, u_weights, v_weights))
