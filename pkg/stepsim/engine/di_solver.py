"""
Solvers for the limiting differential inclusion x'(t) in H(x(t)).

- `solve_queue_exact`: event-driven closed form for the priority-queue field,
  with sliding on the faces where high-priority queues are empty.
- `solve_forward_backward`: y <- prox_{h r}(y - h grad L(y)) for H = -grad L - dr.
- `solve_filippov_reference`: explicit projected scheme for any finitely
  generated map, used as an independent oracle.
"""

import math
from typing import Callable, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from stepsim.core.errors import ConvergenceError, DomainError, ParameterError, RangeError
from stepsim.core.paths import InterpolatedPath, StateVector, as_state
from stepsim.engine import prox_calculus as pc
from stepsim.engine.setvalued import (
    ConvexValue,
    QueueMeanField,
    first_positive,
    least_norm_element,
    project_onto_hull,
    queue_map_eval,
)

EVENT_BUDGET = 1_000_000
EVENT_MERGE = 1e-13
NODE_TOLERANCE = 1e-12
SUP_GRID_POINTS = 10_000
SNAP_FACTOR = 10.0


def _frozen(arr) -> np.ndarray:
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


class PiecewisePath(BaseModel):
    """Continuous piecewise-linear path given by its breakpoints."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    breakpoints: np.ndarray
    nodes: np.ndarray
    segment_velocities: np.ndarray

    @field_validator("breakpoints", "nodes", "segment_velocities", mode="before")
    @classmethod
    def freeze(cls, v):
        return _frozen(v)

    @model_validator(mode="after")
    def check_segments(self):
        bp = self.breakpoints
        if bp.ndim != 1 or bp.size < 1 or bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise DomainError("breakpoints must start at 0 and increase strictly")
        if self.nodes.shape[0] != bp.size:
            raise DomainError("one node per breakpoint is required")
        if self.segment_velocities.shape[0] != bp.size - 1:
            raise DomainError("one velocity per segment is required")
        if bp.size > 1:
            predicted = self.nodes[:-1] + np.diff(bp)[:, None] * self.segment_velocities
            scale = max(1.0, float(np.abs(self.nodes).max()))
            if np.abs(predicted - self.nodes[1:]).max() > NODE_TOLERANCE * scale:
                raise DomainError("nodes are inconsistent with segment velocities")
        return self

    @property
    def horizon(self) -> float:
        return float(self.breakpoints[-1])

    def evaluate_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < 0.0 or ts.max() > self.horizon * (1 + 1e-12)):
            raise RangeError(f"evaluation times outside [0, {self.horizon}]")
        if self.segment_velocities.shape[0] == 0:
            return np.repeat(self.nodes[:1], ts.size, axis=0)
        seg = self.segment_of(ts)
        return self.nodes[seg] + (ts - self.breakpoints[seg])[:, None] * self.segment_velocities[seg]

    def evaluate(self, t: float) -> StateVector:
        return self.evaluate_many(np.array([t]))[0]

    def segment_of(self, ts) -> np.ndarray:
        seg = np.searchsorted(self.breakpoints, np.asarray(ts, dtype=float), side="right") - 1
        return np.clip(seg, 0, max(self.segment_velocities.shape[0] - 1, 0))


class DenseSolution(BaseModel):
    """Samples of a numeric solution on the uniform grid 0, step, 2 step, ..."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    step: float
    samples: np.ndarray

    @field_validator("samples", mode="before")
    @classmethod
    def check_samples(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise DomainError("samples must be a non-empty (J+1, N) array")
        if not np.all(np.isfinite(arr)):
            raise DomainError("numeric solution diverged to non-finite values")
        return _frozen(arr)

    @property
    def horizon(self) -> float:
        return self.step * (self.samples.shape[0] - 1)

    def breakpoints(self) -> np.ndarray:
        return self.step * np.arange(self.samples.shape[0])

    def evaluate_many(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < 0.0 or ts.max() > self.horizon * (1 + 1e-12)):
            raise RangeError(f"evaluation times outside [0, {self.horizon}]")
        pos = ts / self.step
        last = self.samples.shape[0] - 1
        idx = np.clip(np.floor(pos).astype(int), 0, max(last - 1, 0))
        frac = np.clip(pos - idx, 0.0, 1.0)
        nxt = np.minimum(idx + 1, last)
        return self.samples[idx] + frac[:, None] * (self.samples[nxt] - self.samples[idx])

    def evaluate(self, t: float) -> StateVector:
        return self.evaluate_many(np.array([t]))[0]


AnyPath = Union[InterpolatedPath, PiecewisePath, DenseSolution]


def _breakpoints(p: AnyPath) -> np.ndarray:
    bp = p.breakpoints
    return bp() if callable(bp) else bp


# ---------------------------------------------------------------- queue DI


def face_velocity(field: QueueMeanField, x: StateVector) -> StateVector:
    """Filippov velocity of the queue DI at x.

    Empty queues ahead of the first non-empty one are held at zero by giving
    u_j the weight lambda_j / eta_j; the remaining mass goes to the queue being
    served. When the held queues already use all the service, the first queue
    that cannot be held takes the remainder and the rest see pure arrivals.
    """
    lam, eta = field.rates, field.service
    alpha = lam / eta
    k = first_positive(x)
    limit = k if k >= 0 else field.dimension
    served = k
    used = 0.0
    for j in range(limit):
        if used + alpha[j] >= 1.0:
            served = j
            break
        used += alpha[j]
    if served < 0:
        return np.zeros(field.dimension)
    v = lam.copy()
    v[:served] = 0.0
    v[served] = lam[served] - (1.0 - used) * eta[served]
    return v


def solve_queue_exact(field: QueueMeanField, a, T: float) -> PiecewisePath:
    """Exact solution of x' in H(x) on [0, T] for the priority-queue field."""
    if T <= 0:
        raise ParameterError(f"horizon must be positive, got {T}")
    x = as_state(a, field.dimension)
    if np.any(x < 0):
        raise DomainError(f"initial queue state must be nonnegative, got {x}")
    x = x.copy()
    t = 0.0
    breakpoints, nodes, velocities = [0.0], [x.copy()], []
    events = 0
    while t < T:
        v = face_velocity(field, x)
        draining = (x > 0.0) & (v < 0.0)
        hit_times = np.full(field.dimension, np.inf)
        hit_times[draining] = x[draining] / -v[draining]
        dt = float(hit_times.min())
        if dt <= EVENT_MERGE:
            # merged event: snap without a breakpoint
            x[hit_times <= EVENT_MERGE] = 0.0
            events += 1
            if events > EVENT_BUDGET:
                raise ConvergenceError("event budget exceeded")
            continue
        t_next = min(t + dt, T)
        x_next = x + (t_next - t) * v
        if t_next < T or math.isclose(t + dt, T, rel_tol=0.0, abs_tol=EVENT_MERGE):
            x_next[hit_times <= dt + EVENT_MERGE] = 0.0
        x_next = np.maximum(x_next, 0.0)
        breakpoints.append(t_next)
        nodes.append(x_next.copy())
        velocities.append(v)
        t, x = t_next, x_next
        events += 1
        if events > EVENT_BUDGET:
            raise ConvergenceError(
                f"more than {EVENT_BUDGET} events: degenerate parameterization"
            )
    return PiecewisePath(
        breakpoints=np.array(breakpoints),
        nodes=np.vstack(nodes),
        segment_velocities=np.vstack(velocities) if velocities else np.zeros((0, field.dimension)),
    )


# ---------------------------------------------------------------- numeric schemes


def _grid_size(T: float, step: float) -> int:
    ratio = T / step
    nearest = round(ratio)
    if abs(ratio - nearest) <= 1e-9 * max(1.0, nearest):
        return int(nearest)
    return int(math.ceil(ratio))


def solve_forward_backward(problem, a, T: float, step: float) -> DenseSolution:
    """Implicit-explicit discretization of x' in -grad L(x) - dr(x)."""
    if step <= 0 or step > 1.0 / problem.lipschitz:
        raise ParameterError(
            f"step {step} must lie in (0, 1/C] with C = {problem.lipschitz}"
        )
    if T <= 0:
        raise ParameterError(f"horizon must be positive, got {T}")
    y = as_state(a, problem.dimension)
    count = _grid_size(T, step)
    samples = np.empty((count + 1, y.size))
    samples[0] = y
    for j in range(count):
        y = pc.prox(problem.regularizer, step, y - step * problem.mean_gradient(y))
        samples[j + 1] = y
    return DenseSolution(step=step, samples=samples)


def queue_evaluator(field: QueueMeanField) -> Callable[[StateVector], ConvexValue]:
    """queue_map_eval memoized on the face (index of the first non-empty queue)."""
    cache = {}

    def evaluate(x: StateVector) -> ConvexValue:
        face = first_positive(x)
        if face not in cache:
            cache[face] = queue_map_eval(field, x)
        return cache[face]

    return evaluate


def solve_filippov_reference(
    evaluator: Callable[[StateVector], ConvexValue],
    a,
    T: float,
    step: float,
    snap: float = None,
) -> DenseSolution:
    """Projected explicit Euler scheme on the nonnegative orthant.

    The velocity is the projection onto H(snapped state) of the velocity
    realized at the previous step, so sliding modes emerge as the fixed point
    of project-then-clip.
    """
    if step <= 0:
        raise ParameterError(f"step must be positive, got {step}")
    if T <= 0:
        raise ParameterError(f"horizon must be positive, got {T}")
    snap = SNAP_FACTOR * step if snap is None else snap
    y = as_state(a).copy()
    count = _grid_size(T, step)
    samples = np.empty((count + 1, y.size))
    samples[0] = y

    value = evaluator(np.where(y < snap, 0.0, y))
    previous = least_norm_element(value)
    last_key, last_velocity = None, None
    for j in range(count):
        value = evaluator(np.where(y < snap, 0.0, y))
        key = value.key()
        if key == last_key and np.array_equal(previous, last_velocity):
            v = last_velocity
        else:
            v = project_onto_hull(value, previous)
        y_next = np.maximum(y + step * v, 0.0)
        previous = (y_next - y) / step
        last_key, last_velocity = key, v
        y = y_next
        samples[j + 1] = y
    return DenseSolution(step=step, samples=samples)


# ---------------------------------------------------------------- path metrics


def _refinement_grid(p: AnyPath, q: AnyPath, T: float) -> np.ndarray:
    grid = [np.linspace(0.0, T, SUP_GRID_POINTS)]
    for path in (p, q):
        bp = _breakpoints(path)
        grid.append(bp[bp <= T])
    return np.unique(np.concatenate(grid))


def path_sup_distance(p: AnyPath, q: AnyPath, T: float) -> float:
    """d_T(p, q) = sup_{t <= T} |p(t) - q(t)| over a refinement grid."""
    if T <= 0:
        raise ParameterError(f"horizon must be positive, got {T}")
    for path in (p, q):
        if path.horizon < T * (1 - 1e-12):
            raise RangeError(f"path evaluable up to {path.horizon} < T={T}")
    ts = _refinement_grid(p, q, T)
    diff = p.evaluate_many(ts) - q.evaluate_many(ts)
    return float(np.sqrt(np.einsum("ij,ij->i", diff, diff)).max())


def path_distance_d(p: AnyPath, q: AnyPath, horizon: float = None) -> float:
    """sum_n 2^{-n} min(1, sup_{[0,n]} |p - q|), truncated at the common horizon."""
    common = min(p.horizon, q.horizon)
    horizon = common if horizon is None else min(horizon, common)
    last = int(math.floor(horizon))
    if last < 1:
        ts = np.array([0.0])
    else:
        ts = _refinement_grid(p, q, float(last))
    diff = p.evaluate_many(ts) - q.evaluate_many(ts)
    running = np.maximum.accumulate(np.sqrt(np.einsum("ij,ij->i", diff, diff)))
    total = 0.0
    for n in range(last + 1):
        idx = np.searchsorted(ts, n, side="right") - 1
        total += 2.0**-n * min(1.0, float(running[idx]))
    return total


def sample_path(path: PiecewisePath, grid_points: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Times, states and segment ids at the breakpoints plus a uniform grid."""
    ts = path.breakpoints
    if grid_points >= 2:
        ts = np.unique(np.concatenate([ts, np.linspace(0.0, path.horizon, grid_points)]))
    return ts, path.evaluate_many(ts), path.segment_of(ts)
