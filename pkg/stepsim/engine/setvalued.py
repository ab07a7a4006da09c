"""
Finitely generated convex values and the prioritized-queue mean field.

A ConvexValue is the convex hull of a handful of generators. Projection onto
it is a nonnegative least-squares solve over the hull weights.
"""

from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import optimize

from stepsim.core.errors import DimensionError, DomainError, InternalError
from stepsim.core.paths import StateVector, as_state

NNLS_MAX_ITERATIONS = 1000


class ConvexValue(BaseModel):
    """co(generators); a single generator is a singleton value."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    generators: np.ndarray

    @field_validator("generators", mode="before")
    @classmethod
    def check_generators(cls, v):
        arr = np.asarray(v, dtype=float)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
            raise InternalError("a convex value needs at least one generator")
        if not np.all(np.isfinite(arr)):
            raise DomainError("generators must be finite")
        arr = np.array(arr)
        arr.setflags(write=False)
        return arr

    @property
    def dimension(self) -> int:
        return self.generators.shape[1]

    def key(self) -> bytes:
        return self.generators.tobytes()


class QueueMeanField(BaseModel):
    """Arrival rates lambda_k and service probabilities eta_k of N prioritized queues."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    lambda_: List[float] = Field(alias="lambda")
    eta: List[float]

    @field_validator("lambda_")
    @classmethod
    def check_lambda(cls, v):
        if not v or any(not np.isfinite(x) or x <= 0 for x in v):
            raise DomainError("arrival rates must be positive and finite")
        return v

    @field_validator("eta")
    @classmethod
    def check_eta(cls, v):
        if not v or any(not (0.0 < x <= 1.0) for x in v):
            raise DomainError("service probabilities must lie in (0, 1]")
        return v

    @model_validator(mode="after")
    def check_dimensions(self):
        if len(self.lambda_) != len(self.eta):
            raise DimensionError("lambda and eta must have the same length")
        return self

    @property
    def dimension(self) -> int:
        return len(self.eta)

    @property
    def rates(self) -> np.ndarray:
        return np.asarray(self.lambda_, dtype=float)

    @property
    def service(self) -> np.ndarray:
        return np.asarray(self.eta, dtype=float)

    @property
    def u_vectors(self) -> np.ndarray:
        """Row k is u_k = lambda - eta_k e_k."""
        return self.rates[None, :] - np.diag(self.service)

    @property
    def load_ratios(self) -> np.ndarray:
        return self.rates / self.service


class StabilityReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    load: float
    stable: bool


def stability_check(field: QueueMeanField) -> StabilityReport:
    load = float(np.sum(field.load_ratios))
    return StabilityReport(load=load, stable=load < 1.0)


def first_positive(x: StateVector) -> int:
    """Index of the lowest-index strictly positive coordinate, or -1 at the origin."""
    hits = np.flatnonzero(x > 0.0)
    return int(hits[0]) if hits.size else -1


def queue_map_eval(field: QueueMeanField, x) -> ConvexValue:
    """The priority-queue mean field H(x) on the nonnegative orthant.

    H(0) is the closed hull of every drift value met near the origin,
    co(lambda, u_1, ..., u_N).
    """
    x = as_state(x, field.dimension)
    if np.any(x < 0.0):
        raise DomainError(f"queue state must be nonnegative, got {x}")
    u = field.u_vectors
    k = first_positive(x)
    if k < 0:
        return ConvexValue(generators=np.vstack([field.rates[None, :], u]))
    return ConvexValue(generators=u[: k + 1])


def _min_norm_point(points: np.ndarray) -> np.ndarray:
    """argmin of ||p|| over co(points).

    NNLS on [points^T; 1^T] mu = [0; 1]: for mu = s * w with w on the simplex the
    residual is s^2 ||points^T w||^2 + (s - 1)^2, so the optimal mu is the hull
    minimizer scaled by 1 / (1 + min norm^2) and w = mu / sum(mu).
    """
    k, n = points.shape
    system = np.vstack([points.T, np.ones((1, k))])
    rhs = np.zeros(n + 1)
    rhs[n] = 1.0
    try:
        mu, _ = optimize.nnls(system, rhs, maxiter=NNLS_MAX_ITERATIONS)
    except RuntimeError as e:
        raise InternalError(f"hull projection did not converge: {e}") from e
    total = mu.sum()
    if total <= 0.0:
        raise InternalError("hull projection returned no weight")
    return (mu / total) @ points


def project_onto_hull(value: ConvexValue, v) -> StateVector:
    """Euclidean projection of v onto co(generators)."""
    v = as_state(v)
    if v.size != value.dimension:
        raise DimensionError(f"expected dimension {value.dimension}, got {v.size}")
    generators = np.unique(value.generators, axis=0)
    if generators.shape[0] == 1:
        return generators[0].copy()
    return v + _min_norm_point(generators - v)


def hull_contains(value: ConvexValue, v, tol: float = 1e-9) -> bool:
    v = as_state(v)
    return bool(np.linalg.norm(project_onto_hull(value, v) - v) <= tol)


def least_norm_element(value: ConvexValue) -> StateVector:
    return project_onto_hull(value, np.zeros(value.dimension))
