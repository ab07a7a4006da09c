"""
Proximity operators, Moreau envelope gradients, least-norm subgradients,
resolvents and Yosida regularizations.

Catalog functions have closed forms. The `custom` kind is a convex function
given by a value oracle and a subgradient oracle. With a gradient Lipschitz
bound its prox is computed by an accelerated gradient method on the strongly
convex prox objective. Without one the function may be nonsmooth and the
prox comes from a proximal cutting-plane method whose quadratic subproblems
are solved by SLSQP. least_norm_subgradient returns the oracle's output, so
the oracle should pick the least-norm subgradient at kinks.
"""

from typing import Callable, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import optimize

from stepsim.core.errors import (
    ConvergenceError,
    DimensionError,
    DomainError,
    InternalError,
    OracleError,
    ParameterError,
)
from stepsim.core.paths import StateVector, as_state

INNER_TOLERANCE = 1e-12
INNER_MAX_ITERATIONS = 100_000
MONOTONICITY_TOLERANCE = 1e-10
CUT_TOLERANCE = 1e-12
MAX_CUTS = 500
SUBPROBLEM_MAX_ITERATIONS = 1000

FunctionKind = Literal[
    "zero", "weighted_l1", "squared_l2", "box", "nonneg", "custom"
]


class ConvexFunctionSpec(BaseModel):
    """A closed convex function r, optionally recentred as y -> r(y - shift)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: FunctionKind
    weights: Optional[Union[float, List[float]]] = None
    scale: float = 1.0
    lower: Optional[List[float]] = None
    upper: Optional[List[float]] = None
    shift: Optional[List[float]] = None
    value_oracle: Optional[Callable] = None
    gradient_oracle: Optional[Callable] = None
    lipschitz: Optional[float] = None

    @model_validator(mode="after")
    def check_kind(self):
        if self.kind == "weighted_l1":
            w = np.atleast_1d(np.asarray(self.weights, dtype=float))
            if self.weights is None or np.any(w <= 0):
                raise ParameterError("weighted_l1 needs positive weights")
        elif self.kind == "squared_l2":
            if self.scale <= 0:
                raise ParameterError("squared_l2 needs a positive scale")
        elif self.kind == "box":
            if self.lower is None or self.upper is None:
                raise ParameterError("box needs lower and upper bounds")
            if len(self.lower) != len(self.upper):
                raise DimensionError("box bounds must have equal length")
            if any(lo > hi for lo, hi in zip(self.lower, self.upper)):
                raise ParameterError("box bounds must be ordered")
        elif self.kind == "custom":
            if self.value_oracle is None or self.gradient_oracle is None:
                raise ParameterError("custom needs value and subgradient oracles")
            if self.lipschitz is not None and not self.lipschitz > 0:
                raise ParameterError("custom gradient Lipschitz bound must be positive")
        return self

    @classmethod
    def zero(cls) -> "ConvexFunctionSpec":
        return cls(kind="zero")

    @classmethod
    def weighted_l1(cls, weights, shift=None) -> "ConvexFunctionSpec":
        if np.ndim(weights) > 0:
            weights = [float(w) for w in weights]
        return cls(kind="weighted_l1", weights=weights, shift=_as_list(shift))

    @classmethod
    def squared_l2(cls, scale: float = 1.0, shift=None) -> "ConvexFunctionSpec":
        return cls(kind="squared_l2", scale=scale, shift=_as_list(shift))

    @classmethod
    def box(cls, lower, upper) -> "ConvexFunctionSpec":
        return cls(kind="box", lower=_as_list(lower), upper=_as_list(upper))

    @classmethod
    def nonneg(cls) -> "ConvexFunctionSpec":
        return cls(kind="nonneg")

    @classmethod
    def custom(cls, value, gradient, lipschitz: Optional[float] = None, shift=None):
        """Smooth when a gradient Lipschitz bound is given, otherwise possibly nonsmooth."""
        return cls(
            kind="custom",
            value_oracle=value,
            gradient_oracle=gradient,
            lipschitz=lipschitz,
            shift=_as_list(shift),
        )

    @property
    def separable(self) -> bool:
        return self.kind != "custom"


class MonotoneOperatorSpec(BaseModel):
    """Either the subdifferential of a convex function or x -> Mx + b."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: Literal["subdifferential", "affine"]
    function: Optional[ConvexFunctionSpec] = None
    matrix: Optional[np.ndarray] = None
    offset: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def check_monotone(self):
        if self.kind == "subdifferential":
            if self.function is None:
                raise ParameterError("subdifferential operator needs a function")
            return self
        if self.matrix is None:
            raise ParameterError("affine operator needs a matrix")
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError("affine operator matrix must be square")
        if self.offset is not None and np.asarray(self.offset).shape != (m.shape[0],):
            raise DimensionError("affine offset must match the matrix size")
        if np.linalg.eigvalsh(m + m.T).min() < -MONOTONICITY_TOLERANCE:
            raise ParameterError("affine operator is not monotone (M + M^T not PSD)")
        return self

    @classmethod
    def subdifferential(cls, function: ConvexFunctionSpec) -> "MonotoneOperatorSpec":
        return cls(kind="subdifferential", function=function)

    @classmethod
    def affine(cls, matrix, offset=None) -> "MonotoneOperatorSpec":
        m = np.asarray(matrix, dtype=float)
        b = None if offset is None else np.asarray(offset, dtype=float).reshape(-1)
        return cls(kind="affine", matrix=m, offset=b)

    def apply(self, x) -> StateVector:
        """The single value of an affine operator."""
        if self.kind != "affine":
            raise InternalError("only affine operators are single valued here")
        b = 0.0 if self.offset is None else self.offset
        return self.matrix @ as_state(x) + b


def _as_list(v):
    if v is None:
        return None
    return [float(c) for c in np.atleast_1d(np.asarray(v, dtype=float))]


def _broadcast(values, n: int) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values, dtype=float))
    if arr.size == 1:
        return np.full(n, float(arr[0]))
    if arr.size != n:
        raise DimensionError(f"parameter of length {arr.size} for dimension {n}")
    return arr


def _shift_of(r: ConvexFunctionSpec, n: int) -> np.ndarray:
    return np.zeros(n) if r.shift is None else _broadcast(r.shift, n)


def _call_oracle(oracle: Callable, y: np.ndarray, scalar: bool):
    try:
        out = oracle(y)
    except Exception as e:
        raise OracleError(f"custom oracle failed: {e}") from e
    out = np.asarray(out, dtype=float)
    if scalar:
        if out.size != 1 or not np.isfinite(out).all():
            raise OracleError("value oracle must return a finite scalar")
        return float(out.reshape(()))
    if out.shape != y.shape or not np.isfinite(out).all():
        raise OracleError("gradient oracle returned an invalid vector")
    return out


def evaluate(r: ConvexFunctionSpec, x) -> float:
    """r(x); +inf outside the domain of an indicator."""
    x = as_state(x)
    z = x - _shift_of(r, x.size)
    if r.kind == "zero":
        return 0.0
    if r.kind == "weighted_l1":
        return float(np.sum(_broadcast(r.weights, z.size) * np.abs(z)))
    if r.kind == "squared_l2":
        return 0.5 * r.scale * float(z @ z)
    if r.kind == "box":
        lo, hi = _broadcast(r.lower, z.size), _broadcast(r.upper, z.size)
        return 0.0 if np.all((z >= lo) & (z <= hi)) else np.inf
    if r.kind == "nonneg":
        return 0.0 if np.all(z >= 0) else np.inf
    return _call_oracle(r.value_oracle, z, scalar=True)


def _prox_smooth(r: ConvexFunctionSpec, gamma: float, z: np.ndarray) -> np.ndarray:
    # minimize gamma*f(y) + |y - z|^2 / 2: 1-strongly convex, (1 + gamma*L)-smooth
    smooth = 1.0 + gamma * r.lipschitz
    step = 1.0 / smooth
    q = np.sqrt(1.0 / smooth)
    momentum = (1.0 - q) / (1.0 + q)
    y = z.copy()
    y_prev = z.copy()
    for _ in range(INNER_MAX_ITERATIONS):
        w = y + momentum * (y - y_prev)
        grad = gamma * _call_oracle(r.gradient_oracle, w, scalar=False) + (w - z)
        y_prev, y = y, w - step * grad
        residual = gamma * _call_oracle(r.gradient_oracle, y, scalar=False) + (y - z)
        if np.linalg.norm(residual) <= INNER_TOLERANCE * max(1.0, np.linalg.norm(z)):
            return y
    raise ConvergenceError(
        f"custom prox did not reach tolerance {INNER_TOLERANCE} "
        f"in {INNER_MAX_ITERATIONS} iterations"
    )


def _prox_cutting_plane(r: ConvexFunctionSpec, gamma: float, z: np.ndarray) -> np.ndarray:
    """Proximal Kelley method with cuts f(y) >= f(y_i) + <g_i, y - y_i>.

    Each round minimizes gamma * t + |y - z|^2 / 2 over t above every cut and
    adds a cut at the minimizer. Stops once f and the cut model agree there;
    a polyhedral f needs finitely many cuts.
    """
    n = z.size
    slopes = [_call_oracle(r.gradient_oracle, z, scalar=False)]
    intercepts = [_call_oracle(r.value_oracle, z, scalar=True) - float(slopes[0] @ z)]
    y = z.copy()
    for _ in range(MAX_CUTS):
        G = np.vstack(slopes)
        a = np.asarray(intercepts)
        result = optimize.minimize(
            lambda v: gamma * v[n] + 0.5 * float((v[:n] - z) @ (v[:n] - z)),
            np.append(y, np.max(a + G @ y)),
            jac=lambda v: np.append(v[:n] - z, gamma),
            constraints=[
                {
                    "type": "ineq",
                    "fun": lambda v: v[n] - a - G @ v[:n],
                    "jac": lambda v: np.hstack([-G, np.ones((a.size, 1))]),
                }
            ],
            method="SLSQP",
            options={"ftol": 1e-15, "maxiter": SUBPROBLEM_MAX_ITERATIONS},
        )
        if not np.isfinite(result.x).all():
            raise ConvergenceError(f"cutting-plane subproblem failed: {result.message}")
        y = result.x[:n]
        value = _call_oracle(r.value_oracle, y, scalar=True)
        model = float(np.max(a + G @ y))
        objective = gamma * value + 0.5 * float((y - z) @ (y - z))
        if gamma * (value - model) <= CUT_TOLERANCE * max(1.0, abs(objective)):
            return y
        g = _call_oracle(r.gradient_oracle, y, scalar=False)
        slopes.append(g)
        intercepts.append(value - float(g @ y))
    raise ConvergenceError(f"custom prox did not close the cutting-plane gap in {MAX_CUTS} cuts")


def prox(r: ConvexFunctionSpec, gamma: float, x) -> StateVector:
    """argmin_y gamma * r(y) + |y - x|^2 / 2."""
    if gamma <= 0:
        raise ParameterError(f"prox parameter must be positive, got {gamma}")
    x = as_state(x)
    c = _shift_of(r, x.size)
    z = x - c
    if r.kind == "zero":
        y = z
    elif r.kind == "weighted_l1":
        tau = gamma * _broadcast(r.weights, z.size)
        y = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    elif r.kind == "squared_l2":
        y = z / (1.0 + gamma * r.scale)
    elif r.kind == "box":
        y = np.clip(z, _broadcast(r.lower, z.size), _broadcast(r.upper, z.size))
    elif r.kind == "nonneg":
        y = np.maximum(z, 0.0)
    elif r.lipschitz is not None:
        y = _prox_smooth(r, gamma, z)
    else:
        y = _prox_cutting_plane(r, gamma, z)
    return y + c


def prox_batch(r: ConvexFunctionSpec, gamma: float, xs: np.ndarray) -> np.ndarray:
    """Row-wise prox of an (M, N) array; closed forms are vectorized."""
    xs = np.asarray(xs, dtype=float)
    if r.kind == "custom":
        return np.vstack([prox(r, gamma, row) for row in xs])
    n = xs.shape[1]
    c = _shift_of(r, n)
    z = xs - c
    if r.kind == "zero":
        y = z
    elif r.kind == "weighted_l1":
        tau = gamma * _broadcast(r.weights, n)
        y = np.sign(z) * np.maximum(np.abs(z) - tau, 0.0)
    elif r.kind == "squared_l2":
        y = z / (1.0 + gamma * r.scale)
    elif r.kind == "box":
        y = np.clip(z, _broadcast(r.lower, n), _broadcast(r.upper, n))
    else:
        y = np.maximum(z, 0.0)
    return y + c


def prox_scalar(r: ConvexFunctionSpec, gamma: float, coordinate: int, n: int):
    """The one-dimensional prox acting on a single coordinate of a separable r."""
    if not r.separable:
        raise InternalError("scalar prox exists for separable functions only")
    c = _shift_of(r, n)[coordinate]
    if r.kind == "zero":
        return lambda t: t
    if r.kind == "weighted_l1":
        tau = gamma * _broadcast(r.weights, n)[coordinate]
        return lambda t: c + np.sign(t - c) * max(abs(t - c) - tau, 0.0)
    if r.kind == "squared_l2":
        factor = 1.0 + gamma * r.scale
        return lambda t: c + (t - c) / factor
    if r.kind == "box":
        lo = _broadcast(r.lower, n)[coordinate]
        hi = _broadcast(r.upper, n)[coordinate]
        return lambda t: c + min(max(t - c, lo), hi)
    return lambda t: c + max(t - c, 0.0)


def kinks(r: ConvexFunctionSpec, gamma: float, coordinate: int, n: int) -> List[float]:
    """Points where the scalar prox is not differentiable."""
    c = _shift_of(r, n)[coordinate]
    if r.kind == "weighted_l1":
        tau = gamma * _broadcast(r.weights, n)[coordinate]
        return [c - tau, c + tau]
    if r.kind == "box":
        return [c + _broadcast(r.lower, n)[coordinate], c + _broadcast(r.upper, n)[coordinate]]
    if r.kind == "nonneg":
        return [c]
    return []


def moreau_gradient(r: ConvexFunctionSpec, gamma: float, x) -> StateVector:
    """Gradient of the Moreau envelope, (x - prox_{gamma r}(x)) / gamma."""
    x = as_state(x)
    return (x - prox(r, gamma, x)) / gamma


def least_norm_subgradient(r: ConvexFunctionSpec, x) -> StateVector:
    """Minimal-norm element of the subdifferential of r at x."""
    x = as_state(x)
    z = x - _shift_of(r, x.size)
    if r.kind == "zero":
        return np.zeros_like(z)
    if r.kind == "weighted_l1":
        return _broadcast(r.weights, z.size) * np.sign(z)
    if r.kind == "squared_l2":
        return r.scale * z
    if r.kind == "box":
        lo, hi = _broadcast(r.lower, z.size), _broadcast(r.upper, z.size)
        if np.any((z < lo) | (z > hi)):
            raise DomainError(f"{x} lies outside the box")
        # projection of 0 onto the normal cone is 0 coordinatewise
        return np.zeros_like(z)
    if r.kind == "nonneg":
        if np.any(z < 0):
            raise DomainError(f"{x} lies outside the nonnegative orthant")
        return np.zeros_like(z)
    return _call_oracle(r.gradient_oracle, z, scalar=False)


def resolvent(A: MonotoneOperatorSpec, gamma: float, x) -> StateVector:
    """(I + gamma A)^{-1} x."""
    if gamma <= 0:
        raise ParameterError(f"resolvent parameter must be positive, got {gamma}")
    x = as_state(x)
    if A.kind == "subdifferential":
        return prox(A.function, gamma, x)
    m = A.matrix
    if m.shape[0] != x.size:
        raise DimensionError(f"operator of size {m.shape[0]} applied to dimension {x.size}")
    b = np.zeros(x.size) if A.offset is None else A.offset
    try:
        return np.linalg.solve(np.eye(x.size) + gamma * m, x - gamma * b)
    except np.linalg.LinAlgError as e:
        raise InternalError(f"singular resolvent system: {e}") from e


def yosida(A: MonotoneOperatorSpec, gamma: float, x) -> StateVector:
    x = as_state(x)
    return (x - resolvent(A, gamma, x)) / gamma


def least_norm_element(A: MonotoneOperatorSpec, x) -> StateVector:
    """Minimal-norm element of A(x)."""
    if A.kind == "subdifferential":
        return least_norm_subgradient(A.function, x)
    return A.apply(x)
