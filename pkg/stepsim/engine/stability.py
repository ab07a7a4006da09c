"""
Lyapunov drift checks P_gamma V <= V - alpha(gamma) psi + beta(gamma).

V, psi, alpha and beta are module-level callable classes so specs can be
shipped to worker processes.
"""

from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict

from stepsim.core.errors import ParameterError, SpecificationError
from stepsim.core.paths import StateVector, StepSize, as_state
from stepsim.core.streams import make_stream
from stepsim.core.workers import map_bounded
from stepsim.engine import prox_calculus as pc
from stepsim.engine.models import Kernel, ProxSgdProblem, QueueChainSpec
from stepsim.engine.setvalued import QueueMeanField, first_positive, stability_check

MIN_PH_SAMPLES = 1000
FLAG_SIGMAS = 3.0
FLAG_TOLERANCE = 1e-12
W_SAMPLES = 10_000


# ---------------------------------------------------------------- building blocks


class WeightedSumSquared:
    """x -> (sum_k w_k x_k)^2."""

    def __init__(self, weights):
        self.weights = np.asarray(weights, dtype=float)

    def __call__(self, x) -> float:
        return float(self.weights @ np.asarray(x, dtype=float)) ** 2

    def batch(self, xs: np.ndarray) -> np.ndarray:
        return (np.asarray(xs, dtype=float) @ self.weights) ** 2


class WeightedSumLinear:
    """x -> c * sum_k w_k x_k."""

    def __init__(self, weights, factor: float):
        self.weights = np.asarray(weights, dtype=float)
        self.factor = float(factor)

    def __call__(self, x) -> float:
        return self.factor * float(self.weights @ np.asarray(x, dtype=float))


class LinearInGamma:
    def __init__(self, factor: float = 1.0):
        self.factor = float(factor)

    def __call__(self, gamma: float) -> float:
        return self.factor * gamma


class QuadraticInGamma:
    def __init__(self, factor: float):
        self.factor = float(factor)

    def __call__(self, gamma: float) -> float:
        return self.factor * gamma * gamma


class OptimalityGap:
    """x -> (L + r)(x) - min(L + r)."""

    def __init__(self, problem: ProxSgdProblem, minimum: float):
        self.problem = problem
        self.minimum = float(minimum)

    def __call__(self, x) -> float:
        return self.problem.objective(x) - self.minimum

    def batch(self, xs: np.ndarray) -> np.ndarray:
        return np.array([self(x) for x in xs])


class ProxSgdPsi:
    """x -> beta V(x) - W(x) - |grad L(x)|^2 / 4."""

    def __init__(self, problem: ProxSgdProblem, gap: OptimalityGap, sppl_beta: float):
        self.problem = problem
        self.gap = gap
        self.sppl_beta = float(sppl_beta)

    def __call__(self, x) -> float:
        x = as_state(x, self.problem.dimension)
        w, _ = variance_W(self.problem, x, W_SAMPLES)
        grad = self.problem.mean_gradient(x)
        return self.sppl_beta * self.gap(x) - w - 0.25 * float(grad @ grad)


class LyapunovSpec(BaseModel):
    """V, psi, alpha(gamma), beta(gamma) of a drift inequality."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    V: Callable
    psi: Callable
    alpha: Callable
    beta: Callable
    coercive_psi: bool = True
    constant: Optional[float] = None

    def ratio_bound(self, gammas: Sequence[float]) -> float:
        """max beta/alpha over a step grid; must be finite."""
        ratios = []
        for g in gammas:
            a = self.alpha(g)
            if not a > 0:
                raise SpecificationError(f"alpha({g}) = {a} is not positive")
            ratios.append(self.beta(g) / a)
        bound = max(ratios) if ratios else 0.0
        if not np.isfinite(bound):
            raise SpecificationError("beta/alpha is unbounded on the step grid")
        return float(bound)

    def V_many(self, xs: np.ndarray) -> np.ndarray:
        batch = getattr(self.V, "batch", None)
        if batch is not None:
            return np.asarray(batch(xs), dtype=float)
        return np.array([self.V(x) for x in xs], dtype=float)


# ---------------------------------------------------------------- queue


def _queue_moments(field: QueueMeanField, arrival_law: str):
    """Second moments of the normalized increment D = sum A_j/eta_j - B_k/eta_k.

    Returns (E[D^2] at the origin, E[D^2] on each face k).
    """
    eta = field.service
    load = stability_check(field).load
    variances = QueueChainSpec(field=field, arrival_law=arrival_law).arrival_variances()
    arrival_part = float(np.sum(variances / eta**2))
    at_origin = arrival_part + load**2
    on_faces = arrival_part + (1.0 - eta) / eta + (1.0 - load) ** 2
    return at_origin, on_faces


def queue_constant(field: QueueMeanField, arrival_law: str = "bernoulli") -> float:
    """C with P_gamma V(x) - V(x) + gamma psi(x) <= C gamma^2 on every face.

    Bounds E[D^2] by the arrival variance term plus rho^2, (1 - rho)^2 and the
    largest service variance, which exceeds every face strictly.
    """
    eta = field.service
    load = stability_check(field).load
    variances = QueueChainSpec(field=field, arrival_law=arrival_law).arrival_variances()
    return float(
        np.sum(variances / eta**2)
        + load**2
        + (1.0 - load) ** 2
        + np.max((1.0 - eta) / eta)
    )


def queue_lyapunov(field: QueueMeanField, arrival_law: str = "bernoulli") -> LyapunovSpec:
    """V = (sum x_k/eta_k)^2, psi = 2(1 - rho) sum x_k/eta_k, alpha = gamma, beta = C gamma^2."""
    report = stability_check(field)
    if not report.stable:
        raise ParameterError(
            f"queue field is unstable (load {report.load:.6g} >= 1): psi is not coercive"
        )
    weights = 1.0 / field.service
    constant = queue_constant(field, arrival_law)
    return LyapunovSpec(
        V=WeightedSumSquared(weights),
        psi=WeightedSumLinear(weights, 2.0 * (1.0 - report.load)),
        alpha=LinearInGamma(),
        beta=QuadraticInGamma(constant),
        coercive_psi=True,
        constant=constant,
    )


def queue_expected_lyapunov(
    field: QueueMeanField, x, gamma: float, arrival_law: str = "bernoulli"
) -> float:
    """Closed-form E[V(x_next) | x] for V = (sum x_k/eta_k)^2."""
    x = as_state(x, field.dimension)
    s = float(x @ (1.0 / field.service))
    load = stability_check(field).load
    at_origin, on_faces = _queue_moments(field, arrival_law)
    k = first_positive(x)
    if k < 0:
        return gamma * gamma * at_origin
    return s * s + 2.0 * gamma * s * (load - 1.0) + gamma * gamma * on_faces[k]


# ---------------------------------------------------------------- prox-SGD


def variance_W(
    p: ProxSgdProblem, x, M: int, seed: int = 0, closed_form: bool = True
) -> Tuple[float, float]:
    """E|grad l(xi, x) - grad L(x)|^2 with a standard error (0 when exact)."""
    x = as_state(x, p.dimension)
    if closed_form:
        exact = p.gradient_variance(x)
        if exact is not None:
            return float(exact), 0.0
    if M < 2:
        raise ParameterError(f"variance estimate needs M >= 2, got {M}")
    rng = make_stream(seed, 1)
    grads = p.stochastic_gradients(p.draw_noise(rng, M), x)
    dev = grads - p.mean_gradient(x)
    sq = np.einsum("ij,ij->i", dev, dev)
    if np.all(sq == sq[0]):
        return float(sq[0]), 0.0
    return float(sq.mean()), float(sq.std(ddof=1) / np.sqrt(M))


def prox_sgd_lyapunov(
    p: ProxSgdProblem, sppl_beta: float, coercive_psi: bool = True
) -> LyapunovSpec:
    """V = L + r - min(L + r), psi = beta V - W - |grad L|^2/4, alpha = gamma, beta = 0."""
    if sppl_beta <= 0:
        raise ParameterError("the SPPL constant must be positive")
    minimum = p.minimum_value()
    if minimum is None:
        raise SpecificationError(f"{type(p).__name__} does not declare min(L + r)")
    gap = OptimalityGap(p, minimum)
    return LyapunovSpec(
        V=gap,
        psi=ProxSgdPsi(p, gap, sppl_beta),
        alpha=LinearInGamma(),
        beta=QuadraticInGamma(0.0),
        coercive_psi=coercive_psi,
    )


def ppl_functional(p: ProxSgdProblem, grad, x, Cc: float) -> float:
    """-2C min_y [<grad, y - x> + C/2 |y - x|^2 + r(y) - r(x)], minimized by a prox step.

    Nonnegative for a convex r whose prox and value agree; a negative value is
    returned unchanged so an inconsistent regularizer shows up in checks.
    """
    if Cc <= 0:
        raise ParameterError(f"PPL constant must be positive, got {Cc}")
    x = as_state(x, p.dimension)
    grad = as_state(grad, p.dimension)
    y = pc.prox(p.regularizer, 1.0 / Cc, x - grad / Cc)
    d = y - x
    bracket = (
        float(grad @ d)
        + 0.5 * Cc * float(d @ d)
        + pc.evaluate(p.regularizer, y)
        - pc.evaluate(p.regularizer, x)
    )
    return -2.0 * Cc * bracket


class SpplRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    probe_id: int
    x: List[float]
    lhs: float
    stderr: float
    rhs: float
    flag: bool


def sppl_check(
    p: ProxSgdProblem,
    probes: Sequence,
    sppl_beta: float,
    Cc: float,
    M: int,
    seed: int = 0,
) -> List[SpplRecord]:
    """Monte Carlo check of E[D_{l(xi,.),r}(x, C)] / 2 >= beta ((L + r)(x) - min)."""
    if M < 2:
        raise ParameterError(f"SPPL check needs M >= 2, got {M}")
    minimum = p.minimum_value()
    if minimum is None:
        raise SpecificationError(f"{type(p).__name__} does not declare min(L + r)")
    records = []
    for i, probe in enumerate(probes):
        x = as_state(probe, p.dimension)
        rng = make_stream(seed, 2, i)
        grads = p.stochastic_gradients(p.draw_noise(rng, M), x)
        values = 0.5 * np.array([ppl_functional(p, g, x, Cc) for g in grads])
        lhs = float(values.mean())
        se = 0.0 if np.all(values == values[0]) else float(values.std(ddof=1) / np.sqrt(M))
        rhs = sppl_beta * (p.objective(x) - minimum)
        slack = FLAG_TOLERANCE * max(1.0, abs(rhs))
        records.append(
            SpplRecord(
                probe_id=i,
                x=x.tolist(),
                lhs=lhs,
                stderr=se,
                rhs=rhs,
                flag=lhs + FLAG_SIGMAS * se < rhs - slack,
            )
        )
    return records


# ---------------------------------------------------------------- Monte Carlo check


class PhRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    probe_id: int
    gamma: float
    x: List[float]
    gap: float
    stderr: float
    psi: float
    flag: bool


class PhReport(BaseModel):
    """One record per (probe, gamma)."""

    model_config = ConfigDict(frozen=True)

    records: List[PhRecord]

    @property
    def flagged(self) -> List[PhRecord]:
        return [r for r in self.records if r.flag]

    @property
    def negative_psi(self) -> List[PhRecord]:
        return [r for r in self.records if r.psi < 0]

    def merge(self, other: "PhReport") -> "PhReport":
        return PhReport(records=self.records + other.records)


def _expected_lyapunov(
    k: Kernel, spec: LyapunovSpec, x: StateVector, gamma: float, M: int, rng
) -> Tuple[float, float]:
    """Sample mean of V(x_next) with the exact drift as a linear control variate."""
    nxt = k.apply_batch(x, gamma, k.draw_noise(rng, M))
    values = spec.V_many(nxt)
    drift = k.exact_drift(x, gamma)
    if drift is not None:
        control = nxt - x - gamma * drift
        centred = control - control.mean(axis=0)
        if np.any(centred != 0.0):
            coef = np.linalg.lstsq(centred, values - values.mean(), rcond=None)[0]
            values = values - control @ coef
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    return float(values.mean()), float(values.std(ddof=1) / np.sqrt(M))


def _probe_task(task) -> PhRecord:
    k, spec, probe_id, x, gamma, M, seed, key = task
    rng = make_stream(seed, *key, probe_id)
    expected, se = _expected_lyapunov(k, spec, x, gamma, M, rng)
    psi = float(spec.psi(x))
    gap = expected - float(spec.V(x)) + spec.alpha(gamma) * psi - spec.beta(gamma)
    return PhRecord(
        probe_id=probe_id,
        gamma=gamma,
        x=x.tolist(),
        gap=gap,
        stderr=se,
        psi=psi,
        flag=gap > FLAG_SIGMAS * se + FLAG_TOLERANCE,
    )


def ph_check_monte_carlo(
    k: Kernel,
    spec: LyapunovSpec,
    probes: Sequence,
    gamma,
    M: int,
    seed: int = 0,
    key: Tuple[int, ...] = (),
    workers: int = 1,
) -> PhReport:
    """Estimate the drift gap P_gamma V(x) - V(x) + alpha psi(x) - beta at each probe.

    A probe is flagged when the gap exceeds three standard errors. Probes run
    on independent streams keyed by (key, probe index).
    """
    if M < MIN_PH_SAMPLES:
        raise ParameterError(f"PH check needs M >= {MIN_PH_SAMPLES}, got {M}")
    g = StepSize.coerce(gamma).gamma
    tasks = [
        (k, spec, i, k.check_state(probe, g), g, M, seed, tuple(key))
        for i, probe in enumerate(probes)
    ]
    return PhReport(records=map_bounded(_probe_task, tasks, workers))
