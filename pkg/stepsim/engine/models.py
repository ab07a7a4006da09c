"""
Markov kernels of the three constant-step models: proximal stochastic
gradient, the prioritized queue chain and the stochastic proximal point
iteration.

A kernel separates noise from dynamics: `draw_noise` consumes the stream and
returns one row per transition, `apply` is the deterministic map
(x, gamma, noise row) -> x_next. Chains draw noise in blocks, so a trajectory
depends only on (kernel, a, gamma, n, seed, stream key).
"""

from abc import ABC, abstractmethod
from typing import List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator
from scipy import integrate, stats

from stepsim.core.errors import DomainError, ParameterError, SpecificationError
from stepsim.core.paths import StateVector, StepSize, Trajectory, as_state, near_integer
from stepsim.core.streams import make_stream
from stepsim.engine import prox_calculus as pc
from stepsim.engine.setvalued import QueueMeanField, first_positive, stability_check

NOISE_BLOCK = 4096
QUADRATURE_TOLERANCE = 1e-10
QUADRATURE_HALF_WIDTH = 12.0


class Kernel(ABC):
    """Transition x -> x + gamma * h_gamma(xi, x) with a drift oracle."""

    name: str = "kernel"

    def __init__(self, dimension: int):
        self.dimension = dimension

    @abstractmethod
    def draw_noise(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """`count` iid noise rows."""

    @abstractmethod
    def apply(self, x: StateVector, gamma: float, noise: np.ndarray) -> StateVector:
        """Deterministic transition for one noise row."""

    def apply_batch(self, x: StateVector, gamma: float, noise: np.ndarray) -> np.ndarray:
        """Next states from a fixed x for each noise row."""
        return np.vstack([self.apply(x, gamma, row) for row in noise])

    def exact_drift(self, x: StateVector, gamma: float) -> Optional[StateVector]:
        """Closed-form g_gamma(x), or None when only Monte Carlo is available."""
        return None

    def check_state(self, x: StateVector, gamma: float) -> StateVector:
        return as_state(x, self.dimension)

    def metadata(self) -> dict:
        return {"model": self.name, "dimension": self.dimension}

    def sample_step(self, x, gamma, rng: np.random.Generator) -> StateVector:
        g = StepSize.coerce(gamma).gamma
        x = self.check_state(x, g)
        return self.apply(x, g, self.draw_noise(rng, 1)[0])

    def increment_field(self, x, gamma: float, noise: np.ndarray) -> StateVector:
        """h_gamma(xi, x) = (x_next - x) / gamma."""
        x = as_state(x, self.dimension)
        return (self.apply(x, gamma, noise) - x) / gamma

    def drift(self, x, gamma, rng: np.random.Generator = None, samples: int = 100_000):
        """Exact drift when known, else the Monte Carlo estimate."""
        g = StepSize.coerce(gamma).gamma
        x = self.check_state(x, g)
        exact = self.exact_drift(x, g)
        if exact is not None:
            return exact
        rng = rng if rng is not None else make_stream(0)
        return _estimate(self, x, g, samples, rng)[0]


def _estimate(kernel: Kernel, x, gamma: float, M: int, rng) -> Tuple[StateVector, StateVector]:
    increments = (kernel.apply_batch(x, gamma, kernel.draw_noise(rng, M)) - x) / gamma
    mean = increments.mean(axis=0)
    if np.all(increments == increments[0]):
        return increments[0].copy(), np.zeros(kernel.dimension)
    stderr = increments.std(axis=0, ddof=1) / np.sqrt(M)
    return mean, stderr


def drift_estimate(
    k: Kernel, x, gamma, M: int, seed: int = 0, key: Tuple[int, ...] = ()
) -> Tuple[StateVector, StateVector]:
    """Sample mean of gamma^{-1}(x_next - x) over M draws, with standard errors."""
    if M < 2:
        raise ParameterError(f"drift estimate needs M >= 2, got {M}")
    g = StepSize.coerce(gamma).gamma
    x = k.check_state(x, g)
    return _estimate(k, x, g, M, make_stream(seed, *key))


def run_chain(
    k: Kernel,
    a,
    gamma,
    n: int,
    seed: int,
    key: Tuple[int, ...] = (),
    thin: int = 1,
) -> Trajectory:
    """n transitions from a; every `thin`-th state is kept (x_0 always)."""
    if n < 0:
        raise ParameterError(f"horizon must be nonnegative, got {n}")
    if thin < 1:
        raise ParameterError("thin must be a positive integer")
    step = StepSize.coerce(gamma)
    g = step.gamma
    x = k.check_state(a, g)
    rng = make_stream(seed, *key)
    kept = [x.copy()]
    done = 0
    while done < n:
        block = min(NOISE_BLOCK, n - done)
        noise = k.draw_noise(rng, block)
        for row in noise:
            x = k.apply(x, g, row)
            done += 1
            if done % thin == 0:
                kept.append(x)
    return Trajectory(gamma=step, states=np.vstack(kept), seed=seed, thin=thin)


# ---------------------------------------------------------------- prox-SGD


class ProxSgdProblem(ABC):
    """minimize E[l(xi, x)] + r(x) with sampled gradients of l."""

    def __init__(self, regularizer: pc.ConvexFunctionSpec, lipschitz: float, dimension: int):
        if lipschitz <= 0:
            raise ParameterError("gradient Lipschitz constant must be positive")
        self.regularizer = regularizer
        self.lipschitz = float(lipschitz)
        self.dimension = dimension

    @abstractmethod
    def draw_noise(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Noise rows xi."""

    @abstractmethod
    def stochastic_gradient(self, noise: np.ndarray, x: StateVector) -> StateVector:
        """grad_x l(xi, x)."""

    @abstractmethod
    def mean_gradient(self, x: StateVector) -> StateVector:
        """grad L(x)."""

    @abstractmethod
    def loss(self, x: StateVector) -> float:
        """L(x)."""

    def stochastic_gradients(self, noise: np.ndarray, x: StateVector) -> np.ndarray:
        return np.vstack([self.stochastic_gradient(row, x) for row in noise])

    def minimum_value(self) -> Optional[float]:
        """min (L + r) when known."""
        return None

    def stationary_points(self) -> Optional[np.ndarray]:
        """Rows of the known zero set {0 in grad L + dr}, or None."""
        return None

    def gradient_variance(self, x: StateVector) -> Optional[float]:
        """Closed-form E|grad l(xi, x) - grad L(x)|^2, or None."""
        return None

    def objective(self, x) -> float:
        x = as_state(x, self.dimension)
        return self.loss(x) + pc.evaluate(self.regularizer, x)

    def exact_drift(self, x: StateVector, gamma: float) -> Optional[StateVector]:
        return None


class QuadraticProxSgd(ProxSgdProblem):
    """l(s, x) = |x - s|^2 / 2 with s ~ Normal(m, sigma^2 I), r separable.

    The mean loss is strongly convex, so the stationary set is the single point
    prox_r(m).
    """

    def __init__(self, mean, sigma: float, regularizer: pc.ConvexFunctionSpec):
        mean = as_state(mean)
        if sigma < 0:
            raise ParameterError("noise level must be nonnegative")
        super().__init__(regularizer, lipschitz=1.0, dimension=mean.size)
        self.mean = mean
        self.sigma = float(sigma)

    def draw_noise(self, rng, count):
        if self.sigma == 0.0:
            return np.tile(self.mean, (count, 1))
        return self.mean + self.sigma * rng.standard_normal((count, self.dimension))

    def stochastic_gradient(self, noise, x):
        return x - noise

    def stochastic_gradients(self, noise, x):
        return x[None, :] - noise

    def mean_gradient(self, x):
        return as_state(x) - self.mean

    def loss(self, x):
        d = as_state(x) - self.mean
        return 0.5 * float(d @ d) + 0.5 * self.dimension * self.sigma**2

    def minimizer(self) -> StateVector:
        return pc.prox(self.regularizer, 1.0, self.mean)

    def minimum_value(self):
        return self.objective(self.minimizer())

    def stationary_points(self):
        return self.minimizer()[None, :]

    def gradient_variance(self, x):
        return self.dimension * self.sigma**2

    def exact_drift(self, x, gamma):
        # x_next coordinatewise = prox_i(Y_i), Y ~ Normal((1-gamma)x + gamma m, (gamma sigma)^2)
        if not self.regularizer.separable:
            return None
        centre = (1.0 - gamma) * x + gamma * self.mean
        if self.sigma == 0.0:
            return (pc.prox(self.regularizer, gamma, centre) - x) / gamma
        spread = gamma * self.sigma
        out = np.empty(self.dimension)
        for i in range(self.dimension):
            scalar = pc.prox_scalar(self.regularizer, gamma, i, self.dimension)
            lo = centre[i] - QUADRATURE_HALF_WIDTH * spread
            hi = centre[i] + QUADRATURE_HALF_WIDTH * spread
            points = [p for p in pc.kinks(self.regularizer, gamma, i, self.dimension) if lo < p < hi]
            value, _ = integrate.quad(
                lambda t: scalar(t) * stats.norm.pdf(t, loc=centre[i], scale=spread),
                lo,
                hi,
                points=points or None,
                epsabs=QUADRATURE_TOLERANCE,
                epsrel=QUADRATURE_TOLERANCE,
                limit=200,
            )
            out[i] = (value - x[i]) / gamma
        return out


class IndefiniteQuadraticProxSgd(ProxSgdProblem):
    """l(xi, x) = x^T (Q + z S) x / 2 - (b + w)^T x with z ~ Normal(0, tau^2),
    w ~ Normal(0, sigma^2 I), S symmetric indefinite and Q positive definite.

    Individual losses are non-convex; the mean loss is strongly convex.
    """

    def __init__(self, Q, S, b, tau: float, sigma: float, regularizer: pc.ConvexFunctionSpec):
        Q = np.asarray(Q, dtype=float)
        S = np.asarray(S, dtype=float)
        if not np.allclose(Q, Q.T) or not np.allclose(S, S.T):
            raise ParameterError("Q and S must be symmetric")
        eigs = np.linalg.eigvalsh(Q)
        if eigs.min() <= 0:
            raise ParameterError("the mean curvature Q must be positive definite")
        super().__init__(regularizer, lipschitz=float(eigs.max()), dimension=Q.shape[0])
        self.Q, self.S = Q, S
        self.b = as_state(b, self.dimension)
        self.tau, self.sigma = float(tau), float(sigma)
        self._stationary = None

    def draw_noise(self, rng, count):
        z = self.tau * rng.standard_normal((count, 1))
        w = self.sigma * rng.standard_normal((count, self.dimension))
        return np.hstack([z, w])

    def stochastic_gradient(self, noise, x):
        return (self.Q + noise[0] * self.S) @ x - (self.b + noise[1:])

    def mean_gradient(self, x):
        return self.Q @ as_state(x) - self.b

    def loss(self, x):
        x = as_state(x)
        return 0.5 * float(x @ self.Q @ x) - float(self.b @ x)

    def gradient_variance(self, x):
        x = as_state(x)
        sx = self.S @ x
        return self.tau**2 * float(sx @ sx) + self.dimension * self.sigma**2

    def stationary_points(self):
        if self._stationary is None:
            step = 1.0 / self.lipschitz
            y = np.zeros(self.dimension)
            for _ in range(100_000):
                nxt = pc.prox(self.regularizer, step, y - step * self.mean_gradient(y))
                if np.linalg.norm(nxt - y) <= 1e-14 * max(1.0, np.linalg.norm(y)):
                    y = nxt
                    break
                y = nxt
            self._stationary = y[None, :]
        return self._stationary

    def minimum_value(self):
        return self.objective(self.stationary_points()[0])


class ProxSgdKernel(Kernel):
    name = "prox_sgd"

    def __init__(self, problem: ProxSgdProblem):
        super().__init__(problem.dimension)
        self.problem = problem

    def draw_noise(self, rng, count):
        return self.problem.draw_noise(rng, count)

    def apply(self, x, gamma, noise):
        grad = self.problem.stochastic_gradient(noise, x)
        return pc.prox(self.problem.regularizer, gamma, x - gamma * grad)

    def apply_batch(self, x, gamma, noise):
        grads = self.problem.stochastic_gradients(noise, x)
        return pc.prox_batch(self.problem.regularizer, gamma, x[None, :] - gamma * grads)

    def exact_drift(self, x, gamma):
        return self.problem.exact_drift(x, gamma)

    def metadata(self):
        return {**super().metadata(), "problem": type(self.problem).__name__}


def kernel_prox_sgd(p: ProxSgdProblem) -> Kernel:
    return ProxSgdKernel(p)


# ---------------------------------------------------------------- queues


class QueueChainSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    field: QueueMeanField
    arrival_law: Literal["bernoulli", "poisson"] = "bernoulli"

    @model_validator(mode="after")
    def check_law(self):
        if self.arrival_law == "bernoulli" and any(l > 1.0 for l in self.field.lambda_):
            raise ParameterError("Bernoulli arrivals need lambda_k <= 1")
        return self

    def arrival_variances(self) -> np.ndarray:
        lam = self.field.rates
        if self.arrival_law == "bernoulli":
            return lam * (1.0 - lam)
        return lam.copy()


def grid_counts(x: StateVector, gamma: float) -> np.ndarray:
    """Integer queue lengths y with x = gamma * y; raises off the grid."""
    if np.any(x < 0):
        raise DomainError(f"queue state must be nonnegative, got {x}")
    scaled = x / gamma
    counts = np.rint(scaled)
    if not np.all(near_integer(scaled, counts)):
        raise DomainError(f"queue state {x} is not on the grid gamma*N^N (gamma={gamma})")
    return counts


def grid_round(x, gamma: float) -> StateVector:
    """Nearest grid point of gamma*N^N, cells gamma*(i - 1/2, i + 1/2]."""
    x = as_state(x)
    counts = np.maximum(np.ceil(x / gamma - 0.5), 0.0)
    return gamma * counts


def discretize_initial(samples: np.ndarray, gamma: float) -> np.ndarray:
    """Push draws of an initial law on R_+^N to gamma*N^N cell by cell."""
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    return gamma * np.maximum(np.ceil(samples / gamma - 0.5), 0.0)


class QueueKernel(Kernel):
    name = "queue"

    def __init__(self, spec: QueueChainSpec):
        super().__init__(spec.field.dimension)
        self.spec = spec
        self.field = spec.field

    def check_state(self, x, gamma):
        x = as_state(x, self.dimension)
        return gamma * grid_counts(x, gamma)

    def draw_noise(self, rng, count):
        lam = self.field.rates
        if self.spec.arrival_law == "bernoulli":
            arrivals = (rng.random((count, self.dimension)) < lam).astype(float)
        else:
            arrivals = rng.poisson(lam, size=(count, self.dimension)).astype(float)
        services = (rng.random((count, self.dimension)) < self.field.service).astype(float)
        return np.hstack([arrivals, services])

    def apply(self, x, gamma, noise):
        counts = np.rint(x / gamma)
        n = self.dimension
        counts = counts + noise[:n]
        k = first_positive(x)
        if k >= 0:
            counts[k] -= noise[n + k]
        return gamma * counts

    def apply_batch(self, x, gamma, noise):
        n = self.dimension
        counts = np.rint(x / gamma)[None, :] + noise[:, :n]
        k = first_positive(x)
        if k >= 0:
            counts[:, k] -= noise[:, n + k]
        return gamma * counts

    def exact_drift(self, x, gamma):
        drift = self.field.rates.copy()
        k = first_positive(x)
        if k >= 0:
            drift[k] -= self.field.eta[k]
        return drift

    def metadata(self):
        return {
            **super().metadata(),
            "lambda": list(self.field.lambda_),
            "eta": list(self.field.eta),
            "arrival_law": self.spec.arrival_law,
        }


def kernel_queue(q: QueueChainSpec) -> Kernel:
    return QueueKernel(q)


# ---------------------------------------------------------------- proximal point


class SppSpec(ABC):
    """A law over monotone operators A(xi, .) with mean operator A."""

    dimension: int

    @abstractmethod
    def draw_noise(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Noise rows xi."""

    @abstractmethod
    def operator(self, noise: np.ndarray) -> pc.MonotoneOperatorSpec:
        """A(xi, .)."""

    def zeros(self) -> Optional[np.ndarray]:
        """Rows of zer(A) when known."""
        return None

    def exact_drift(self, x: StateVector, gamma: float) -> Optional[StateVector]:
        return None


class ShiftedIdentitySpp(SppSpec):
    """A(s, x) = x - s, s ~ Normal(m, sigma^2 I); zer(A) = {m}."""

    def __init__(self, mean, sigma: float):
        self.mean = as_state(mean)
        self.sigma = float(sigma)
        self.dimension = self.mean.size

    def draw_noise(self, rng, count):
        if self.sigma == 0.0:
            return np.tile(self.mean, (count, 1))
        return self.mean + self.sigma * rng.standard_normal((count, self.dimension))

    def operator(self, noise):
        return pc.MonotoneOperatorSpec.affine(np.eye(self.dimension), -noise)

    def resolve(self, x, gamma, noise):
        return (x + gamma * noise) / (1.0 + gamma)

    def zeros(self):
        return self.mean[None, :]

    def exact_drift(self, x, gamma):
        return (self.mean - x) / (1.0 + gamma)


class ShiftedAbsSpp(SppSpec):
    """A(s, .) = subdifferential of sum_i |x_i - s_i|, s uniform over `support` rows."""

    def __init__(self, support):
        support = np.asarray(support, dtype=float)
        if support.ndim == 1:
            # scalar support values
            support = support.reshape(-1, 1)
        if support.ndim != 2 or support.shape[0] == 0:
            raise ParameterError("support must be a non-empty list of points")
        self.support = support
        self.dimension = support.shape[1]

    def draw_noise(self, rng, count):
        return self.support[rng.integers(0, self.support.shape[0], size=count)]

    def operator(self, noise):
        return pc.MonotoneOperatorSpec.subdifferential(
            pc.ConvexFunctionSpec.weighted_l1(1.0, shift=noise)
        )

    def zeros(self):
        # coordinatewise medians of the support law
        lo = np.quantile(self.support, 0.5, axis=0, method="lower")
        hi = np.quantile(self.support, 0.5, axis=0, method="higher")
        if np.allclose(lo, hi):
            return lo[None, :]
        return None

    def exact_drift(self, x, gamma):
        steps = [pc.resolvent(self.operator(s), gamma, x) for s in self.support]
        return (np.mean(steps, axis=0) - x) / gamma


class AffineSpp(SppSpec):
    """A(w, x) = Mx + b + w with w ~ Normal(0, sigma^2 I) and M monotone."""

    def __init__(self, matrix, offset=None, sigma: float = 0.0):
        self.base = pc.MonotoneOperatorSpec.affine(matrix, offset)
        self.dimension = self.base.matrix.shape[0]
        self.offset = np.zeros(self.dimension) if offset is None else as_state(offset)
        self.sigma = float(sigma)

    def draw_noise(self, rng, count):
        if self.sigma == 0.0:
            return np.zeros((count, self.dimension))
        return self.sigma * rng.standard_normal((count, self.dimension))

    def operator(self, noise):
        return pc.MonotoneOperatorSpec.affine(self.base.matrix, self.offset + noise)

    def zeros(self):
        m = self.base.matrix
        if abs(np.linalg.det(m)) < 1e-12:
            return None
        return np.linalg.solve(m, -self.offset)[None, :]

    def exact_drift(self, x, gamma):
        mean_step = pc.resolvent(self.base, gamma, x)
        return (mean_step - x) / gamma


class SppKernel(Kernel):
    name = "spp"

    def __init__(self, spec: SppSpec):
        super().__init__(spec.dimension)
        self.spec = spec

    def draw_noise(self, rng, count):
        return self.spec.draw_noise(rng, count)

    def apply(self, x, gamma, noise):
        resolve = getattr(self.spec, "resolve", None)
        if resolve is not None:
            return resolve(x, gamma, noise)
        return pc.resolvent(self.spec.operator(noise), gamma, x)

    def exact_drift(self, x, gamma):
        return self.spec.exact_drift(x, gamma)

    def metadata(self):
        return {**super().metadata(), "family": type(self.spec).__name__}


def kernel_spp(s: SppSpec) -> Kernel:
    return SppKernel(s)


def known_targets(k: Kernel) -> Optional[np.ndarray]:
    """Declared long-run target set rows of a bundled kernel.

    A queue with load >= 1 is not positive recurrent and declares none.
    """
    if isinstance(k, QueueKernel):
        if not stability_check(k.field).stable:
            return None
        return np.zeros((1, k.dimension))
    if isinstance(k, ProxSgdKernel):
        return k.problem.stationary_points()
    if isinstance(k, SppKernel):
        return k.spec.zeros()
    raise SpecificationError(f"no declared target set for kernel {k.name}")


def probe_points(lows: List[float], highs: List[float], count: int, seed: int) -> np.ndarray:
    """Uniform random probes in a box, reproducible from the seed."""
    rng = make_stream(seed, 0)
    return rng.uniform(lows, highs, size=(count, len(lows)))
