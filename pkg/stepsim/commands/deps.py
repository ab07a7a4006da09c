"""
Builders shared by the subcommands: kernels, problems, initial states,
targets, Lyapunov specs and probe sets from an ExperimentConfig.
"""

import itertools

import numpy as np

from stepsim.core.errors import ConfigError, SpecificationError
from stepsim.core.paths import StateVector, as_state
from stepsim.engine import prox_calculus as pc
from stepsim.engine.diagnostics import StationarityResidual, TargetSet
from stepsim.engine.models import (
    AffineSpp,
    IndefiniteQuadraticProxSgd,
    Kernel,
    ProxSgdKernel,
    ProxSgdProblem,
    QuadraticProxSgd,
    QueueChainSpec,
    QueueKernel,
    ShiftedAbsSpp,
    ShiftedIdentitySpp,
    SppSpec,
    grid_round,
    kernel_prox_sgd,
    kernel_queue,
    kernel_spp,
    known_targets,
)
from stepsim.engine.setvalued import QueueMeanField
from stepsim.engine.stability import LyapunovSpec, QuadraticInGamma, prox_sgd_lyapunov, queue_lyapunov
from stepsim.schemas.experiment import ExperimentConfig, ModelSection


def require_section(config: ExperimentConfig, name: str):
    section = getattr(config, name)
    if section is None:
        raise ConfigError(f"[{name}] section is missing")
    return section


def build_field(model: ModelSection) -> QueueMeanField:
    return QueueMeanField(lambda_=model.lambda_, eta=model.eta)


def build_regularizer(model: ModelSection) -> pc.ConvexFunctionSpec:
    if model.regularizer == "weighted_l1":
        rho = model.rho[0] if len(model.rho) == 1 else model.rho
        return pc.ConvexFunctionSpec.weighted_l1(rho)
    if model.regularizer == "squared_l2":
        return pc.ConvexFunctionSpec.squared_l2(model.scale)
    if model.regularizer == "box":
        return pc.ConvexFunctionSpec.box(model.lower, model.upper)
    if model.regularizer == "nonneg":
        return pc.ConvexFunctionSpec.nonneg()
    return pc.ConvexFunctionSpec.zero()


def build_problem(model: ModelSection) -> ProxSgdProblem:
    r = build_regularizer(model)
    if model.problem == "indefinite":
        return IndefiniteQuadraticProxSgd(
            model.curvature,
            model.perturbation,
            model.linear_term,
            tau=model.tau,
            sigma=model.sigma,
            regularizer=r,
        )
    return QuadraticProxSgd(model.mean, model.sigma, r)


def build_spp(model: ModelSection) -> SppSpec:
    if model.family == "shifted_abs":
        # one support point per row
        return ShiftedAbsSpp(np.asarray(model.support, dtype=float))
    if model.family == "affine":
        return AffineSpp(model.matrix, model.offset, sigma=model.sigma)
    return ShiftedIdentitySpp(model.mean, model.sigma)


def build_kernel(model: ModelSection) -> Kernel:
    if model.kind == "queue":
        spec = QueueChainSpec(field=build_field(model), arrival_law=model.arrival_law)
        return kernel_queue(spec)
    if model.kind == "prox_sgd":
        return kernel_prox_sgd(build_problem(model))
    return kernel_spp(build_spp(model))


def initial_state(model: ModelSection, kernel: Kernel, gamma: float = None) -> StateVector:
    """Configured start point (origin by default), rounded onto the queue grid."""
    if model.initial is None:
        a = np.zeros(kernel.dimension)
    else:
        a = as_state(model.initial, kernel.dimension)
    if isinstance(kernel, QueueKernel) and gamma is not None:
        return grid_round(a, gamma)
    return a


def build_target(config: ExperimentConfig, kernel: Kernel) -> TargetSet:
    section = require_section(config, "longrun")
    if section.target == "point":
        return TargetSet.point(as_state(section.target_point, kernel.dimension))
    if section.target == "residual":
        if not isinstance(kernel, ProxSgdKernel):
            raise ConfigError("target = residual needs a prox_sgd model")
        return TargetSet.from_residual(StationarityResidual(kernel.problem))
    points = known_targets(kernel)
    if points is None:
        raise SpecificationError("the model does not declare its target set; use target = point")
    if points.shape[0] == 1:
        return TargetSet.point(points[0])
    return TargetSet.finite_set(points)


def build_lyapunov(config: ExperimentConfig, kernel: Kernel) -> LyapunovSpec:
    section = require_section(config, "ph_check")
    if isinstance(kernel, QueueKernel):
        spec = queue_lyapunov(kernel.field, kernel.spec.arrival_law)
    elif isinstance(kernel, ProxSgdKernel):
        if section.sppl_beta is None:
            raise ConfigError("[ph_check] sppl_beta is required for prox_sgd models")
        spec = prox_sgd_lyapunov(kernel.problem, section.sppl_beta)
    else:
        raise SpecificationError("no bundled Lyapunov function for spp models")
    if section.beta_scale != 1.0:
        constant = (spec.constant or 0.0) * section.beta_scale
        spec = spec.model_copy(update={"beta": QuadraticInGamma(constant), "constant": constant})
    return spec


def build_probes(config: ExperimentConfig, kernel: Kernel, gamma: float) -> np.ndarray:
    """Explicit probe rows, or the cartesian grid of probe_low..probe_high."""
    section = require_section(config, "ph_check")
    if section.probes is not None:
        probes = np.asarray(section.probes, dtype=float)
    else:
        axes = [
            np.linspace(lo, hi, section.probe_count)
            for lo, hi in zip(section.probe_low, section.probe_high)
        ]
        probes = np.array(list(itertools.product(*axes)), dtype=float)
    if probes.ndim != 2 or probes.shape[0] == 0:
        raise ConfigError("[ph_check] probe list is empty")
    if probes.shape[1] != kernel.dimension:
        raise ConfigError(
            f"[ph_check] probes have dimension {probes.shape[1]}, model has {kernel.dimension}"
        )
    if isinstance(kernel, QueueKernel):
        probes = np.unique(np.vstack([grid_round(p, gamma) for p in probes]), axis=0)
    return probes
