import re
from typing import Annotated, List, Literal, Optional

from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator

_SEPARATORS = re.compile(r"[,\s]+")


def split_numbers(v):
    """'0.1, 0.2 0.3' -> ['0.1', '0.2', '0.3']; lists pass through."""
    if isinstance(v, str):
        return [item for item in _SEPARATORS.split(v.strip()) if item]
    if isinstance(v, (int, float)):
        return [v]
    return v


def split_rows(v):
    """'1 0; 0 1' -> [['1', '0'], ['0', '1']]."""
    if isinstance(v, str):
        return [split_numbers(row) for row in v.split(";") if row.strip()]
    return v


FloatList = Annotated[List[float], BeforeValidator(split_numbers)]
IntList = Annotated[List[int], BeforeValidator(split_numbers)]
Matrix = Annotated[List[List[float]], BeforeValidator(split_rows)]


class Section(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)


def _strictly_decreasing(values: List[float], name: str) -> None:
    if not values:
        raise ValueError(f"{name} must not be empty")
    if any(g <= 0 for g in values):
        raise ValueError(f"{name} must be positive")
    if any(b >= a for a, b in zip(values, values[1:])):
        raise ValueError(f"{name} must be strictly decreasing")


class ModelSection(Section):
    kind: Literal["queue", "prox_sgd", "spp"]
    initial: Optional[FloatList] = None

    # queue
    lambda_: Optional[FloatList] = Field(default=None, alias="lambda")
    eta: Optional[FloatList] = None
    arrival_law: Literal["bernoulli", "poisson"] = "bernoulli"

    # prox_sgd
    problem: Literal["quadratic", "indefinite"] = "quadratic"
    mean: Optional[FloatList] = None
    sigma: float = Field(default=0.0, ge=0.0)
    regularizer: Literal["zero", "weighted_l1", "squared_l2", "box", "nonneg"] = "zero"
    rho: Optional[FloatList] = None
    scale: float = Field(default=1.0, gt=0.0)
    lower: Optional[FloatList] = None
    upper: Optional[FloatList] = None
    curvature: Optional[Matrix] = None
    perturbation: Optional[Matrix] = None
    linear_term: Optional[FloatList] = None
    tau: float = Field(default=0.0, ge=0.0)

    # spp
    family: Literal["shifted_identity", "shifted_abs", "affine"] = "shifted_identity"
    support: Optional[Matrix] = None
    matrix: Optional[Matrix] = None
    offset: Optional[FloatList] = None

    @model_validator(mode="after")
    def check_required(self):
        missing = []
        if self.kind == "queue":
            missing = [k for k in ("lambda_", "eta") if getattr(self, k) is None]
        elif self.kind == "prox_sgd":
            if self.problem == "quadratic" and self.mean is None:
                missing = ["mean"]
            if self.problem == "indefinite":
                missing = [
                    k
                    for k in ("curvature", "perturbation", "linear_term")
                    if getattr(self, k) is None
                ]
            if self.regularizer == "weighted_l1" and self.rho is None:
                missing.append("rho")
            if self.regularizer == "box" and (self.lower is None or self.upper is None):
                missing.append("lower/upper")
        else:
            required = {
                "shifted_identity": ("mean",),
                "shifted_abs": ("support",),
                "affine": ("matrix",),
            }[self.family]
            missing = [k for k in required if getattr(self, k) is None]
        if missing:
            names = ", ".join("lambda" if m == "lambda_" else m for m in missing)
            raise ValueError(f"{self.kind} model requires: {names}")
        return self


class RunSection(Section):
    output_dir: Optional[str] = None
    workers: Optional[int] = Field(default=None, ge=1)


class SimulateSection(Section):
    gamma: float = Field(gt=0.0)
    horizon: int = Field(ge=0)
    seeds: IntList
    thin: int = Field(default=1, ge=1)

    @model_validator(mode="after")
    def check_seeds(self):
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct")
        return self


class DiSolveSection(Section):
    solver: Literal["exact", "forward_backward", "reference"] = "exact"
    T: float = Field(gt=0.0, alias="t")
    step: Optional[float] = Field(default=None, gt=0.0)
    grid_points: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def check_step(self):
        if self.solver != "exact" and self.step is None:
            raise ValueError(f"solver {self.solver} needs a step")
        return self


class ConvergeSection(Section):
    gammas: FloatList
    T: float = Field(gt=0.0, alias="t")
    chains: int = Field(ge=1)
    eps: float = Field(gt=0.0)
    seed: int = 0
    reference_step: Optional[float] = Field(default=None, gt=0.0)
    require_monotone: bool = False
    max_final_exceedance: Optional[float] = Field(default=None, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def check_grid(self):
        _strictly_decreasing(self.gammas, "gammas")
        return self


class LongrunSection(Section):
    gammas: FloatList
    iterations: int = Field(ge=1)
    burnin: Optional[int] = Field(default=None, ge=0)
    seeds: IntList
    eps: float = Field(gt=0.0)
    target: Literal["declared", "residual", "point"] = "declared"
    target_point: Optional[FloatList] = None
    thin: int = Field(default=1, ge=1)
    min_fraction: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    max_ergodic_distance: Optional[float] = Field(default=None, ge=0.0)

    @model_validator(mode="after")
    def check_fields(self):
        _strictly_decreasing(self.gammas, "gammas")
        if not self.seeds:
            raise ValueError("seeds must not be empty")
        if self.burnin is not None and self.burnin >= self.iterations:
            raise ValueError("burnin must be smaller than iterations")
        if self.target == "point" and self.target_point is None:
            raise ValueError("target = point needs target_point")
        return self


class PhCheckSection(Section):
    gammas: FloatList
    samples: int = Field(ge=1000)
    seed: int = 0
    probes: Optional[Matrix] = None
    probe_low: Optional[FloatList] = None
    probe_high: Optional[FloatList] = None
    probe_count: Optional[int] = Field(default=None, ge=0)
    beta_scale: float = Field(default=1.0, ge=0.0)
    sppl_beta: Optional[float] = Field(default=None, gt=0.0)

    @model_validator(mode="after")
    def check_probes(self):
        _strictly_decreasing(self.gammas, "gammas")
        grid = (self.probe_low, self.probe_high, self.probe_count)
        if self.probes is None and any(v is None for v in grid):
            raise ValueError("give either probes or probe_low/probe_high/probe_count")
        if self.probes is not None and not self.probes:
            raise ValueError("probe list is empty")
        if self.probes is None and self.probe_count == 0:
            raise ValueError("probe grid is empty")
        if self.probe_low is not None and self.probe_high is not None:
            if len(self.probe_low) != len(self.probe_high):
                raise ValueError("probe_low and probe_high differ in length")
        return self


class ExperimentConfig(BaseModel):
    """One experiment file: the model plus a section per subcommand."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    model: ModelSection
    run: RunSection = RunSection()
    simulate: Optional[SimulateSection] = None
    di_solve: Optional[DiSolveSection] = None
    converge: Optional[ConvergeSection] = None
    longrun: Optional[LongrunSection] = None
    ph_check: Optional[PhCheckSection] = None
