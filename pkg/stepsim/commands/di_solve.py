from pathlib import Path

import numpy as np

from stepsim.commands.deps import build_kernel, initial_state, require_section
from stepsim.core.errors import EXIT_OK, ConfigError
from stepsim.core.logging import log_unit_completed
from stepsim.engine.di_solver import (
    DenseSolution,
    PiecewisePath,
    path_sup_distance,
    queue_evaluator,
    sample_path,
    solve_filippov_reference,
    solve_forward_backward,
    solve_queue_exact,
)
from stepsim.engine.models import ProxSgdKernel, QueueKernel
from stepsim.schemas.experiment import ExperimentConfig
from stepsim.storage.artifacts import (
    ensure_output_dir,
    write_di_solution,
    write_di_summary,
    write_summary,
)

COMMAND = "di_solve"


def _dense_rows(solution: DenseSolution, grid_points: int):
    if grid_points >= 2:
        ts = np.linspace(0.0, solution.horizon, grid_points)
        states = solution.evaluate_many(ts)
    else:
        ts = solution.breakpoints()
        states = solution.samples
    ids = np.minimum(np.floor(ts / solution.step + 1e-9), solution.samples.shape[0] - 1)
    return ts, states, ids.astype(int)


def _deviation(solution: DenseSolution, exact: PiecewisePath, ts, states):
    reference = exact.evaluate_many(np.minimum(ts, exact.horizon))
    return np.linalg.norm(states - reference, axis=1)


def run(config: ExperimentConfig, out_dir: Path, workers: int = 1, run_id: str = None) -> int:
    """Solve the limiting DI from the configured start and write di_solution.csv."""
    section = require_section(config, COMMAND)
    kernel = build_kernel(config.model)
    a = initial_state(config.model, kernel)
    metrics = {"solver": section.solver, "T": section.T}
    out = ensure_output_dir(out_dir)

    if section.solver == "forward_backward":
        if not isinstance(kernel, ProxSgdKernel):
            raise ConfigError("[di_solve] forward_backward needs a prox_sgd model")
        solution = solve_forward_backward(kernel.problem, a, section.T, section.step)
        ts, states, ids = _dense_rows(solution, section.grid_points)
        write_di_solution(out, ts, states, ids)
        metrics["final_state"] = solution.samples[-1].tolist()
    else:
        if not isinstance(kernel, QueueKernel):
            raise ConfigError(f"[di_solve] solver {section.solver} needs a queue model")
        exact = solve_queue_exact(kernel.field, a, section.T)
        if section.solver == "exact":
            ts, states, ids = sample_path(exact, section.grid_points)
            write_di_solution(out, ts, states, ids)
            metrics["breakpoints"] = exact.breakpoints.tolist()
        else:
            solution = solve_filippov_reference(
                queue_evaluator(kernel.field), a, section.T, section.step
            )
            ts, states, ids = _dense_rows(solution, section.grid_points)
            write_di_solution(
                out, ts, states, ids, deviation=_deviation(solution, exact, ts, states)
            )
            sup = path_sup_distance(solution, exact, section.T)
            write_di_summary(out, section.solver, section.step, sup)
            metrics["sup_deviation"] = sup

    log_unit_completed(COMMAND, "di_solution.csv", run_id=run_id, details=section.solver)
    write_summary(out, COMMAND, "ok", metrics)
    return EXIT_OK
