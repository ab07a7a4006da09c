from pathlib import Path

from stepsim.commands.deps import build_kernel, initial_state, require_section
from stepsim.core.errors import EXIT_OK, CheckFailed, ConfigError
from stepsim.core.logging import log_check_failure, log_unit_completed
from stepsim.engine.di_solver import solve_forward_backward, solve_queue_exact
from stepsim.engine.diagnostics import narrow_convergence_sweep
from stepsim.engine.models import ProxSgdKernel, QueueKernel
from stepsim.schemas.experiment import ExperimentConfig
from stepsim.storage.artifacts import ensure_output_dir, write_summary, write_sweep

COMMAND = "converge"
DEFAULT_REFERENCE_STEP = 1e-4


def reference_solution(kernel, a, T: float, step: float = None):
    """Exact DI path for queues, fine forward-backward for prox-SGD."""
    if isinstance(kernel, QueueKernel):
        return solve_queue_exact(kernel.field, a, T)
    if isinstance(kernel, ProxSgdKernel):
        problem = kernel.problem
        step = step or min(DEFAULT_REFERENCE_STEP, 1.0 / problem.lipschitz)
        return solve_forward_backward(problem, a, T, step)
    raise ConfigError("[converge] needs a queue or prox_sgd model")


def run(config: ExperimentConfig, out_dir: Path, workers: int = 1, run_id: str = None) -> int:
    section = require_section(config, COMMAND)
    kernel = build_kernel(config.model)
    a = initial_state(config.model, kernel)
    exact = reference_solution(kernel, a, section.T, section.reference_step)

    sweep = narrow_convergence_sweep(
        kernel,
        exact,
        a,
        section.gammas,
        section.T,
        section.chains,
        section.eps,
        seed=section.seed,
        workers=workers,
    )
    out = ensure_output_dir(out_dir)
    write_sweep(out, sweep)

    summary = sweep.summary()
    for row in summary:
        log_unit_completed(
            COMMAND,
            f"gamma={row.gamma!r}",
            run_id=run_id,
            seed=section.seed,
            gamma=row.gamma,
            details=f"exceedance={row.exceedance:.6g} median={row.median:.6g}",
        )

    failures = []
    if section.require_monotone:
        for prev, cur in zip(summary, summary[1:]):
            if cur.exceedance > prev.exceedance:
                failures.append(
                    f"exceedance rose from {prev.exceedance:.6g} at gamma={prev.gamma!r} "
                    f"to {cur.exceedance:.6g} at gamma={cur.gamma!r}"
                )
    if section.max_final_exceedance is not None:
        final = summary[-1]
        if final.exceedance > section.max_final_exceedance:
            failures.append(
                f"exceedance {final.exceedance:.6g} at gamma={final.gamma!r} "
                f"above {section.max_final_exceedance!r}"
            )

    metrics = {"summary": [row.model_dump() for row in summary], "failures": failures}
    write_summary(out, COMMAND, "check_failed" if failures else "ok", metrics)
    for reason in failures:
        log_check_failure(COMMAND, "sweep", reason, run_id=run_id)
    if failures:
        raise CheckFailed("; ".join(failures))
    return EXIT_OK
