from pathlib import Path

from stepsim.commands.deps import build_kernel, build_target, initial_state, require_section
from stepsim.core.errors import EXIT_OK, CheckFailed
from stepsim.core.logging import log_check_failure, log_unit_completed
from stepsim.core.workers import map_bounded
from stepsim.engine.diagnostics import ergodic_distance, longrun_fraction
from stepsim.engine.models import run_chain
from stepsim.schemas.experiment import ExperimentConfig
from stepsim.storage.artifacts import ensure_output_dir, write_longrun, write_summary

COMMAND = "longrun"


def _chain_task(task):
    kernel, a, gamma, n, seed, key, thin = task
    return run_chain(kernel, a, gamma, n, seed, key=key, thin=thin)


def run(config: ExperimentConfig, out_dir: Path, workers: int = 1, run_id: str = None) -> int:
    """Fraction of iterates near the target and ergodic distance, per step size."""
    section = require_section(config, COMMAND)
    kernel = build_kernel(config.model)
    target = build_target(config, kernel)
    # burn-in is given in iterations, trajectories store every thin-th one
    burnin = None if section.burnin is None else section.burnin // section.thin

    rows, failures = [], []
    for j, gamma in enumerate(section.gammas):
        a = initial_state(config.model, kernel, gamma)
        tasks = [
            (kernel, a, gamma, section.iterations, seed, (j,), section.thin)
            for seed in section.seeds
        ]
        trajectories = map_bounded(_chain_task, tasks, workers)
        fraction = longrun_fraction(trajectories, target, section.eps, burnin)
        distance = ergodic_distance(trajectories, target, burnin)
        rows.append([gamma, fraction, distance])
        log_unit_completed(
            COMMAND,
            f"gamma={gamma!r}",
            run_id=run_id,
            gamma=gamma,
            details=f"fraction={fraction:.6g} ergodic_distance={distance:.6g}",
        )
        if section.min_fraction is not None and fraction < section.min_fraction:
            failures.append(
                f"fraction {fraction:.6g} below {section.min_fraction!r} at gamma={gamma!r}"
            )
        if section.max_ergodic_distance is not None and distance > section.max_ergodic_distance:
            failures.append(
                f"ergodic distance {distance:.6g} above {section.max_ergodic_distance!r} "
                f"at gamma={gamma!r}"
            )

    out = ensure_output_dir(out_dir)
    write_longrun(out, rows)
    metrics = {
        "rows": [dict(zip(("gamma", "fraction_within_eps", "ergodic_distance"), r)) for r in rows],
        "failures": failures,
    }
    write_summary(out, COMMAND, "check_failed" if failures else "ok", metrics)
    for reason in failures:
        log_check_failure(COMMAND, "longrun", reason, run_id=run_id)
    if failures:
        raise CheckFailed("; ".join(failures))
    return EXIT_OK
