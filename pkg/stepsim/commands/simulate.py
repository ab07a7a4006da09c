from pathlib import Path

from stepsim.commands.deps import build_kernel, initial_state, require_section
from stepsim.core.errors import EXIT_OK
from stepsim.core.logging import log_unit_completed
from stepsim.core.workers import map_bounded
from stepsim.engine.models import run_chain
from stepsim.schemas.experiment import ExperimentConfig
from stepsim.storage.artifacts import ensure_output_dir, write_summary, write_trajectory

COMMAND = "simulate"


def _chain_task(task):
    kernel, a, gamma, n, seed, thin = task
    return run_chain(kernel, a, gamma, n, seed, thin=thin)


def run(config: ExperimentConfig, out_dir: Path, workers: int = 1, run_id: str = None) -> int:
    """One trajectory_<seed>.csv per configured seed."""
    section = require_section(config, COMMAND)
    kernel = build_kernel(config.model)
    a = initial_state(config.model, kernel, section.gamma)
    tasks = [
        (kernel, a, section.gamma, section.horizon, seed, section.thin)
        for seed in section.seeds
    ]
    trajectories = map_bounded(_chain_task, tasks, workers)

    out = ensure_output_dir(out_dir)
    for traj in trajectories:
        path = write_trajectory(out, traj)
        log_unit_completed(
            COMMAND, path.name, run_id=run_id, seed=traj.seed, gamma=section.gamma
        )
    write_summary(
        out,
        COMMAND,
        "ok",
        {
            "model": kernel.metadata(),
            "trajectories": len(trajectories),
            "final_states": {str(t.seed): t.states[-1].tolist() for t in trajectories},
        },
    )
    return EXIT_OK
