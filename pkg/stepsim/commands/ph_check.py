from pathlib import Path

from stepsim.commands.deps import build_kernel, build_lyapunov, build_probes, require_section
from stepsim.core.errors import EXIT_OK, CheckFailed
from stepsim.core.logging import log_check_failure, log_unit_completed, logger
from stepsim.engine.stability import PhReport, ph_check_monte_carlo
from stepsim.schemas.experiment import ExperimentConfig
from stepsim.storage.artifacts import ensure_output_dir, write_ph_report, write_summary

COMMAND = "ph_check"


def run(config: ExperimentConfig, out_dir: Path, workers: int = 1, run_id: str = None) -> int:
    """Monte Carlo drift check at every probe and step size; exit 1 on any flag."""
    section = require_section(config, COMMAND)
    kernel = build_kernel(config.model)
    spec = build_lyapunov(config, kernel)
    ratio = spec.ratio_bound(section.gammas)

    report = PhReport(records=[])
    for j, gamma in enumerate(section.gammas):
        probes = build_probes(config, kernel, gamma)
        part = ph_check_monte_carlo(
            kernel,
            spec,
            probes,
            gamma,
            section.samples,
            seed=section.seed,
            key=(j,),
            workers=workers,
        )
        report = report.merge(part)
        log_unit_completed(
            COMMAND,
            f"gamma={gamma!r}",
            run_id=run_id,
            seed=section.seed,
            gamma=gamma,
            details=f"probes={len(part.records)} flagged={len(part.flagged)}",
        )

    out = ensure_output_dir(out_dir)
    write_ph_report(out, report, kernel.dimension)

    negative = report.negative_psi
    if negative:
        logger.info(f"psi < 0 at {len(negative)} of {len(report.records)} probes")
    flagged = report.flagged
    metrics = {
        "probes": len(report.records),
        "flagged": len(flagged),
        "negative_psi": len(negative),
        "beta_over_alpha_max": ratio,
        "constant": spec.constant,
    }
    write_summary(out, COMMAND, "check_failed" if flagged else "ok", metrics)
    for record in flagged:
        log_check_failure(
            COMMAND,
            f"probe={record.probe_id} gamma={record.gamma!r}",
            f"gap {record.gap:.6g} exceeds 3 x stderr {record.stderr:.6g}",
            run_id=run_id,
        )
    if flagged:
        raise CheckFailed(f"{len(flagged)} probe(s) violate the drift inequality")
    return EXIT_OK
