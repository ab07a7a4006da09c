import argparse
import sys
from typing import List, Optional

from stepsim import __version__
from stepsim.commands import converge, di_solve, longrun, ph_check, simulate
from stepsim.core.config import settings
from stepsim.core.errors import EXIT_CONFIG_ERROR, StepsimError, exit_code_for
from stepsim.core.logging import log_config_error, logger
from stepsim.core.middleware import RunTracer
from stepsim.storage.config_file import load_config

COMMANDS = {
    "simulate": (simulate.run, "simulate chains and write trajectory_<seed>.csv"),
    "di_solve": (di_solve.run, "solve the limiting differential inclusion"),
    "converge": (converge.run, "narrow-convergence sweep over step sizes"),
    "longrun": (longrun.run, "long-run and ergodic statistics against the target set"),
    "ph_check": (ph_check.run, "Monte Carlo check of the Lyapunov drift inequality"),
}


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return number


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stepsim",
        description="Constant-step stochastic approximation experiments",
    )
    parser.add_argument("--version", action="version", version=f"stepsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", required=True, help="experiment INI file")
        cmd.add_argument(
            "--out", default=None, help="output directory (default: STEPSIM_OUTPUT_DIR)"
        )
        cmd.add_argument(
            "--workers", type=_positive_int, default=None, help="worker pool size"
        )
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    run, _ = COMMANDS[args.command]

    with RunTracer(args.command, args.config) as tracer:
        try:
            config = load_config(args.config)
            out_dir = args.out or config.run.output_dir or settings.OUTPUT_DIR
            workers = args.workers or config.run.workers or settings.WORKERS
            code = run(config, out_dir, workers, tracer.run_id)
        except (StepsimError, ValueError) as exc:
            code = exit_code_for(exc)
            if code == EXIT_CONFIG_ERROR:
                log_config_error(args.command, str(exc), run_id=tracer.run_id)
            print(f"stepsim {args.command}: {exc}", file=sys.stderr)
        except OSError as exc:
            code = exit_code_for(exc)
            logger.error(f"I/O failure: {exc}")
            print(f"stepsim {args.command}: {exc}", file=sys.stderr)
        return tracer.finish(code)


if __name__ == "__main__":
    sys.exit(main())
