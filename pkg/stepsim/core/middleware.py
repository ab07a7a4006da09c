"""
Run tracing for CLI subcommands.
Assigns a run id and logs start, completion status and duration of each run.
"""

import time
import uuid

from stepsim.core.logging import logger


class RunTracer:
    """Log runs for monitoring and reproducibility."""

    def __init__(self, command: str, config_path: str = None):
        self.command = command
        self.config_path = config_path
        # Generate run ID for tracing
        self.run_id = str(uuid.uuid4())
        self.exit_code = None
        self._start_time = None

    def __enter__(self) -> "RunTracer":
        self._start_time = time.time()
        logger.info(
            f"RUN {self.run_id}: {self.command} "
            f"config={self.config_path or 'unknown'}"
        )
        return self

    def finish(self, exit_code: int) -> int:
        self.exit_code = exit_code
        return exit_code

    def __exit__(self, exc_type, exc, tb) -> bool:
        duration = time.time() - self._start_time
        if exc_type is not None and self.exit_code is None:
            logger.error(
                f"DONE {self.run_id}: {self.command} raised {exc_type.__name__} "
                f"in {duration:.3f}s"
            )
            return False
        logger.info(f"DONE {self.run_id}: exit {self.exit_code} in {duration:.3f}s")
        return False
