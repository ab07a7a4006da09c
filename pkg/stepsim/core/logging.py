import json
import logging
import sys
from datetime import datetime, timezone
from typing import Optional

from pydantic import BaseModel, Field

from stepsim.core.config import settings

# Configure root logger
logging.basicConfig(
    level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    handlers=[logging.StreamHandler(sys.stdout)],
)

logger = logging.getLogger("stepsim")


def utc_now() -> datetime:
    return datetime.now(timezone.utc)


class ExperimentEvent(BaseModel):
    """Experiment event model for structured logging"""

    event_type: str
    command: Optional[str] = None
    run_id: Optional[str] = None
    unit: Optional[str] = None
    seed: Optional[int] = None
    gamma: Optional[float] = None
    success: bool = True
    details: Optional[str] = None
    timestamp: datetime = Field(default_factory=utc_now)


def log_experiment_event(event: ExperimentEvent):
    """Log experiment events with structured data"""
    event_data = event.model_dump()
    event_data["timestamp"] = event_data["timestamp"].isoformat()

    if event.success:
        logger.info(f"EXPERIMENT_EVENT: {json.dumps(event_data)}")
    else:
        logger.warning(f"EXPERIMENT_ALERT: {json.dumps(event_data)}")


def log_unit_completed(
    command: str,
    unit: str,
    run_id: str = None,
    seed: int = None,
    gamma: float = None,
    details: str = None,
):
    """Log one completed work unit (a trajectory, a probe, a sweep point)"""
    event = ExperimentEvent(
        event_type="unit_completed",
        command=command,
        run_id=run_id,
        unit=unit,
        seed=seed,
        gamma=gamma,
        success=True,
        details=details,
    )
    log_experiment_event(event)


def log_check_failure(command: str, unit: str, reason: str, run_id: str = None):
    """Log a failed empirical check (flagged probe, violated threshold)"""
    event = ExperimentEvent(
        event_type="check_failure",
        command=command,
        run_id=run_id,
        unit=unit,
        success=False,
        details=reason,
    )
    log_experiment_event(event)


def log_config_error(command: str, reason: str, run_id: str = None):
    """Log rejected experiment configuration"""
    event = ExperimentEvent(
        event_type="config_error",
        command=command,
        run_id=run_id,
        success=False,
        details=reason,
    )
    log_experiment_event(event)
