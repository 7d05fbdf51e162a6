"""
Experiment Logging Context
Logs every experiment run with a run id, timing and outcome
"""

import logging
import time
import uuid
from types import TracebackType

logger = logging.getLogger(__name__)


class ExperimentLogContext:
    """
    Context manager wrapping one experiment run

    Adds:
    - Unique run ID
    - Wall-clock timing (duration_ms)
    - Start / completion / failure records with structured extras
    """

    def __init__(self, experiment: str, seed: int):
        self.experiment = experiment
        self.seed = seed
        self.run_id = uuid.uuid4().hex[:12]
        self.start_time = 0.0
        self.duration_ms = 0.0

    def __enter__(self) -> "ExperimentLogContext":
        self.start_time = time.perf_counter()
        logger.info(
            f"Experiment started: {self.experiment}",
            extra={"run_id": self.run_id, "experiment": self.experiment, "seed": self.seed},
        )
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc: BaseException | None,
        tb: TracebackType | None,
    ) -> bool:
        self.duration_ms = (time.perf_counter() - self.start_time) * 1000

        if exc is None:
            logger.info(
                f"Experiment completed: {self.experiment}",
                extra={
                    "run_id": self.run_id,
                    "experiment": self.experiment,
                    "duration_ms": self.duration_ms,
                    "status": "completed",
                },
            )
        else:
            logger.error(
                f"Experiment failed: {self.experiment}",
                extra={
                    "run_id": self.run_id,
                    "experiment": self.experiment,
                    "duration_ms": self.duration_ms,
                    "error": str(exc),
                    "error_type": type(exc).__name__,
                    "status": "failed",
                },
                exc_info=(exc_type, exc, tb),
            )
        # Let the caller decide how to record the failure
        return False
