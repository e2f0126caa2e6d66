"""Bookkeeping of CLI training runs in the database."""

import logging
from contextlib import contextmanager

from django.utils import timezone

from ..models import EpochMetric, TrainingRun

logger = logging.getLogger(__name__)


class RunRecorder:
    def __init__(self, run):
        self.run = run

    def __call__(self, record):
        EpochMetric.objects.create(
            run=self.run,
            phase=record.phase,
            epoch=record.epoch,
            train_loss=record.train_loss,
            val_accuracy=record.val_accuracy,
            expected_l0=record.expected_l0,
            wall_seconds=record.wall_seconds,
        )

    def complete(self, artifact_path=""):
        self.run.status = TrainingRun.Status.COMPLETED
        self.run.artifact_path = str(artifact_path)
        self.run.completed_at = timezone.now()
        self.run.save(update_fields=["status", "artifact_path", "completed_at"])

    def fail(self, error):
        self.run.status = TrainingRun.Status.FAILED
        self.run.error_message = str(error)
        self.run.completed_at = timezone.now()
        self.run.save(update_fields=["status", "error_message", "completed_at"])


@contextmanager
def track_run(kind, *, task="", method="", seed=0, config=None):
    """Record a run as RUNNING, then FAILED if the block raises.

    The block calls recorder.complete(path) once its artifact is written.
    """
    run = TrainingRun.objects.create(
        kind=kind,
        task=task,
        method=method,
        seed=seed,
        config=config or {},
        status=TrainingRun.Status.RUNNING,
    )
    recorder = RunRecorder(run)
    try:
        yield recorder
    except Exception as exc:
        logger.warning("run %s failed: %s", run.pk, exc)
        recorder.fail(exc)
        raise
