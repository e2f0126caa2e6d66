from django.db import models


class TrainingRun(models.Model):
    """
    One CLI training invocation (pretraining, a diff, a baseline or a sweep cell).
    """

    class Kind(models.TextChoices):
        PRETRAIN = "PRETRAIN", "Pretrain"
        FINETUNE_DIFF = "FINETUNE_DIFF", "Finetune diff"
        BASELINE = "BASELINE", "Baseline"
        FINETUNE_MASK = "FINETUNE_MASK", "Fixed-mask finetune"
        SWEEP_CELL = "SWEEP_CELL", "Sweep cell"

    class Status(models.TextChoices):
        PENDING = "PENDING", "Pending"
        RUNNING = "RUNNING", "Running"
        COMPLETED = "COMPLETED", "Completed"
        FAILED = "FAILED", "Failed"

    kind = models.CharField(max_length=20, choices=Kind.choices)
    task = models.CharField(max_length=100, blank=True)
    method = models.CharField(max_length=50, blank=True)
    seed = models.IntegerField(default=0)
    config = models.JSONField(default=dict, blank=True)

    status = models.CharField(
        max_length=10,
        choices=Status.choices,
        default=Status.PENDING,
    )
    artifact_path = models.CharField(max_length=500, blank=True)
    error_message = models.TextField(blank=True)

    created_at = models.DateTimeField(auto_now_add=True)
    completed_at = models.DateTimeField(null=True, blank=True)

    class Meta:
        ordering = ["-created_at"]
        indexes = [
            models.Index(fields=["kind", "status"], name="training_run_kind_status"),
            models.Index(fields=["task", "method"], name="training_run_task_method"),
        ]

    def __str__(self):
        label = " ".join(part for part in (self.get_kind_display(), self.task, self.method) if part)
        return f"{label} (seed {self.seed})"


class EpochMetric(models.Model):
    run = models.ForeignKey(
        TrainingRun,
        on_delete=models.CASCADE,
        related_name="epochs",
    )
    phase = models.CharField(max_length=20)
    epoch = models.PositiveIntegerField()
    train_loss = models.FloatField()
    val_accuracy = models.FloatField(null=True, blank=True)
    expected_l0 = models.FloatField(null=True, blank=True)
    wall_seconds = models.FloatField()

    class Meta:
        ordering = ["run", "id"]
        unique_together = [("run", "phase", "epoch")]

    def __str__(self):
        return f"{self.run_id} {self.phase} epoch {self.epoch}"
