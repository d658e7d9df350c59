from django.core.validators import MaxValueValidator, MinValueValidator
from django.db import models, transaction

from .experiment import RunArtifacts


class ExperimentRun(models.Model):
    """One finished incremental run and its resolved config"""

    run_id = models.AutoField(primary_key=True)
    name = models.CharField(max_length=100)
    seed = models.IntegerField(validators=[MinValueValidator(0)])
    n = models.IntegerField(validators=[MinValueValidator(1)])
    m = models.IntegerField(validators=[MinValueValidator(1)])
    config = models.JSONField()
    class_names = models.JSONField(default=list)
    output_dir = models.CharField(max_length=500, blank=True, default="")
    last_accuracy = models.FloatField(
        validators=[MinValueValidator(0), MaxValueValidator(1)]
    )
    average_incremental_accuracy = models.FloatField(
        validators=[MinValueValidator(0), MaxValueValidator(1)]
    )
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ["-created_at", "-run_id"]
        indexes = [
            models.Index(fields=["name"], name="mgrb_run_name_idx"),
            models.Index(fields=["seed", "n", "m"], name="mgrb_run_split_idx"),
        ]

    def __str__(self) -> str:
        return f"Run {self.run_id} - {self.name} (seed {self.seed})"

    @property
    def num_phases(self) -> int:
        return self.phases.count()

    @classmethod
    @transaction.atomic
    def from_artifacts(cls, artifacts: RunArtifacts) -> "ExperimentRun":
        summary = artifacts.summary
        run = cls.objects.create(
            name=artifacts.name,
            seed=artifacts.seed,
            n=artifacts.split["n"],
            m=artifacts.split["m"],
            config=artifacts.config,
            class_names=list(artifacts.class_names),
            output_dir=str(artifacts.output_dir or ""),
            last_accuracy=summary["last_accuracy"],
            average_incremental_accuracy=summary["average_incremental_accuracy"],
        )
        PhaseRecord.objects.bulk_create(
            PhaseRecord(
                run=run,
                phase=report.phase,
                n_old=report.n_old,
                n_new=report.n_new,
                accuracy=report.accuracy,
                old_accuracy=report.old_accuracy,
                new_accuracy=report.new_accuracy,
                average_incremental_accuracy=report.average_incremental_accuracy,
                per_class_accuracy=list(report.per_class_accuracy),
                confusion=[list(row) for row in report.confusion],
                train_counts=list(report.train_counts),
            )
            for report in artifacts.reports
        )
        return run


class PhaseRecord(models.Model):
    """Metrics of one phase of a stored run"""

    run = models.ForeignKey(ExperimentRun, on_delete=models.CASCADE, related_name="phases")
    phase = models.IntegerField(validators=[MinValueValidator(0)])
    n_old = models.IntegerField(validators=[MinValueValidator(0)])
    n_new = models.IntegerField(validators=[MinValueValidator(1)])
    accuracy = models.FloatField(validators=[MinValueValidator(0), MaxValueValidator(1)])
    old_accuracy = models.FloatField(null=True, blank=True)
    new_accuracy = models.FloatField(null=True, blank=True)
    average_incremental_accuracy = models.FloatField(null=True, blank=True)
    per_class_accuracy = models.JSONField(default=list)
    confusion = models.JSONField(default=list)
    train_counts = models.JSONField(default=list)

    class Meta:
        ordering = ["run", "phase"]
        constraints = [
            models.UniqueConstraint(fields=["run", "phase"], name="mgrb_unique_run_phase"),
        ]

    def __str__(self) -> str:
        return f"Run {self.run_id} phase {self.phase}"

    @property
    def classes_seen(self) -> int:
        return self.n_old + self.n_new
