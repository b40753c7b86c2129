from pathlib import Path

from django.db import models
from django.utils import timezone

from lab import __version__


class RunKind(models.TextChoices):
    LINEAR_DECAY = "linear_decay", "Linear decay"
    SIMULATE = "simulate", "Simulate"
    INVARIANTS = "invariants", "Invariants"
    WEAK_STRONG = "weak_strong", "Weak-strong"
    GREENS_DUMP = "greens_dump", "Green's function dump"


class RunStatus(models.TextChoices):
    RUNNING = "RUNNING", "Running"
    PASSED = "PASSED", "Passed"
    FAILED = "FAILED", "Certificate failed"
    ERROR = "ERROR", "Error"


class ArtifactKind(models.TextChoices):
    CSV = "CSV", "CSV table"
    JSON = "JSON", "JSON document"
    SNAPSHOT = "SNAPSHOT", "Snapshot"
    MANIFEST = "MANIFEST", "Manifest"


ARTIFACT_SUFFIXES = {
    ".csv": ArtifactKind.CSV,
    ".json": ArtifactKind.JSON,
    ".vlsnap": ArtifactKind.SNAPSHOT,
}


class RunManager(models.Manager):
    def recent(self, limit=20):
        """Most recently started runs first."""
        return self.order_by("-created_at")[:limit]

    def of_kind(self, kind):
        return self.filter(kind=kind).order_by("-created_at")

    def passed(self):
        return self.filter(status=RunStatus.PASSED)

    def latest_for_hash(self, config_hash):
        """Latest finished run of a given configuration, or None."""
        return (
            self.filter(config_hash=config_hash)
            .exclude(status=RunStatus.RUNNING)
            .order_by("-created_at")
            .first()
        )


class Run(models.Model):
    kind = models.CharField(max_length=20, choices=RunKind.choices)
    status = models.CharField(
        max_length=10,
        choices=RunStatus.choices,
        default=RunStatus.RUNNING,
    )
    config = models.JSONField(default=dict)
    config_hash = models.CharField(max_length=40, db_index=True)
    # u64 seeds do not fit a signed bigint
    seed = models.CharField(max_length=20, blank=True)
    output_dir = models.CharField(max_length=500)
    exit_code = models.SmallIntegerField(null=True, blank=True)
    summary = models.JSONField(default=dict, blank=True)
    code_version = models.CharField(max_length=20, default=__version__)
    created_at = models.DateTimeField(auto_now_add=True)
    finished_at = models.DateTimeField(null=True, blank=True)

    objects = RunManager()

    class Meta:
        ordering = ["-created_at"]

    def __str__(self):
        return f"{self.kind} {self.config_hash[:12]} ({self.status})"

    def finish(self, status, exit_code, summary=None):
        self.status = status
        self.exit_code = exit_code
        self.summary = summary or {}
        self.finished_at = timezone.now()
        self.save(update_fields=["status", "exit_code", "summary", "finished_at"])

    def collect_artifacts(self):
        """Register every file under the output directory as an Artifact."""
        root = Path(self.output_dir)
        if not root.exists():
            return []
        artifacts = []
        for path in sorted(p for p in root.rglob("*") if p.is_file() and not p.name.startswith(".")):
            kind = ArtifactKind.MANIFEST if path.name == "manifest.json" else ARTIFACT_SUFFIXES.get(path.suffix)
            if kind is None:
                continue
            artifact, _ = Artifact.objects.update_or_create(
                run=self, name=str(path.relative_to(root)), defaults={"kind": kind, "path": str(path)}
            )
            artifacts.append(artifact)
        return artifacts

    def to_dict(self):
        return {
            "id": self.pk,
            "kind": self.kind,
            "status": self.status,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "exit_code": self.exit_code,
            "summary": self.summary,
            "code_version": self.code_version,
            "created_at": self.created_at.isoformat() if self.created_at else None,
            "finished_at": self.finished_at.isoformat() if self.finished_at else None,
        }


class Artifact(models.Model):
    run = models.ForeignKey(Run, on_delete=models.CASCADE, related_name="artifacts")
    name = models.CharField(max_length=200)
    kind = models.CharField(max_length=10, choices=ArtifactKind.choices)
    path = models.CharField(max_length=700)

    class Meta:
        ordering = ["name"]
        constraints = [models.UniqueConstraint(fields=["run", "name"], name="unique_artifact_name_per_run")]

    def __str__(self):
        return f"{self.run_id}/{self.name}"

    @property
    def is_plot_data(self):
        return self.kind in (ArtifactKind.CSV, ArtifactKind.JSON, ArtifactKind.MANIFEST)
