"""
Shared plumbing of the experiment commands: option parsing, config loading,
run bookkeeping and the mapping from lab errors to exit statuses.
"""

import json
import logging

from django.core.management.base import BaseCommand, CommandError
from django.db import DatabaseError
from scipy import fft

from lab.config import load_config
from lab.exceptions import (
    BlowUpError,
    CertificateFailure,
    ContractViolation,
    GridMismatchError,
    InterpolationResidualError,
    LabError,
    MisalignedTrajectories,
    NonAdmissibleTrajectory,
    NonDiffeomorphicMap,
)
from lab.experiments import run_experiment
from lab.models import Run, RunStatus

logger = logging.getLogger(__name__)

EXIT_CONFIG = 2
EXIT_CERTIFICATE = 3
EXIT_BLOWUP = 4
EXIT_NUMERICAL = 5

# (exception classes, exit status, category), first match wins
FAILURE_CATEGORIES = (
    ((CertificateFailure, NonAdmissibleTrajectory), EXIT_CERTIFICATE, "certificate"),
    ((BlowUpError,), EXIT_BLOWUP, "blow-up"),
    ((GridMismatchError,), EXIT_CONFIG, "configuration"),
    (
        (NonDiffeomorphicMap, InterpolationResidualError, MisalignedTrajectories, ContractViolation),
        EXIT_NUMERICAL,
        "numerical",
    ),
)


def failure_category(exc):
    """Exit status and category of an error raised while a run is in progress."""
    for classes, code, category in FAILURE_CATEGORIES:
        if isinstance(exc, classes):
            return code, category
    return EXIT_CONFIG, "configuration"


class ExperimentCommand(BaseCommand):
    """Subclasses set `kind` to one of the experiments in lab.experiments."""

    kind = ""

    def add_arguments(self, parser):
        parser.add_argument("--config", help="Path of a TOML run configuration")
        parser.add_argument("--preset", help="Name of a preset in lab/presets")
        parser.add_argument("--out", help="Output directory (overrides [output] directory)")
        parser.add_argument("--seed", type=int, help="Seed of the initial data (unsigned 64-bit)")
        parser.add_argument("--threads", type=int, default=1, help="FFT worker threads")

    def handle(self, *args, **options):
        overrides = {}
        if options["seed"] is not None:
            overrides["recipe"] = {"seed": options["seed"]}
        try:
            config = load_config(options["config"], options["preset"], self.kind, overrides)
        except (LabError, ValueError) as exc:
            raise CommandError(str(exc), returncode=EXIT_CONFIG)

        directory = config.output_directory(options["out"])
        run = self._start(config, directory)
        try:
            with fft.set_workers(options["threads"]):
                outcome = run_experiment(config, directory)
            if not outcome.passed:
                raise CertificateFailure(f"{self.kind} certificate failed, see {directory}", outcome.summary)
        except (LabError, ValueError) as exc:
            code, category = failure_category(exc)
            status = RunStatus.FAILED if code == EXIT_CERTIFICATE else RunStatus.ERROR
            summary = getattr(exc, "report", None) or {"error": str(exc), "category": category}
            self._finish(run, status, code, summary)
            logger.error(f"{self.kind} run ended with exit status {code} ({category} failure): {exc}")
            raise CommandError(f"{category} failure: {exc}", returncode=code)
        except Exception:
            logger.exception(f"{self.kind} run crashed")
            self._finish(run, RunStatus.ERROR, 1, {"error": "unexpected failure"})
            raise

        self._finish(run, RunStatus.PASSED, 0, outcome.summary)
        self.stdout.write(
            json.dumps(
                {"kind": self.kind, "directory": str(directory), "passed": True, "summary": outcome.summary},
                indent=2,
                default=str,
            )
        )

    def _start(self, config, directory):
        try:
            return Run.objects.create(
                kind=self.kind,
                config=config.to_dict(),
                config_hash=config.config_hash(),
                seed=str(config.seed),
                output_dir=str(directory),
            )
        except DatabaseError:
            logger.warning("run registry unavailable (run migrate); continuing without a record")
            return None

    def _finish(self, run, status, exit_code, summary):
        if run is None:
            return
        try:
            run.finish(status, exit_code, json.loads(json.dumps(summary, default=str)))
            run.collect_artifacts()
        except DatabaseError:
            logger.warning(f"could not update run {run.pk}")
