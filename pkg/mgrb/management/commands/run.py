from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from mgrb.exceptions import ConfigError, MgrbError
from mgrb.experiment import format_table, load_config, run
from mgrb.models import ExperimentRun


class Command(BaseCommand):
    help = "Run one class-incremental experiment and write its artifacts"

    def add_arguments(self, parser):
        parser.add_argument("--config", help="JSON experiment config (defaults fill anything omitted)")
        parser.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Dotted config override, e.g. --set weights.beta=5 (repeatable)",
        )
        parser.add_argument("--output-dir", help="Artifact directory (overrides the config)")
        parser.add_argument(
            "--resume-from",
            help="Run directory with phase checkpoints; training continues after its last complete phase",
        )
        parser.add_argument("--no-db", action="store_true", help="Do not store the run in the database")

    def handle(self, *args, **options):
        try:
            config = load_config(options["config"], options["overrides"])
        except ConfigError as exc:
            raise CommandError(f"Invalid config: {exc.errors}") from exc

        resume_from = options["resume_from"]
        output_dir = Path(
            options["output_dir"]
            or resume_from
            or config.output_dir
            or Path(settings.MGRB_OUTPUT_ROOT) / config.name
        )
        self.stdout.write(f"Running {config.name} (seed {config.seed}, split {config.n}/{config.m})...")
        try:
            artifacts = run(config, output_dir, resume_from=resume_from)
        except MgrbError as exc:
            raise CommandError(str(exc)) from exc

        self.stdout.write(format_table([artifacts]))
        if not options["no_db"]:
            stored = ExperimentRun.from_artifacts(artifacts)
            self.stdout.write(f"Stored as run {stored.run_id}")
        self.stdout.write(self.style.SUCCESS(f"Artifacts written to {output_dir}"))
