from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from mgrb.exceptions import ConfigError, MgrbError
from mgrb.experiment import (
    DEFAULT_K_VALUES,
    GRIDS,
    ablation_configs,
    format_table,
    load_config,
    run_grid,
)
from mgrb.models import ExperimentRun


def parse_k_values(raw: str) -> tuple[int, ...]:
    try:
        values = tuple(int(part) for part in raw.split(",") if part.strip())
    except ValueError:
        raise CommandError(f"--k-values must be comma-separated integers, got {raw!r}") from None
    if not values or min(values) < 1:
        raise CommandError("--k-values must be positive")
    return values


class Command(BaseCommand):
    help = "Run an ablation grid: every variant of one base config"

    def add_arguments(self, parser):
        parser.add_argument("--grid", choices=GRIDS, default="components")
        parser.add_argument("--config", help="Base JSON experiment config")
        parser.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
        )
        parser.add_argument(
            "--k-values",
            default=",".join(str(k) for k in DEFAULT_K_VALUES),
            help="Cluster counts for the clusters grid",
        )
        parser.add_argument("--jobs", type=int, default=1, help="Parallel worker processes")
        parser.add_argument("--output-dir", help="Parent directory; one subdirectory per variant")
        parser.add_argument("--no-db", action="store_true")

    def handle(self, *args, **options):
        try:
            base = load_config(options["config"], options["overrides"])
        except ConfigError as exc:
            raise CommandError(f"Invalid config: {exc.errors}") from exc

        root = Path(
            options["output_dir"]
            or base.output_dir
            or Path(settings.MGRB_OUTPUT_ROOT) / f"{base.name}-{options['grid']}"
        )
        try:
            configs = ablation_configs(
                base,
                options["grid"],
                k_values=parse_k_values(options["k_values"]),
                output_root=root,
            )
            self.stdout.write(
                f"Running {len(configs)} variants ({', '.join(c.name for c in configs)}) "
                f"with {options['jobs']} job(s)..."
            )
            results = run_grid(configs, jobs=options["jobs"])
        except MgrbError as exc:
            raise CommandError(str(exc)) from exc

        if not options["no_db"]:
            for artifacts in results:
                ExperimentRun.from_artifacts(artifacts)
        self.stdout.write(format_table(results))
        self.stdout.write(self.style.SUCCESS(f"Grid {options['grid']} written to {root}"))
