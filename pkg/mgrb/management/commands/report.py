from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from mgrb.exceptions import MgrbError
from mgrb.experiment import (
    RunArtifacts,
    diff_runs,
    discover_runs,
    format_diff,
    format_table,
    load_artifacts,
    write_diff_csv,
    write_xlsx,
)


class Command(BaseCommand):
    help = "Print accuracy tables for stored run directories, optionally diffing two runs"

    def add_arguments(self, parser):
        parser.add_argument(
            "--dir", dest="dirs", action="append", required=True,
            help="Run directory or a directory of runs (repeatable)",
        )
        parser.add_argument(
            "--diff", nargs=2, metavar=("RUN_A", "RUN_B"),
            help="Per-class accuracy of RUN_B minus RUN_A (names or directories)",
        )
        parser.add_argument("--phase", type=int, help="Phase to diff (default: last)")
        parser.add_argument("--diff-csv", help="Where to write the difference listing")
        parser.add_argument("--xlsx", help="Also export the tables to this workbook")

    def handle(self, *args, **options):
        try:
            runs = [artifacts for path in options["dirs"] for artifacts in discover_runs(path)]
            self.stdout.write(format_table(runs))

            diff = None
            if options["diff"]:
                first, second = (self._resolve(runs, ref) for ref in options["diff"])
                diff = diff_runs(first, second, options["phase"])
                self.stdout.write("")
                self.stdout.write(format_diff(diff))
                csv_path = Path(
                    options["diff_csv"]
                    or Path(options["dirs"][0]) / f"diff_{first.name}_{second.name}.csv"
                )
                write_diff_csv(diff, csv_path)
                self.stdout.write(self.style.SUCCESS(f"Difference listing written to {csv_path}"))

            if options["xlsx"]:
                write_xlsx(runs, options["xlsx"], diff)
                self.stdout.write(self.style.SUCCESS(f"Workbook written to {options['xlsx']}"))
        except MgrbError as exc:
            raise CommandError(str(exc)) from exc

    def _resolve(self, runs: list[RunArtifacts], ref: str) -> RunArtifacts:
        matches = [artifacts for artifacts in runs if artifacts.name == ref]
        if len(matches) == 1:
            return matches[0]
        if len(matches) > 1:
            raise CommandError(f"run name {ref!r} is ambiguous; pass its directory instead")
        if Path(ref, "summary.json").exists():
            return load_artifacts(ref)
        raise CommandError(f"no run named {ref!r}")
