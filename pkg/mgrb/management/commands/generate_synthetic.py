from django.core.management.base import BaseCommand, CommandError

from mgrb.data import SyntheticSpec, generate_synthetic, write_dataset
from mgrb.serializers import SyntheticSpecSerializer


class Command(BaseCommand):
    help = "Write the synthetic hierarchical dataset as CSV with its schema, ontology and embeddings"

    def add_arguments(self, parser):
        parser.add_argument("--out", required=True, help="Output directory")
        parser.add_argument("--groups", type=int, default=4, help="Coarse groups")
        parser.add_argument("--fine", type=int, default=3, help="Fine classes per group")
        parser.add_argument("--dim", type=int, default=60)
        parser.add_argument("--seed", type=int, default=1993)

    def handle(self, *args, **options):
        serializer = SyntheticSpecSerializer(
            data={
                "coarse_groups": options["groups"],
                "fine_per_group": options["fine"],
                "dim": options["dim"],
                "seed": options["seed"],
            }
        )
        if not serializer.is_valid():
            raise CommandError(f"Invalid synthetic spec: {serializer.errors}")
        data = serializer.validated_data
        spec = SyntheticSpec(**{**data, "train_counts": tuple(data["train_counts"])})

        dataset = generate_synthetic(spec)
        schema_path = write_dataset(dataset, options["out"])
        self.stdout.write(
            f"{dataset.num_classes} classes, {len(dataset.train_y)} train / "
            f"{len(dataset.test_y)} test rows"
        )
        self.stdout.write(self.style.SUCCESS(f"Dataset written; schema at {schema_path}"))
