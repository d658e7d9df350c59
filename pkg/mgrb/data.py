"""
Datasets, the synthetic hierarchical generator and incremental split plans.
"""

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .exceptions import DatasetError, InvalidArgument
from .hierarchy import EmbeddingTable, write_embeddings, write_ontology
from .numerics import Rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        if x.shape[0] == 0:
            raise DatasetError("cannot fit standardization on zero rows")
        scale = x.std(axis=0)
        scale[scale == 0] = 1.0
        return cls(x.mean(axis=0), scale)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale


@dataclass(frozen=True)
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    class_names: tuple[str, ...]
    ontology_path: Path | None = None
    embedding_path: Path | None = None
    ontology_lines: tuple[str, ...] | None = None
    embeddings: EmbeddingTable | None = None
    standardizer: Standardizer | None = field(default=None, compare=False)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def input_dim(self) -> int:
        return int(self.train_x.shape[1])

    def class_samples(self, labels: Iterable[int], split: str = "train") -> dict[int, np.ndarray]:
        x, y = (self.train_x, self.train_y) if split == "train" else (self.test_x, self.test_y)
        return {int(label): x[y == label] for label in labels}

    def standardized(self, fit_labels: Iterable[int] | None = None) -> "Dataset":
        """
        Z-score both splits with statistics from the training rows of
        ``fit_labels`` (every training row when None).
        """
        rows = self.train_x
        if fit_labels is not None:
            rows = self.train_x[np.isin(self.train_y, list(fit_labels))]
        standardizer = Standardizer.fit(rows)
        return replace(
            self,
            train_x=standardizer.apply(self.train_x),
            test_x=standardizer.apply(self.test_x) if len(self.test_x) else self.test_x,
            standardizer=standardizer,
        )


# -- CSV ingestion -----------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    label: str
    features: tuple[str, ...] | None = None
    split: str | None = None
    train_value: str = "train"
    test_value: str = "test"
    test_path: Path | None = None
    ontology: Path | None = None
    embeddings: Path | None = None

    @classmethod
    def load(cls, path: str | Path) -> "CsvSchema":
        """JSON schema file; relative paths resolve against its directory"""
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DatasetError(f"cannot read schema {path}: {exc}") from exc
        if "label" not in raw:
            raise DatasetError("schema must name its label column")

        def resolve(value):
            return None if value is None else (path.parent / value).resolve()

        return cls(
            label=raw["label"],
            features=tuple(raw["features"]) if raw.get("features") else None,
            split=raw.get("split"),
            train_value=raw.get("train_value", "train"),
            test_value=raw.get("test_value", "test"),
            test_path=resolve(raw.get("test_path")),
            ontology=resolve(raw.get("ontology")),
            embeddings=resolve(raw.get("embeddings")),
        )


def _read_rows(path: Path, schema: CsvSchema) -> tuple[list[str], np.ndarray, list[str]]:
    try:
        handle = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(row for row in handle if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path} is empty") from None
        if schema.label not in header:
            raise DatasetError(f"{path}: no label column {schema.label!r}")
        features = list(schema.features) if schema.features else [
            column for column in header if column not in (schema.label, schema.split)
        ]
        missing = [column for column in features if column not in header]
        if missing:
            raise DatasetError(f"{path}: missing feature columns {missing}")
        feature_index = [header.index(column) for column in features]
        label_index = header.index(schema.label)
        split_index = header.index(schema.split) if schema.split in header else None
        if schema.split and split_index is None:
            raise DatasetError(f"{path}: no split column {schema.split!r}")

        labels, values, splits = [], [], []
        for line, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{line}: ragged row ({len(row)} fields, header has {len(header)})")
            try:
                values.append([float(row[i]) for i in feature_index])
            except ValueError:
                raise DatasetError(f"{path}:{line}: non-numeric feature value") from None
            labels.append(row[label_index].strip())
            splits.append(row[split_index].strip() if split_index is not None else schema.train_value)
    matrix = np.array(values, dtype=np.float64).reshape(len(values), len(feature_index))
    if not np.all(np.isfinite(matrix)):
        raise DatasetError(f"{path}: non-finite feature value")
    return labels, matrix, splits


def load_csv(path: str | Path, schema: CsvSchema, *, standardize: bool = True) -> Dataset:
    """
    One sample per row. Class names are the distinct training labels in
    sorted order; a test label never seen in training is an error.
    """
    path = Path(path)
    labels, x, splits = _read_rows(path, schema)
    is_train = np.array([s == schema.train_value for s in splits], dtype=bool)
    is_test = np.array([s == schema.test_value for s in splits], dtype=bool)
    unknown_split = sorted({s for s in splits} - {schema.train_value, schema.test_value})
    if unknown_split:
        raise DatasetError(f"{path}: unknown split values {unknown_split}")

    test_labels = [l for l, t in zip(labels, is_test) if t]
    test_x = x[is_test]
    if schema.test_path is not None:
        extra_labels, extra_x, _ = _read_rows(Path(schema.test_path), replace(schema, split=None))
        test_labels += extra_labels
        test_x = np.vstack([test_x, extra_x]) if len(test_x) else extra_x

    train_labels = [l for l, t in zip(labels, is_train) if t]
    if not train_labels:
        raise DatasetError(f"{path}: no training rows")
    class_names = tuple(sorted(set(train_labels)))
    index = {name: i for i, name in enumerate(class_names)}
    unseen = sorted(set(test_labels) - set(class_names))
    if unseen:
        raise DatasetError(f"test rows use labels absent from training: {unseen}")

    dataset = Dataset(
        train_x=x[is_train],
        train_y=np.array([index[l] for l in train_labels], dtype=np.int64),
        test_x=test_x.reshape(len(test_labels), x.shape[1]),
        test_y=np.array([index[l] for l in test_labels], dtype=np.int64),
        class_names=class_names,
        ontology_path=schema.ontology,
        embedding_path=schema.embeddings,
    )
    logger.info(
        "loaded %s: %d train / %d test rows, %d classes",
        path, len(dataset.train_y), len(dataset.test_y), dataset.num_classes,
    )
    return dataset.standardized() if standardize else dataset


# -- synthetic data ----------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    coarse_groups: int = 4
    fine_per_group: int = 3
    dim: int = 60
    intra_spread: float = 2.0
    inter_spread: float = 6.0
    train_counts: tuple[int, ...] = (300, 150, 75)
    test_per_class: int = 50
    noise: float = 5.0
    seed: int = 1993

    def __post_init__(self) -> None:
        if min(self.coarse_groups, self.fine_per_group, self.dim, self.test_per_class) < 1:
            raise InvalidArgument("synthetic counts and dimension must be positive")
        if not self.train_counts or min(self.train_counts) < 1:
            raise InvalidArgument("train_counts must be positive")
        if self.intra_spread <= 0 or self.inter_spread <= 0 or self.noise < 0:
            raise InvalidArgument("spreads must be positive and noise non-negative")

    @property
    def num_classes(self) -> int:
        return self.coarse_groups * self.fine_per_group


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """
    Gaussian classes whose centres nest inside coarse-group centres. The
    ground-truth ontology is emitted with the data and the fine centres
    double as label embeddings.
    """
    rng = Rng(spec.seed)
    coarse_centres = rng.normal(0.0, spec.inter_spread, (spec.coarse_groups, spec.dim))
    names, ontology, embeddings = [], [], {}
    train_x, train_y, test_x, test_y = [], [], [], []
    for group in range(spec.coarse_groups):
        for fine in range(spec.fine_per_group):
            label = len(names)
            name = f"g{group}_c{fine}"
            centre = coarse_centres[group] + rng.normal(0.0, spec.intra_spread, spec.dim)
            names.append(name)
            ontology.append(f"group{group}/{name}")
            embeddings[name] = centre
            n_train = spec.train_counts[label % len(spec.train_counts)]
            train_x.append(centre + rng.normal(0.0, 1.0, (n_train, spec.dim)) * spec.noise)
            train_y.append(np.full(n_train, label, dtype=np.int64))
            test_x.append(centre + rng.normal(0.0, 1.0, (spec.test_per_class, spec.dim)) * spec.noise)
            test_y.append(np.full(spec.test_per_class, label, dtype=np.int64))
    return Dataset(
        train_x=np.vstack(train_x),
        train_y=np.concatenate(train_y),
        test_x=np.vstack(test_x),
        test_y=np.concatenate(test_y),
        class_names=tuple(names),
        ontology_lines=tuple(ontology),
        embeddings=EmbeddingTable(embeddings, spec.dim),
    )


def write_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write data.csv, schema.json, ontology.txt and embeddings.txt; returns the schema path"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    columns = [f"f{i}" for i in range(dataset.input_dim)]
    with open(out_dir / "data.csv", "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["label", "split", *columns])
        for split, x, y in (("train", dataset.train_x, dataset.train_y), ("test", dataset.test_x, dataset.test_y)):
            for row, label in zip(x, y):
                writer.writerow([dataset.class_names[label], split, *(repr(float(v)) for v in row)])
    schema = {"label": "label", "split": "split", "features": columns}
    if dataset.ontology_lines:
        write_ontology(out_dir / "ontology.txt", (line.split("/") for line in dataset.ontology_lines))
        schema["ontology"] = "ontology.txt"
    if dataset.embeddings:
        write_embeddings(out_dir / "embeddings.txt", dataset.embeddings.vectors)
        schema["embeddings"] = "embeddings.txt"
    schema_path = out_dir / "schema.json"
    schema_path.write_text(json.dumps(schema, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return schema_path


# -- split plans -------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    n: int
    m: int
    seed: int
    order: tuple[int, ...]
    rosters: tuple[tuple[int, ...], ...]

    @property
    def num_phases(self) -> int:
        return len(self.rosters)

    def index_of(self) -> dict[int, int]:
        """Dataset label -> incremental class index"""
        return {label: index for index, label in enumerate(self.order)}

    def index_rosters(self) -> list[range]:
        ranges, start = [], 0
        for roster in self.rosters:
            ranges.append(range(start, start + len(roster)))
            start += len(roster)
        return ranges


def make_split_plan(dataset: Dataset | int, n: int, m: int, seed: int) -> SplitPlan:
    """Seeded class order sliced into an initial roster of n and rosters of m"""
    total = dataset if isinstance(dataset, int) else dataset.num_classes
    if not 1 <= n <= total:
        raise InvalidArgument(f"initial class count n={n} must be in [1, {total}]")
    remaining = total - n
    if remaining and (m < 1 or remaining % m):
        valid = [d for d in range(1, remaining + 1) if remaining % d == 0]
        raise InvalidArgument(
            f"{remaining} classes after the first phase cannot be split into phases of {m}; "
            f"valid m: {valid}"
        )
    order = tuple(int(c) for c in Rng(seed).permutation(total))
    rosters = [order[:n]] + [order[start : start + m] for start in range(n, total, m)] if remaining else [order]
    return SplitPlan(n=n, m=m, seed=seed, order=order, rosters=tuple(tuple(r) for r in rosters))


def remap_labels(labels: Sequence[int], plan: SplitPlan) -> np.ndarray:
    index = plan.index_of()
    return np.array([index[int(label)] for label in labels], dtype=np.int64)
