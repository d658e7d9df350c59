"""
Experiment orchestration: config loading, the phase loop, run artifacts,
ablation grids and report tables.

Artifacts written for a run directory:

    resolved_config.json    the validated config, defaults filled in
    phase_metrics.csv       one row per phase
    confusion_phase<k>.csv  rows true class, columns predicted class
    phase_records.jsonl     config header line, then one record per phase
    summary.json            last / average accuracy, forgetting, split
    checkpoint_phase<k>.npz network after phase k
    memory_phase<k>.npz     exemplar memory after phase k
"""

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from multiprocessing import Pool
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .data import (
    CsvSchema,
    Dataset,
    SplitPlan,
    SyntheticSpec,
    generate_synthetic,
    load_csv,
    make_split_plan,
)
from .exceptions import ConfigError, InvalidArgument
from .hierarchy import load_embeddings, load_ontology
from .memory import ExemplarMemory
from .network import Network
from .numerics import Rng
from .trainer import (
    AblationFlags,
    PhaseReport,
    PhaseState,
    RosterData,
    TrainerConfig,
    initial_state,
    run_phase,
)
from .utils import accuracy_deltas, average_incremental_accuracy, forgetting

logger = logging.getLogger(__name__)

GRIDS = ("components", "hierarchy", "clusters", "no-cls")
DEFAULT_K_VALUES = (2, 3, 4, 6)

# (use_cls, use_cb, use_kd, use_mg, use_decoupling)
COMPONENT_VARIANTS = {
    "baseline": (True, False, True, False, False),
    "RW": (True, True, True, False, False),
    "MGRW": (True, True, True, True, False),
    "RS": (True, False, True, False, True),
    "MGRS": (True, False, True, True, True),
    "RB": (True, True, True, False, True),
    "MGRB": (True, True, True, True, True),
}


@dataclass(frozen=True)
class DatasetConfig:
    source: str = "synthetic"
    synthetic: SyntheticSpec | None = None
    path: Path | None = None
    schema: Path | None = None


@dataclass(frozen=True)
class MemoryConfig:
    mode: str = "per_class"
    size: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seed: int
    n: int
    m: int
    dataset: DatasetConfig
    memory: MemoryConfig
    trainer: TrainerConfig
    output_dir: Path | None = None

    def to_dict(self) -> dict:
        """JSON-ready form that validates back into an equal config"""
        trainer = self.trainer
        synthetic = self.dataset.synthetic
        return {
            "name": self.name,
            "seed": self.seed,
            "split": {"n": self.n, "m": self.m},
            "dataset": {
                "source": self.dataset.source,
                **(
                    {"synthetic": {**asdict(synthetic), "train_counts": list(synthetic.train_counts)}}
                    if synthetic is not None
                    else {}
                ),
                "path": str(self.dataset.path) if self.dataset.path else None,
                "schema": str(self.dataset.schema) if self.dataset.schema else None,
            },
            "memory": asdict(self.memory),
            "network": {"hidden_sizes": list(trainer.hidden_sizes)},
            "train": _sgd_dict(trainer.train),
            "retrain": _sgd_dict(trainer.retrain),
            "weights": {
                "beta": trainer.weights.beta,
                "alpha": trainer.weights.alpha,
                "temperature": trainer.weights.temperature,
                "lambda_override": trainer.weights.lam,
                "swap_lambda": trainer.weights.swap_lambda,
            },
            "flags": asdict(trainer.flags),
            "k": trainer.k,
            "ratio": trainer.ratio,
            "warmup_epochs": trainer.warmup_epochs,
            "output_dir": str(self.output_dir) if self.output_dir else None,
        }


def _sgd_dict(sgd) -> dict:
    return {**asdict(sgd), "milestones": list(sgd.milestones)}


# -- config loading ----------------------------------------------------------


def parse_override(item: str) -> tuple[list[str], object]:
    """``a.b.c=value``; the value is read as JSON when it parses, else as a string"""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError({"--set": [f"expected key=value, got {item!r}"]})
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip().split("."), value


def apply_overrides(raw: dict, overrides: Iterable[str]) -> dict:
    result = json.loads(json.dumps(raw))
    for item in overrides:
        path, value = parse_override(item)
        node = result
        for part in path[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigError({"--set": [f"{'.'.join(path)}: {part!r} is not a section"]})
            node = child
        node[path[-1]] = value
    return result


def validate_config(raw: dict) -> ExperimentConfig:
    from .serializers import ExperimentConfigSerializer

    serializer = ExperimentConfigSerializer(data=raw)
    if not serializer.is_valid():
        raise ConfigError(serializer.errors)
    try:
        return serializer.save()
    except InvalidArgument as exc:
        raise ConfigError({"non_field_errors": [str(exc)]}) from exc


def load_config(path: str | Path | None, overrides: Iterable[str] = ()) -> ExperimentConfig:
    raw: dict = {}
    if path is not None:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError({"config": [f"cannot read {path}: {exc}"]}) from exc
        if not isinstance(raw, dict):
            raise ConfigError({"config": ["top level must be a JSON object"]})
    return validate_config(apply_overrides(raw, overrides))


# -- running -----------------------------------------------------------------


@dataclass(frozen=True)
class RunArtifacts:
    name: str
    config: dict
    seed: int
    split: dict
    class_names: tuple[str, ...]
    reports: tuple[PhaseReport, ...]
    output_dir: Path | None = None

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.reports]

    @property
    def columns(self) -> list[str]:
        """Table header: ``init`` then the number of classes seen after each phase"""
        return ["init"] + [str(r.n_old + r.n_new) for r in self.reports[1:]]

    @property
    def summary(self) -> dict:
        last = self.reports[-1]
        return {
            "num_phases": len(self.reports),
            "accuracies": self.accuracies,
            "old_accuracies": [r.old_accuracy for r in self.reports],
            "new_accuracies": [r.new_accuracy for r in self.reports],
            "last_accuracy": last.accuracy,
            "average_incremental_accuracy": average_incremental_accuracy(self.accuracies),
            "forgetting": forgetting([r.per_class_accuracy for r in self.reports]),
        }


def _load_dataset(config: ExperimentConfig) -> Dataset:
    if config.dataset.source == "synthetic":
        return generate_synthetic(config.dataset.synthetic or SyntheticSpec())
    schema = CsvSchema.load(config.dataset.schema)
    return load_csv(config.dataset.path, schema, standardize=False)


def _ontology_for(dataset: Dataset, class_index: dict[str, int]):
    source = dataset.ontology_lines or dataset.ontology_path
    if source is None:
        raise ConfigError({"flags": ["hierarchy_mode 'ontology' needs a dataset with an ontology file"]})
    return load_ontology(source, class_index)


def _embeddings_for(dataset: Dataset):
    if dataset.embeddings is not None:
        return dataset.embeddings
    if dataset.embedding_path is None:
        raise ConfigError({"flags": ["hierarchy_mode 'semantic' needs a dataset with an embedding file"]})
    return load_embeddings(dataset.embedding_path)


def _roster_data(dataset: Dataset, roster: Sequence[int], index: dict[int, int]) -> RosterData:
    train = dataset.class_samples(roster, "train")
    test = dataset.class_samples(roster, "test")
    return RosterData(
        train={index[label]: samples for label, samples in train.items()},
        test={index[label]: samples for label, samples in test.items() if len(samples)},
        names={index[label]: dataset.class_names[label] for label in roster},
        dataset_labels={index[label]: label for label in roster},
    )


def _comparable(config: dict) -> dict:
    return {key: value for key, value in config.items() if key not in ("name", "output_dir")}


def _resume(
    state: PhaseState,
    directory: Path,
    config: ExperimentConfig,
    dataset: Dataset,
    plan: SplitPlan,
    index: dict[int, int],
) -> tuple[PhaseState, list[PhaseReport]]:
    """
    Restore the state after the last phase that has both a network and a
    memory checkpoint in ``directory``. The stored config must match.
    """
    try:
        lines = (directory / "phase_records.jsonl").read_text(encoding="utf-8").splitlines()
        records = [json.loads(line) for line in lines if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgument(f"cannot resume from {directory}: {exc}") from exc
    if not records or "config" not in records[0]:
        raise InvalidArgument(f"{directory}/phase_records.jsonl has no config header")
    if _comparable(records[0]["config"]) != _comparable(config.to_dict()):
        raise ConfigError({"resume": [f"{directory} was written by a different config"]})

    reports = [_report_from_record(r) for r in records[1:]]
    done = [
        r.phase
        for r in reports
        if (directory / f"checkpoint_phase{r.phase}.npz").exists()
        and (directory / f"memory_phase{r.phase}.npz").exists()
    ]
    if not done:
        raise InvalidArgument(f"{directory} holds no complete phase checkpoint")
    last = max(done)
    if last >= plan.num_phases:
        raise InvalidArgument(f"{directory} has phase {last}, the split only has {plan.num_phases}")
    reports = reports[: last + 1]

    network = Network.load(directory / f"checkpoint_phase{last}.npz")
    memory, rng = ExemplarMemory.load(directory / f"memory_phase{last}.npz")
    seen = sum(len(roster) for roster in plan.rosters[: last + 1])
    if network.num_classes != seen or memory.classes != list(range(seen)):
        raise InvalidArgument(f"phase {last} checkpoint does not match the class split")

    names: dict[int, str] = {}
    test_data: dict[int, np.ndarray] = {}
    for roster in plan.rosters[: last + 1]:
        data = _roster_data(dataset, roster, index)
        names.update(data.names)
        test_data.update(data.test)
    hierarchy = state.ontology.restricted(range(seen)) if state.ontology is not None else None

    logger.info("resuming %s after phase %d from %s", config.name, last, directory)
    resumed = replace(
        state,
        phase=last + 1,
        n_old=seen,
        network=network,
        teacher=network.snapshot(),
        memory=memory,
        hierarchy=hierarchy,
        rng=rng or state.rng,
        names=names,
        test_data=test_data,
        accuracies=[r.accuracy for r in reports],
    )
    return resumed, reports


def run(
    config: ExperimentConfig,
    output_dir: str | Path | None = None,
    *,
    resume_from: str | Path | None = None,
) -> RunArtifacts:
    """
    Split the classes, then train phase by phase. Features are standardized
    with statistics from the initial roster only. Artifacts are written when
    an output directory is given (argument or config); phase records are
    rewritten after every phase so an interrupted run can be resumed with
    ``resume_from``.
    """
    if output_dir is not None:
        config = replace(config, output_dir=Path(output_dir))
    output_dir = config.output_dir
    dataset = _load_dataset(config)
    plan = make_split_plan(dataset, config.n, config.m, config.seed)
    dataset = dataset.standardized(plan.rosters[0])
    index = plan.index_of()
    names_by_index = {index[label]: dataset.class_names[label] for label in plan.order}

    mode = config.trainer.flags.hierarchy_mode
    class_index = {name: i for i, name in names_by_index.items()}
    ontology = _ontology_for(dataset, class_index) if mode == "ontology" else None
    embeddings = _embeddings_for(dataset) if mode == "semantic" else None

    trainer_config = replace(config.trainer, checkpoint_dir=output_dir)
    memory = ExemplarMemory(config.memory.mode, config.memory.size)
    try:
        memory.check_capacity(dataset.num_classes)
    except InvalidArgument as exc:
        raise ConfigError({"memory": [str(exc)]}) from exc
    state = initial_state(
        dataset.input_dim,
        trainer_config,
        memory,
        Rng(config.seed),
        ontology=ontology,
        embeddings=embeddings,
    )

    logger.info(
        "run %s: %d classes, %d phases (n=%d, m=%d, seed %d)",
        config.name, dataset.num_classes, plan.num_phases, config.n, config.m, config.seed,
    )
    reports: list[PhaseReport] = []
    if resume_from is not None:
        state, reports = _resume(state, Path(resume_from), config, dataset, plan, index)
    for roster in plan.rosters[state.phase :]:
        state, report = run_phase(state, _roster_data(dataset, roster, index), trainer_config)
        reports.append(report)
        if output_dir is not None:
            _write_phase_records(Path(output_dir), config.to_dict(), config.seed, config.name, reports)

    artifacts = RunArtifacts(
        name=config.name,
        config=config.to_dict(),
        seed=config.seed,
        split=_split_dict(plan),
        class_names=tuple(names_by_index[i] for i in range(len(names_by_index))),
        reports=tuple(reports),
        output_dir=output_dir,
    )
    if output_dir is not None:
        write_artifacts(artifacts, output_dir)
    return artifacts


def _split_dict(plan: SplitPlan) -> dict:
    return {
        "n": plan.n,
        "m": plan.m,
        "seed": plan.seed,
        "order": list(plan.order),
        "rosters": [list(r) for r in plan.rosters],
    }


# -- artifact files ----------------------------------------------------------


def _dumps(value) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"))


def _cell(value) -> str:
    return "" if value is None else repr(value)


def _write_csv(path: Path, config: dict, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buffer = io.StringIO()
    buffer.write(f"# config: {_dumps(config)}\n")
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buffer.getvalue(), encoding="utf-8")


def _phase_record(report: PhaseReport, seed: int) -> dict:
    return {**report.as_record(), "confusion": [list(row) for row in report.confusion], "seed": seed}


def _write_phase_records(
    out: Path, config: dict, seed: int, name: str, reports: Sequence[PhaseReport]
) -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [_dumps({"config": config, "seed": seed, "name": name})]
    lines += [_dumps(_phase_record(r, seed)) for r in reports]
    (out / "phase_records.jsonl").write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_artifacts(artifacts: RunArtifacts, output_dir: str | Path) -> Path:
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = artifacts.config

    (out / "resolved_config.json").write_text(
        json.dumps({"config": config, "seed": artifacts.seed}, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    _write_csv(
        out / "phase_metrics.csv",
        config,
        ["phase", "classes_seen", "n_old", "n_new", "accuracy", "old_accuracy",
         "new_accuracy", "average_incremental_accuracy"],
        (
            [r.phase, r.n_old + r.n_new, r.n_old, r.n_new, _cell(r.accuracy),
             _cell(r.old_accuracy), _cell(r.new_accuracy), _cell(r.average_incremental_accuracy)]
            for r in artifacts.reports
        ),
    )
    for report in artifacts.reports:
        seen = artifacts.class_names[: len(report.confusion)]
        _write_csv(
            out / f"confusion_phase{report.phase}.csv",
            config,
            ["true\\predicted", *seen],
            ([name, *row] for name, row in zip(seen, report.confusion)),
        )
    _write_phase_records(out, config, artifacts.seed, artifacts.name, artifacts.reports)
    (out / "summary.json").write_text(
        json.dumps(
            {
                "name": artifacts.name,
                "config": config,
                "seed": artifacts.seed,
                "split": artifacts.split,
                "class_names": list(artifacts.class_names),
                "summary": artifacts.summary,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    logger.info("wrote artifacts for %s to %s", artifacts.name, out)
    return out


def _report_from_record(record: dict) -> PhaseReport:
    return PhaseReport(
        phase=record["phase"],
        n_old=record["n_old"],
        n_new=record["n_new"],
        accuracy=record["accuracy"],
        per_class_accuracy=tuple(record["per_class_accuracy"]),
        confusion=tuple(tuple(row) for row in record["confusion"]),
        old_accuracy=record["old_accuracy"],
        new_accuracy=record["new_accuracy"],
        average_incremental_accuracy=record["average_incremental_accuracy"],
        train_counts=tuple(record.get("train_counts", ())),
        train_losses=tuple(record.get("train_losses", ())),
        retrain_losses=tuple(record.get("retrain_losses", ())),
        loss_terms=record.get("loss_terms", {}),
        hierarchy_groups=record.get("hierarchy_groups", {}),
    )


def load_artifacts(directory: str | Path) -> RunArtifacts:
    directory = Path(directory)
    try:
        summary = json.loads((directory / "summary.json").read_text(encoding="utf-8"))
        lines = (directory / "phase_records.jsonl").read_text(encoding="utf-8").splitlines()
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidArgument(f"{directory} is not a run directory: {exc}") from exc
    records = [json.loads(line) for line in lines if line.strip()]
    reports = tuple(_report_from_record(r) for r in records if "config" not in r)
    if not reports:
        raise InvalidArgument(f"{directory} holds no phase records")
    return RunArtifacts(
        name=summary["name"],
        config=summary["config"],
        seed=summary["seed"],
        split=summary["split"],
        class_names=tuple(summary["class_names"]),
        reports=reports,
        output_dir=directory,
    )


def discover_runs(path: str | Path) -> list[RunArtifacts]:
    """A run directory, or a directory whose subdirectories are runs"""
    path = Path(path)
    if (path / "summary.json").exists():
        return [load_artifacts(path)]
    runs = [load_artifacts(child) for child in sorted(path.iterdir()) if (child / "summary.json").exists()] if path.is_dir() else []
    if not runs:
        raise InvalidArgument(f"no runs found under {path}")
    return runs


# -- ablation grids ----------------------------------------------------------


def _variant(base: ExperimentConfig, name: str, output_root: Path | None, **changes) -> ExperimentConfig:
    flags = replace(base.trainer.flags, **{k: v for k, v in changes.items() if k != "k"})
    trainer = replace(base.trainer, flags=flags, k=changes.get("k", base.trainer.k))
    return replace(
        base,
        name=name,
        trainer=trainer,
        output_dir=output_root / name if output_root is not None else None,
    )


def ablation_configs(
    base: ExperimentConfig,
    grid: str,
    *,
    k_values: Sequence[int] = DEFAULT_K_VALUES,
    output_root: str | Path | None = None,
) -> list[ExperimentConfig]:
    """
    Variants of ``base`` for one grid. Variants without the multi-granularity
    term run with ``hierarchy_mode='none'``; the others keep the base mode.
    """
    root = Path(output_root) if output_root is not None else base.output_dir
    mg_mode = base.trainer.flags.hierarchy_mode
    if mg_mode == "none":
        mg_mode = "ontology"
    if grid == "components":
        return [
            _variant(
                base, name, root,
                use_cls=cls, use_cb=cb, use_kd=kd, use_mg=mg, use_decoupling=dec,
                hierarchy_mode=mg_mode if mg else "none",
            )
            for name, (cls, cb, kd, mg, dec) in COMPONENT_VARIANTS.items()
        ]
    mgrb = dict(use_cls=True, use_cb=True, use_kd=True, use_mg=True, use_decoupling=True)
    if grid == "hierarchy":
        return [
            _variant(base, "NMG", root, **{**mgrb, "use_mg": False}, hierarchy_mode="none"),
            _variant(base, "MG-ont", root, **mgrb, hierarchy_mode="ontology"),
            _variant(base, "MG-sem", root, **mgrb, hierarchy_mode="semantic"),
            _variant(base, "MG-vis", root, **mgrb, hierarchy_mode="visual"),
        ]
    if grid == "clusters":
        if not k_values or min(k_values) < 1:
            raise InvalidArgument("k values must be positive")
        return [
            _variant(base, f"k{k}", root, **mgrb, hierarchy_mode="visual", k=k) for k in k_values
        ]
    if grid == "no-cls":
        return [
            _variant(base, "MGRB", root, **mgrb, hierarchy_mode=mg_mode),
            _variant(base, "MGRB-no-cls", root, **{**mgrb, "use_cls": False}, hierarchy_mode=mg_mode),
        ]
    raise InvalidArgument(f"unknown grid {grid!r}; choose from {GRIDS}")


def run_grid(configs: Sequence[ExperimentConfig], jobs: int = 1) -> list[RunArtifacts]:
    """Runs are independent; with jobs > 1 they go to a process pool, results in input order"""
    if jobs < 1:
        raise InvalidArgument("jobs must be >= 1")
    if jobs == 1 or len(configs) == 1:
        return [run(config) for config in configs]
    with Pool(min(jobs, len(configs))) as pool:
        return pool.map(run, configs)


# -- reports -----------------------------------------------------------------


def _percent(value: float | None) -> str:
    return "-" if value is None else f"{100 * value:.2f}"


def _align(rows: list[list[str]]) -> str:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join(
        "  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths))).rstrip()
        for row in rows
    )


def phase_table(artifacts: RunArtifacts) -> list[list[str]]:
    rows = [["phase", "classes", "accuracy", "old", "new"]]
    for r in artifacts.reports:
        rows.append([str(r.phase), str(r.n_old + r.n_new), _percent(r.accuracy),
                     _percent(r.old_accuracy), _percent(r.new_accuracy)])
    rows.append(["Avg", "", _percent(artifacts.summary["average_incremental_accuracy"]), "", ""])
    return rows


def grid_table(runs: Sequence[RunArtifacts]) -> list[list[str]]:
    columns = runs[0].columns
    for other in runs[1:]:
        if other.columns != columns:
            raise InvalidArgument(f"run {other.name} has phases {other.columns}, expected {columns}")
    rows = [["variant", *columns, "Avg acc"]]
    for artifacts in runs:
        rows.append([
            artifacts.name,
            *(_percent(a) for a in artifacts.accuracies),
            _percent(artifacts.summary["average_incremental_accuracy"]),
        ])
    return rows


def format_table(runs: Sequence[RunArtifacts]) -> str:
    if not runs:
        raise InvalidArgument("report needs at least one run")
    if len(runs) == 1:
        run_ = runs[0]
        title = f"{run_.name} (seed {run_.seed}, split {run_.split['n']}/{run_.split['m']})"
        return title + "\n" + _align(phase_table(run_))
    return _align(grid_table(runs))


@dataclass(frozen=True)
class DiffRow:
    class_index: int
    class_name: str
    first: float | None
    second: float | None
    delta: float | None


@dataclass(frozen=True)
class RunDiff:
    first: str
    second: str
    phase: int
    rows: tuple[DiffRow, ...] = field(default_factory=tuple)


def diff_runs(first: RunArtifacts, second: RunArtifacts, phase: int | None = None) -> RunDiff:
    """Per-class accuracy of ``second`` minus ``first`` at one phase (default: the last)"""
    keys = ("n", "m", "order", "rosters")
    if any(first.split.get(k) != second.split.get(k) for k in keys):
        raise InvalidArgument(
            f"runs {first.name} and {second.name} use different class splits; "
            "differences are only defined on the same split"
        )
    phase = len(first.reports) - 1 if phase is None else phase
    if not 0 <= phase < min(len(first.reports), len(second.reports)):
        raise InvalidArgument(f"phase {phase} is not present in both runs")
    a = first.reports[phase].per_class_accuracy
    b = second.reports[phase].per_class_accuracy
    deltas = accuracy_deltas(a, b)
    rows = tuple(
        DiffRow(i, first.class_names[i], a[i], b[i], deltas[i]) for i in range(len(deltas))
    )
    return RunDiff(first.name, second.name, phase, rows)


def format_diff(diff: RunDiff) -> str:
    rows = [["class", "name", diff.first, diff.second, "delta"]]
    for row in diff.rows:
        delta = "-" if row.delta is None else f"{100 * row.delta:+.2f}"
        rows.append([str(row.class_index), row.class_name, _percent(row.first), _percent(row.second), delta])
    return f"phase {diff.phase}: {diff.second} - {diff.first}\n" + _align(rows)


def write_diff_csv(diff: RunDiff, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"# diff: {_dumps({'first': diff.first, 'second': diff.second, 'phase': diff.phase})}\n")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["class_index", "class_name", diff.first, diff.second, "delta"])
        for row in diff.rows:
            writer.writerow([row.class_index, row.class_name, _cell(row.first), _cell(row.second), _cell(row.delta)])


def write_xlsx(runs: Sequence[RunArtifacts], path: str | Path, diff: RunDiff | None = None) -> None:
    from openpyxl import Workbook

    workbook = Workbook()
    sheet = workbook.active
    sheet.title = "accuracy"
    table = phase_table(runs[0]) if len(runs) == 1 else grid_table(runs)
    for row in table:
        sheet.append([_xlsx_value(cell) for cell in row])
    if diff is not None:
        listing = workbook.create_sheet("difference")
        listing.append(["class_index", "class_name", diff.first, diff.second, "delta"])
        for row in diff.rows:
            listing.append([row.class_index, row.class_name, row.first, row.second, row.delta])
    workbook.save(path)


def _xlsx_value(cell: str):
    try:
        return float(cell)
    except ValueError:
        return None if cell == "-" else cell
