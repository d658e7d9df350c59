"""
The incremental protocol: one ``run_phase`` call per class roster.

Class ids here are incremental indices (position in the seeded class
order), so every roster is a contiguous block [N_old, N_old + N_new).
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import networkx as nx
import numpy as np

from .exceptions import InvalidArgument, MgrbError, PhaseError
from .hierarchy import (
    SOURCES,
    ClassHierarchy,
    EmbeddingTable,
    build_semantic_hierarchy,
    build_visual_hierarchy,
    soft_label_table,
)
from .losses import ClassCounts, CombineWeights, LossTerms, combined
from .memory import BalancedSet, ExemplarMemory, admit_new_classes, build_balanced_set, stack_classes
from .network import Network, SgdConfig, TeacherSnapshot
from .numerics import Rng
from .utils import average_incremental_accuracy

logger = logging.getLogger(__name__)

# sub-stream keys under Rng.derive(phase, ...)
STREAM_EXPAND, STREAM_HIERARCHY, STREAM_SPLIT, STREAM_TRAIN, STREAM_MEMORY, STREAM_RETRAIN = range(6)


@dataclass(frozen=True)
class AblationFlags:
    use_cb: bool = True
    use_kd: bool = True
    use_mg: bool = True
    use_decoupling: bool = True
    hierarchy_mode: str = "ontology"
    use_cls: bool = True

    def __post_init__(self) -> None:
        if self.hierarchy_mode not in SOURCES:
            raise InvalidArgument(f"hierarchy_mode must be one of {SOURCES}")
        if self.use_mg and self.hierarchy_mode == "none":
            raise InvalidArgument("the multi-granularity term needs a hierarchy_mode")

    def loss_terms(self) -> LossTerms:
        return LossTerms(
            use_cls=self.use_cls, use_cb=self.use_cb, use_kd=self.use_kd, use_mg=self.use_mg
        )


@dataclass(frozen=True)
class TrainerConfig:
    hidden_sizes: tuple[int, ...] = (64, 64)
    train: SgdConfig = SgdConfig()
    retrain: SgdConfig = SgdConfig(learning_rate=0.01, epochs=10)
    ratio: float = 0.9
    k: int = 4
    warmup_epochs: int = 1
    weights: CombineWeights = CombineWeights()
    flags: AblationFlags = AblationFlags()
    checkpoint_dir: Path | None = None

    def __post_init__(self) -> None:
        if not 0 < self.ratio < 1:
            raise InvalidArgument("ratio must be in (0, 1)")
        if self.k < 1:
            raise InvalidArgument("k must be >= 1")
        if self.warmup_epochs < 0:
            raise InvalidArgument("warmup_epochs must be >= 0")


@dataclass(frozen=True)
class RosterData:
    train: Mapping[int, np.ndarray]
    test: Mapping[int, np.ndarray]
    names: Mapping[int, str]
    dataset_labels: Mapping[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class PhaseReport:
    phase: int
    n_old: int
    n_new: int
    accuracy: float
    per_class_accuracy: tuple[float | None, ...]
    confusion: tuple[tuple[int, ...], ...]
    old_accuracy: float | None = None
    new_accuracy: float | None = None
    average_incremental_accuracy: float | None = None
    train_counts: tuple[int, ...] = ()
    train_losses: tuple[float, ...] = ()
    retrain_losses: tuple[float, ...] = ()
    loss_terms: Mapping[str, float] = field(default_factory=dict)
    hierarchy_groups: Mapping[str, list[int]] = field(default_factory=dict)

    def as_record(self) -> dict:
        return {
            "phase": self.phase,
            "n_old": self.n_old,
            "n_new": self.n_new,
            "accuracy": self.accuracy,
            "old_accuracy": self.old_accuracy,
            "new_accuracy": self.new_accuracy,
            "average_incremental_accuracy": self.average_incremental_accuracy,
            "per_class_accuracy": list(self.per_class_accuracy),
            "train_counts": list(self.train_counts),
            "train_losses": list(self.train_losses),
            "retrain_losses": list(self.retrain_losses),
            "loss_terms": dict(sorted(self.loss_terms.items())),
            "hierarchy_groups": {k: list(v) for k, v in sorted(self.hierarchy_groups.items())},
        }


@dataclass
class PhaseState:
    """State entering ``phase``; the teacher exists iff phase >= 1"""

    phase: int
    n_old: int
    n_new: int
    network: Network
    teacher: TeacherSnapshot | None
    memory: ExemplarMemory
    hierarchy: ClassHierarchy | None
    counts: ClassCounts | None
    weights: CombineWeights
    rng: Rng
    names: dict[int, str] = field(default_factory=dict)
    test_data: dict[int, np.ndarray] = field(default_factory=dict)
    ontology: ClassHierarchy | None = None
    embeddings: EmbeddingTable | None = None
    accuracies: list[float] = field(default_factory=list)


def initial_state(
    input_dim: int,
    config: TrainerConfig,
    memory: ExemplarMemory,
    rng: Rng,
    *,
    ontology: ClassHierarchy | None = None,
    embeddings: EmbeddingTable | None = None,
) -> PhaseState:
    network = Network.build(input_dim, config.hidden_sizes, rng.derive(1_000))
    return PhaseState(
        phase=0,
        n_old=0,
        n_new=0,
        network=network,
        teacher=None,
        memory=memory,
        hierarchy=None,
        counts=None,
        weights=config.weights,
        rng=rng,
        ontology=ontology,
        embeddings=embeddings,
    )


def evaluate(
    net: Network, x: np.ndarray, y: np.ndarray, *, phase: int = 0, n_old: int = 0
) -> PhaseReport:
    """
    Top-1 accuracy over all seen classes with per-class accuracy and a
    confusion matrix (rows true, columns predicted). Argmax ties go to the
    lowest class index.
    """
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0:
        raise InvalidArgument("evaluation needs a non-empty test set")
    num_classes = net.num_classes
    if y.min() < 0 or y.max() >= num_classes:
        raise InvalidArgument("test labels must be among the seen classes")
    predictions = np.argmax(net.forward(x), axis=1)
    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(confusion, (y, predictions), 1)
    support = confusion.sum(axis=1)
    per_class = tuple(
        float(confusion[c, c] / support[c]) if support[c] else None for c in range(num_classes)
    )
    correct = predictions == y

    def subset(mask: np.ndarray) -> float | None:
        return float(correct[mask].mean()) if mask.any() else None

    return PhaseReport(
        phase=phase,
        n_old=n_old,
        n_new=num_classes - n_old,
        accuracy=float(correct.mean()),
        per_class_accuracy=per_class,
        confusion=tuple(tuple(int(v) for v in row) for row in confusion),
        old_accuracy=subset(y < n_old),
        new_accuracy=subset(y >= n_old),
    )


def train_epochs(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    *,
    sgd: SgdConfig,
    rng: Rng,
    weights: CombineWeights,
    terms: LossTerms,
    counts: ClassCounts | None = None,
    teacher: TeacherSnapshot | None = None,
    soft_table: np.ndarray | None = None,
    n_new: int | None = None,
    freeze_extractor: bool = False,
    epochs: int | None = None,
) -> tuple[list[float], dict[str, float]]:
    """Mini-batch SGD on the combined objective; returns per-epoch mean losses"""
    net.reset_optimizer()
    teacher_logits = teacher.forward(x) if teacher is not None else None
    losses: list[float] = []
    last_terms: dict[str, float] = {}
    for epoch in range(sgd.epochs if epochs is None else epochs):
        lr = sgd.lr_at(epoch)
        order = rng.permutation(len(y))
        total = 0.0
        term_totals: dict[str, float] = {}
        for start in range(0, len(y), sgd.batch_size):
            idx = order[start : start + sgd.batch_size]
            targets = y[idx]
            bundle = combined(
                net.forward(x[idx]),
                teacher_logits[idx] if teacher_logits is not None else None,
                targets,
                counts,
                soft_table[targets] if soft_table is not None else None,
                weights,
                terms,
                n_new=n_new,
            )
            net.backward_and_step(
                bundle.grad_wrt_logits, sgd, learning_rate=lr, freeze_extractor=freeze_extractor
            )
            total += bundle.value * len(idx)
            for name, value in bundle.terms.items():
                term_totals[name] = term_totals.get(name, 0.0) + value * len(idx)
        losses.append(total / len(y))
        last_terms = {name: value / len(y) for name, value in term_totals.items()}
        logger.debug("epoch %d lr %.5f loss %.6f", epoch, lr, losses[-1])
    return losses, last_terms


def retrain_classifier(
    net: Network,
    balanced: BalancedSet,
    *,
    sgd: SgdConfig,
    rng: Rng,
    hierarchy: ClassHierarchy | None = None,
    beta: float = 1.0,
    weights: CombineWeights = CombineWeights(),
) -> list[float]:
    """
    Decoupled retraining: extractor frozen, classifier refit on the balanced
    set with plain cross-entropy, plus the multi-granularity term when a
    hierarchy is given.
    """
    x, y = balanced.as_arrays()
    soft_table = (
        soft_label_table(hierarchy, beta, range(net.num_classes)) if hierarchy is not None else None
    )
    losses, _ = train_epochs(
        net,
        x,
        y,
        sgd=sgd,
        rng=rng,
        weights=weights,
        terms=LossTerms(use_cls=True, use_cb=False, use_kd=False, use_mg=hierarchy is not None),
        soft_table=soft_table,
        freeze_extractor=True,
    )
    return losses


def _refresh_hierarchy(
    state: PhaseState,
    roster: RosterData,
    config: TrainerConfig,
    rng: Rng,
) -> ClassHierarchy | None:
    mode = config.flags.hierarchy_mode
    seen = range(state.network.num_classes)
    k = min(config.k, len(seen))
    if mode == "none":
        return None
    if mode == "ontology":
        if state.ontology is None:
            raise InvalidArgument("ontology hierarchy requested but no ontology was loaded")
        branch = state.ontology.restricted(sorted(roster.train))
        return branch if state.hierarchy is None else state.hierarchy.merge(branch)
    if mode == "semantic":
        if state.embeddings is None:
            raise InvalidArgument("semantic hierarchy requested but no embeddings were loaded")
        return build_semantic_hierarchy({c: state.names[c] for c in seen}, state.embeddings, k, rng)

    data = {**state.memory.store, **roster.train}
    if state.teacher is not None:
        extractor = state.teacher
    else:
        # no previous extractor in the first phase: warm the current one up
        x, y = stack_classes(roster.train)
        train_epochs(
            state.network,
            x,
            y,
            sgd=config.train,
            rng=rng.derive(0),
            weights=state.weights,
            terms=LossTerms(use_cls=True, use_cb=config.flags.use_cb, use_kd=False, use_mg=False),
            counts=ClassCounts.from_labels(y, state.network.num_classes),
            epochs=config.warmup_epochs,
        )
        extractor = state.network
    return build_visual_hierarchy(extractor, data, k, rng.derive(1), {c: state.names[c] for c in seen})


def run_phase(
    state: PhaseState, roster: RosterData, config: TrainerConfig
) -> tuple[PhaseState, PhaseReport]:
    try:
        return _run_phase(state, roster, config)
    except PhaseError:
        raise
    except (MgrbError, ValueError, KeyError, ArithmeticError, nx.NetworkXException) as exc:
        raise PhaseError(state.phase, exc) from exc


def _run_phase(
    state: PhaseState, roster: RosterData, config: TrainerConfig
) -> tuple[PhaseState, PhaseReport]:
    phase, flags = state.phase, config.flags
    new_ids = sorted(roster.train)
    if not new_ids:
        raise InvalidArgument("roster is empty")
    n_old, n_new = state.n_old, len(new_ids)
    if new_ids != list(range(n_old, n_old + n_new)):
        raise InvalidArgument(f"roster must be classes {n_old}..{n_old + n_new - 1}")
    if (state.teacher is not None) != (phase >= 1):
        raise InvalidArgument("a teacher must exist exactly from phase 1 on")
    logger.info("phase %d: %d old + %d new classes", phase, n_old, n_new)

    rng = state.rng.derive(phase)
    # a failed phase leaves the incoming network untouched
    net = state.network.copy()
    names = {**state.names, **roster.names}
    labels = [roster.dataset_labels.get(c, c) for c in new_ids]

    # 1. grow the classifier
    net.expand_classifier(n_new, rng.derive(STREAM_EXPAND), labels)
    state = replace(state, network=net, names=names, n_new=n_new)

    # 2. hierarchy over all seen classes
    hierarchy = _refresh_hierarchy(state, roster, config, rng.derive(STREAM_HIERARCHY))

    # 3. training split and held-out balanced set
    retrain = flags.use_decoupling and phase >= 1
    balanced: BalancedSet | None = None
    if retrain:
        train_split, balanced = build_balanced_set(
            state.memory, roster.train, config.ratio, rng.derive(STREAM_SPLIT)
        )
    else:
        train_split = {**state.memory.store, **roster.train}
    x, y = stack_classes(train_split)
    counts = ClassCounts.from_labels(y, net.num_classes)

    # 4. imbalanced training on D_t
    soft_table = (
        soft_label_table(hierarchy, state.weights.beta, range(net.num_classes))
        if flags.use_mg
        else None
    )
    # the teacher is passed even without distillation: it fixes lambda
    teacher = state.teacher
    train_losses, terms = train_epochs(
        net,
        x,
        y,
        sgd=config.train,
        rng=rng.derive(STREAM_TRAIN),
        weights=state.weights,
        terms=flags.loss_terms(),
        counts=counts,
        teacher=teacher,
        soft_table=soft_table,
        n_new=n_new,
    )

    # 5. decoupled classifier retraining
    retrain_losses: list[float] = []
    if balanced is not None:
        retrain_losses = retrain_classifier(
            net,
            balanced,
            sgd=config.retrain,
            rng=rng.derive(STREAM_RETRAIN),
            hierarchy=hierarchy if flags.use_mg else None,
            beta=state.weights.beta,
            weights=state.weights,
        )

    # 6. memory and next teacher
    memory = admit_new_classes(state.memory, roster.train, rng.derive(STREAM_MEMORY))
    next_teacher = net.snapshot()

    # 7. evaluation over every seen class
    test_data = {**state.test_data, **roster.test}
    test_x, test_y = stack_classes(test_data)
    report = evaluate(net, test_x, test_y, phase=phase, n_old=n_old)
    accuracies = [*state.accuracies, report.accuracy]
    report = replace(
        report,
        average_incremental_accuracy=average_incremental_accuracy(accuracies),
        train_counts=tuple(int(c) for c in counts.counts),
        train_losses=tuple(train_losses),
        retrain_losses=tuple(retrain_losses),
        loss_terms=terms,
        hierarchy_groups=hierarchy.coarse_groups() if hierarchy is not None else {},
    )

    if config.checkpoint_dir is not None:
        checkpoint_dir = Path(config.checkpoint_dir)
        checkpoint_dir.mkdir(parents=True, exist_ok=True)
        net.save(checkpoint_dir / f"checkpoint_phase{phase}.npz")
        memory.save(checkpoint_dir / f"memory_phase{phase}.npz", rng=state.rng)

    logger.info(
        "phase %d done: accuracy %.4f (old %s, new %s)",
        phase, report.accuracy, report.old_accuracy, report.new_accuracy,
    )
    next_state = replace(
        state,
        phase=phase + 1,
        n_old=n_old + n_new,
        n_new=0,
        teacher=next_teacher,
        memory=memory,
        hierarchy=hierarchy,
        counts=counts,
        test_data=test_data,
        accuracies=accuracies,
    )
    return next_state, report
