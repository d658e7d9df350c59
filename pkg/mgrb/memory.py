"""
Exemplar memory for old classes and the balanced retraining set.

Exemplars are chosen uniformly at random. In ``total`` mode the budget K is
shared: every class gets floor(K / classes) slots, the remainder going to
the lowest class indices, and stored classes are down-sampled at random
when new classes arrive.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from .exceptions import InvalidArgument
from .numerics import Rng

logger = logging.getLogger(__name__)

BUDGET_MODES = ("per_class", "total")
MEMORY_FORMAT = "mgrb-memory"
MEMORY_VERSION = 1
# one exemplar for the balanced retraining set, at least one left to train on
MIN_EXEMPLARS = 2


@dataclass(frozen=True)
class SelectionRecord:
    phase_event: str
    class_id: int
    kept: tuple[int, ...]


@dataclass(frozen=True)
class ExemplarMemory:
    budget_mode: str
    budget: int
    store: Mapping[int, np.ndarray] = field(default_factory=dict)
    trace: tuple[SelectionRecord, ...] = ()

    def __post_init__(self) -> None:
        if self.budget_mode not in BUDGET_MODES:
            raise InvalidArgument(f"budget_mode must be one of {BUDGET_MODES}")
        if self.budget < MIN_EXEMPLARS:
            raise InvalidArgument(f"memory budget must be >= {MIN_EXEMPLARS}")

    @property
    def classes(self) -> list[int]:
        return sorted(self.store)

    @property
    def total(self) -> int:
        return sum(len(samples) for samples in self.store.values())

    def counts(self) -> dict[int, int]:
        return {class_id: len(self.store[class_id]) for class_id in self.classes}

    def check_capacity(self, num_classes: int) -> None:
        """A total budget must leave every class ``MIN_EXEMPLARS`` slots"""
        if self.budget_mode == "total" and self.budget < MIN_EXEMPLARS * num_classes:
            raise InvalidArgument(
                f"total memory budget {self.budget} is too small for {num_classes} classes; "
                f"need at least {MIN_EXEMPLARS * num_classes}"
            )

    def quotas(self, class_ids: list[int]) -> dict[int, int]:
        if self.budget_mode == "per_class":
            return {class_id: self.budget for class_id in class_ids}
        self.check_capacity(len(class_ids))
        base, remainder = divmod(self.budget, len(class_ids))
        return {
            class_id: base + (1 if position < remainder else 0)
            for position, class_id in enumerate(sorted(class_ids))
        }

    def save(self, path: str | Path, rng: Rng | None = None) -> None:
        header = {
            "format": MEMORY_FORMAT,
            "version": MEMORY_VERSION,
            "budget_mode": self.budget_mode,
            "budget": self.budget,
            "classes": self.classes,
            "trace": [
                {"event": r.phase_event, "class_id": r.class_id, "kept": list(r.kept)}
                for r in self.trace
            ],
            "rng": rng.get_state() if rng is not None else None,
        }
        arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
        for class_id in self.classes:
            arrays[f"class_{class_id}"] = self.store[class_id]
        with open(path, "wb") as handle:
            np.savez(handle, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> tuple["ExemplarMemory", Rng | None]:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            if header.get("format") != MEMORY_FORMAT or header.get("version") != MEMORY_VERSION:
                raise InvalidArgument(f"{path} is not a supported memory snapshot")
            store = {c: archive[f"class_{c}"].copy() for c in header["classes"]}
        trace = tuple(
            SelectionRecord(r["event"], r["class_id"], tuple(r["kept"])) for r in header["trace"]
        )
        rng = Rng.from_state(header["rng"]) if header["rng"] else None
        return cls(header["budget_mode"], header["budget"], store, trace), rng


@dataclass(frozen=True)
class BalancedSet:
    samples: Mapping[int, np.ndarray]
    provenance: Mapping[int, str]

    @property
    def per_class(self) -> int:
        counts = {len(v) for v in self.samples.values()}
        return counts.pop() if len(counts) == 1 else -1

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return stack_classes(self.samples)


def stack_classes(data: Mapping[int, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Concatenate per-class sample sets into (x, y), classes in index order"""
    classes = sorted(data)
    if not classes:
        raise InvalidArgument("no samples to stack")
    x = np.concatenate([np.asarray(data[c]) for c in classes])
    y = np.concatenate([np.full(len(data[c]), c, dtype=np.int64) for c in classes])
    return x, y


def _sample(samples: np.ndarray, size: int, rng: Rng) -> tuple[np.ndarray, tuple[int, ...]]:
    if size >= len(samples):
        return samples.copy(), tuple(range(len(samples)))
    kept = np.sort(rng.choice(len(samples), size, replace=False))
    return samples[kept], tuple(int(i) for i in kept)


def admit_new_classes(
    mem: ExemplarMemory, new_data: Mapping[int, np.ndarray], rng: Rng
) -> ExemplarMemory:
    """Store random exemplars of the new classes, shrinking old ones in total mode"""
    for class_id, samples in new_data.items():
        if class_id in mem.store:
            raise InvalidArgument(f"class {class_id} is already in memory")
        if len(samples) == 0:
            raise InvalidArgument(f"class {class_id} has no samples to admit")

    quotas = mem.quotas(mem.classes + sorted(new_data))
    store: dict[int, np.ndarray] = {}
    trace = list(mem.trace)
    for class_id in mem.classes:
        kept, indices = _sample(mem.store[class_id], quotas[class_id], rng)
        if len(kept) < len(mem.store[class_id]):
            trace.append(SelectionRecord("evict", class_id, indices))
        store[class_id] = kept
    for class_id in sorted(new_data):
        samples = np.asarray(new_data[class_id], dtype=np.float64)
        kept, indices = _sample(samples, quotas[class_id], rng)
        trace.append(SelectionRecord("admit", class_id, indices))
        store[class_id] = kept

    updated = replace(mem, store=store, trace=tuple(trace))
    logger.info(
        "memory holds %d exemplars over %d classes (%s budget %d)",
        updated.total, len(store), mem.budget_mode, mem.budget,
    )
    return updated


def build_balanced_set(
    mem: ExemplarMemory,
    new_data: Mapping[int, np.ndarray],
    ratio: float,
    rng: Rng,
) -> tuple[dict[int, np.ndarray], BalancedSet]:
    """
    Hold out (1 - ratio) of every class (memory exemplars for old classes,
    fresh data for new ones) before training. The held-out parts are
    truncated to the smallest one so the set is balanced; the surplus goes
    back to the training split.
    """
    if not 0 < ratio < 1:
        raise InvalidArgument("train/retrain ratio must be in (0, 1)")
    sources: dict[int, tuple[np.ndarray, str]] = {c: (mem.store[c], "memory") for c in mem.classes}
    for class_id, samples in new_data.items():
        sources[class_id] = (np.asarray(samples, dtype=np.float64), "new")

    shuffled: dict[int, np.ndarray] = {}
    held_counts: dict[int, int] = {}
    for class_id in sorted(sources):
        samples, _ = sources[class_id]
        if len(samples) == 0:
            raise InvalidArgument(f"class {class_id} is empty")
        held = len(samples) - math.floor(len(samples) * ratio + 1e-9)
        if held < 1:
            raise InvalidArgument(
                f"class {class_id} has {len(samples)} samples, too few to hold out a "
                f"retraining share at ratio {ratio}; use a larger class or a smaller ratio"
            )
        shuffled[class_id] = samples[rng.permutation(len(samples))]
        held_counts[class_id] = held

    per_class = min(held_counts.values())
    for class_id, samples in shuffled.items():
        if len(samples) <= per_class:
            raise InvalidArgument(f"class {class_id} leaves no samples for training at ratio {ratio}")
    train_split = {c: shuffled[c][per_class:] for c in shuffled}
    balanced = BalancedSet(
        samples={c: shuffled[c][:per_class] for c in shuffled},
        provenance={c: sources[c][1] for c in shuffled},
    )
    logger.debug("balanced set: %d per class over %d classes", per_class, len(shuffled))
    return train_split, balanced
