"""
Training objectives with analytic gradients with respect to the logits.

Every loss is averaged over the batch and returns a ``LossBundle``. The
combined objective is

    L = lambda * L_cls + alpha * (1 - lambda) * L_kd + L_mg

with L_cls the class-balanced (or plain) cross-entropy, L_kd the tempered
distillation over the old classes and L_mg the KL divergence to the
multi-granularity soft labels. Without a teacher (first phase) it reduces
to L_cls + L_mg.
"""

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import InvalidArgument
from .hierarchy import LabelDistribution
from .numerics import as_matrix, log_softmax, softmax


@dataclass(frozen=True)
class LossBundle:
    value: float
    grad_wrt_logits: np.ndarray
    terms: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.isfinite(self.value) or not np.all(np.isfinite(self.grad_wrt_logits)):
            raise InvalidArgument("loss produced a non-finite value or gradient")


@dataclass(frozen=True)
class ClassCounts:
    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or counts.size == 0:
            raise InvalidArgument("class counts must be a non-empty vector")
        if np.any(counts < 1):
            raise InvalidArgument("every registered class needs at least one sample")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_labels(cls, labels: Sequence[int], num_classes: int) -> "ClassCounts":
        return cls(np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes))

    @property
    def num_classes(self) -> int:
        return int(self.counts.size)

    @property
    def gamma(self) -> float:
        return (self.num_classes - 1) / self.num_classes

    def weights(self) -> np.ndarray:
        """(1 - gamma) / (1 - gamma ** n_i) with gamma = (N - 1) / N"""
        gamma = self.gamma
        return (1.0 - gamma) / (1.0 - np.power(gamma, self.counts.astype(np.float64)))


@dataclass(frozen=True)
class CombineWeights:
    beta: float = 20.0
    alpha: float = 1.0
    temperature: float = 2.0
    lam: float | None = None
    swap_lambda: bool = False

    def __post_init__(self) -> None:
        if self.beta <= 0 or self.alpha <= 0 or self.temperature <= 0:
            raise InvalidArgument("beta, alpha and temperature must be > 0")
        if self.lam is not None and not 0 <= self.lam <= 1:
            raise InvalidArgument("lambda must be in [0, 1]")

    def resolve_lambda(self, n_old: int, n_new: int) -> float:
        if self.lam is not None:
            return self.lam
        return n_old / (n_old + n_new)


@dataclass(frozen=True)
class LossTerms:
    """Which terms of the combined objective are active"""

    use_cls: bool = True
    use_cb: bool = True
    use_kd: bool = True
    use_mg: bool = True


def _check_targets(targets, rows: int, width: int) -> np.ndarray:
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.size != rows:
        raise InvalidArgument(f"{targets.size} targets for {rows} logit rows")
    if np.any(targets < 0) or np.any(targets >= width):
        raise InvalidArgument(f"target outside [0, {width})")
    return targets


def _weighted_cross_entropy(logits, targets, sample_weights) -> LossBundle:
    rows = logits.shape[0]
    log_q = log_softmax(logits, axis=1)
    picked = log_q[np.arange(rows), targets]
    value = float(-(sample_weights * picked).sum() / rows)
    grad = np.exp(log_q)
    grad[np.arange(rows), targets] -= 1.0
    grad *= sample_weights[:, None] / rows
    return LossBundle(value, grad)


def cross_entropy(logits, targets) -> LossBundle:
    logits = as_matrix(logits, name="logits")
    targets = _check_targets(targets, *logits.shape)
    return _weighted_cross_entropy(logits, targets, np.ones(logits.shape[0]))


def class_balanced(logits, targets, counts: ClassCounts) -> LossBundle:
    """Cross-entropy weighted per sample by its ground-truth class's balanced weight"""
    logits = as_matrix(logits, name="logits")
    targets = _check_targets(targets, *logits.shape)
    if counts.num_classes != logits.shape[1]:
        raise InvalidArgument(
            f"counts cover {counts.num_classes} classes, logits have {logits.shape[1]}"
        )
    return _weighted_cross_entropy(logits, targets, counts.weights()[targets])


def distillation(student_logits, teacher_logits, T: float, n_old: int) -> LossBundle:
    """
    Soft cross-entropy between the tempered teacher distribution and the
    student's first ``n_old`` columns, both softmaxed over the old classes.
    No gradient reaches the teacher.
    """
    if n_old < 1:
        raise InvalidArgument("distillation needs a teacher phase (n_old >= 1)")
    if T <= 0:
        raise InvalidArgument("temperature must be > 0")
    student = as_matrix(student_logits, name="student logits")
    teacher = as_matrix(teacher_logits, name="teacher logits")
    if teacher.shape[1] != n_old:
        raise InvalidArgument(f"teacher width {teacher.shape[1]} != n_old {n_old}")
    if student.shape[1] < n_old or student.shape[0] != teacher.shape[0]:
        raise InvalidArgument("student logits do not cover the teacher's classes")

    rows = student.shape[0]
    p = softmax(teacher / T, axis=1)
    log_q = log_softmax(student[:, :n_old] / T, axis=1)
    value = float(-(p * log_q).sum() / rows)
    grad = np.zeros_like(student)
    grad[:, :n_old] = (np.exp(log_q) - p) / (T * rows)
    return LossBundle(value, grad)


def _soft_target_matrix(soft_targets, rows: int, width: int) -> np.ndarray:
    if isinstance(soft_targets, np.ndarray):
        matrix = np.asarray(soft_targets, dtype=np.float64)
    else:
        matrix = np.stack(
            [t.values if isinstance(t, LabelDistribution) else np.asarray(t) for t in soft_targets]
        ).astype(np.float64)
    if matrix.shape != (rows, width):
        raise InvalidArgument(f"soft targets shape {matrix.shape} != logits shape {(rows, width)}")
    if np.any(matrix < 0) or np.any(np.abs(matrix.sum(axis=1) - 1.0) > 1e-6):
        raise InvalidArgument("soft targets must be probability distributions")
    return matrix


def multi_granularity(logits, soft_targets) -> LossBundle:
    """KL(Y || softmax(logits)) summed over classes, averaged over the batch"""
    logits = as_matrix(logits, name="logits")
    rows, width = logits.shape
    y = _soft_target_matrix(soft_targets, rows, width)
    log_q = log_softmax(logits, axis=1)
    positive = y > 0
    log_y = np.zeros_like(y)
    log_y[positive] = np.log(y[positive])
    value = float((y * (log_y - log_q)).sum() / rows)
    grad = (np.exp(log_q) - y) / rows
    return LossBundle(value, grad)


def combined(
    logits,
    teacher_logits,
    targets,
    counts: ClassCounts | None,
    soft_targets,
    w: CombineWeights,
    terms: LossTerms = LossTerms(),
    n_new: int | None = None,
) -> LossBundle:
    """
    Weighted sum of the active terms. ``teacher_logits`` is None in the
    first phase, where lambda is treated as 1 and distillation is skipped.
    ``n_new`` is the number of classes added this phase (defaults to every
    column the teacher does not cover).
    """
    logits = as_matrix(logits, name="logits")
    width = logits.shape[1]
    n_old = 0 if teacher_logits is None else np.asarray(teacher_logits).shape[-1]
    if n_old >= width and teacher_logits is not None:
        raise InvalidArgument("student must have more classes than its teacher")
    if teacher_logits is None:
        cls_weight, kd_weight = 1.0, 0.0
    else:
        lam = w.resolve_lambda(n_old, width - n_old if n_new is None else n_new)
        if w.swap_lambda:
            cls_weight, kd_weight = 1.0 - lam, w.alpha * lam
        else:
            cls_weight, kd_weight = lam, w.alpha * (1.0 - lam)

    value = 0.0
    grad = np.zeros_like(logits)
    parts: dict[str, float] = {}

    if terms.use_cls:
        if terms.use_cb:
            if counts is None:
                raise InvalidArgument("class-balanced loss needs class counts")
            bundle = class_balanced(logits, targets, counts)
            parts["cb"] = bundle.value
        else:
            bundle = cross_entropy(logits, targets)
            parts["ce"] = bundle.value
        value += cls_weight * bundle.value
        grad += cls_weight * bundle.grad_wrt_logits

    if terms.use_kd and teacher_logits is not None:
        bundle = distillation(logits, teacher_logits, w.temperature, n_old)
        parts["kd"] = bundle.value
        value += kd_weight * bundle.value
        grad += kd_weight * bundle.grad_wrt_logits

    if terms.use_mg:
        if soft_targets is None:
            raise InvalidArgument("multi-granularity loss needs soft targets")
        bundle = multi_granularity(logits, soft_targets)
        parts["mg"] = bundle.value
        value += bundle.value
        grad += bundle.grad_wrt_logits

    return LossBundle(value, grad, parts)
