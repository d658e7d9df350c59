from typing import Sequence


def average_incremental_accuracy(accuracies: Sequence[float]) -> float:
    """
    Mean of the per-phase accuracies, initial phase included.
    Scale-agnostic: fractions in, fraction out; percentages in, percentage out.
    """
    if not accuracies:
        raise ValueError("average incremental accuracy needs at least one phase")
    return float(sum(accuracies) / len(accuracies))


def forgetting(per_class_history: Sequence[Sequence[float | None]]) -> list[float | None]:
    """
    Per class: best accuracy reached in any earlier phase minus the final
    accuracy. Classes seen only in the last phase get None.
    """
    if not per_class_history:
        return []
    final = per_class_history[-1]
    result: list[float | None] = []
    for class_id, last in enumerate(final):
        earlier = [
            phase[class_id]
            for phase in per_class_history[:-1]
            if class_id < len(phase) and phase[class_id] is not None
        ]
        if not earlier or last is None:
            result.append(None)
        else:
            result.append(max(earlier) - last)
    return result


def accuracy_deltas(
    first: Sequence[float | None], second: Sequence[float | None]
) -> list[float | None]:
    """Signed per-class difference second - first"""
    if len(first) != len(second):
        raise ValueError("per-class accuracy lists cover different class sets")
    return [
        None if a is None or b is None else b - a
        for a, b in zip(first, second)
    ]
