"""
Dense numerics shared by every engine module.

All arithmetic is float64 numpy. Randomness comes from a single named
generator, numpy's PCG64, wrapped in ``Rng`` so that streams can be derived
per purpose and serialized alongside checkpoints.
"""

from typing import Any, Callable, Sequence

import numpy as np

from .exceptions import InvalidArgument


def as_matrix(data: Any, *, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float64 array"""
    matrix = np.asarray(data, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1)
    if matrix.ndim != 2:
        raise InvalidArgument(f"{name} must be 2-D, got shape {matrix.shape}")
    ensure_finite(matrix, name=name)
    return matrix


def ensure_finite(values: np.ndarray, *, name: str = "values") -> None:
    if not np.all(np.isfinite(values)):
        raise InvalidArgument(f"{name} contains NaN or Inf")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape[-1] != b.shape[0]:
        raise InvalidArgument(f"cannot multiply {a.shape} by {b.shape}")
    product = a @ b
    ensure_finite(product, name="product")
    return product


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """
    Numerically stable softmax along ``axis``.
    Works on a single logit vector or row-wise on a batch.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("softmax of an empty vector")
    ensure_finite(v, name="logits")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return exp / np.sum(exp, axis=axis, keepdims=True)


def log_softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("log_softmax of an empty vector")
    ensure_finite(v, name="logits")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


def finite_difference_grad(
    f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5
) -> np.ndarray:
    """
    Central-difference gradient estimate
    (f(x + h*e_i) - f(x - h*e_i)) / 2h for every coordinate of ``x``.
    """
    if h <= 0:
        raise InvalidArgument("finite difference step must be positive")
    x = np.array(x, dtype=np.float64)
    flat = x.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = float(f(x))
        flat[i] = original - h
        lower = float(f(x))
        flat[i] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise InvalidArgument(f"function is not finite around coordinate {i}")
        grad[i] = (upper - lower) / (2.0 * h)
    return grad.reshape(x.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Max absolute deviation scaled by the larger of the two gradients' max norms"""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


class Rng:
    """
    Seeded PCG64 stream.

    ``Rng(seed)`` produces the same sequence as ``numpy.random.default_rng(seed)``.
    ``derive`` gives independent, reproducible sub-streams keyed by integers
    (phase index, purpose code), so consumers never share one stream.
    """

    ALGORITHM = "PCG64"

    def __init__(self, seed: int, spawn_key: Sequence[int] = ()) -> None:
        if seed < 0:
            raise InvalidArgument("seed must be an unsigned integer")
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.PCG64(sequence))

    def derive(self, *keys: int) -> "Rng":
        return Rng(self.seed, self.spawn_key + tuple(keys))

    def random(self, size: int | tuple[int, ...] | None = None):
        return self.generator.random(size)

    def uniform(self, low: float, high: float, size) -> np.ndarray:
        return self.generator.uniform(low, high, size)

    def normal(self, loc: float = 0.0, scale: float = 1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low: int, high: int | None = None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice(self, n: int, size: int, *, replace: bool = False, p=None) -> np.ndarray:
        return self.generator.choice(n, size=size, replace=replace, p=p)

    def get_state(self) -> dict:
        """JSON-serializable full state"""
        return {
            "algorithm": self.ALGORITHM,
            "seed": self.seed,
            "spawn_key": list(self.spawn_key),
            "bit_generator": self.generator.bit_generator.state,
        }

    @classmethod
    def from_state(cls, state: dict) -> "Rng":
        if state.get("algorithm") != cls.ALGORITHM:
            raise InvalidArgument(f"unsupported generator {state.get('algorithm')!r}")
        rng = cls(state["seed"], state["spawn_key"])
        rng.generator.bit_generator.state = state["bit_generator"]
        return rng
