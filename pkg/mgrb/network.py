"""
Trainable MLP with an expandable linear classifier.

The extractor is a stack of fully connected layers with a rectifier; the
classifier maps feature_dim -> N and grows by appending rows as classes
arrive. Backpropagation is exact; the optimizer is SGD with momentum and
weight decay.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import InvalidArgument
from .numerics import Rng, as_matrix

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "mgrb-network"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 2e-4
    epochs: int = 60
    batch_size: int = 64
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise InvalidArgument("learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InvalidArgument("weight_decay must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgument("epochs must be >= 0 and batch_size >= 1")
        if not 0 < self.gamma <= 1:
            raise InvalidArgument("gamma must be in (0, 1]")

    def lr_at(self, epoch: int) -> float:
        """Step schedule: multiply by gamma at every milestone already passed"""
        passed = sum(1 for milestone in self.milestones if epoch >= milestone)
        return self.learning_rate * self.gamma**passed


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.weight.copy(), self.bias.copy())


@dataclass
class ForwardTrace:
    inputs: list[np.ndarray] = field(default_factory=list)
    preactivations: list[np.ndarray] = field(default_factory=list)
    features: np.ndarray | None = None


def _propagate(
    extractor: Sequence[DenseLayer], classifier: DenseLayer, batch: np.ndarray
) -> tuple[np.ndarray, ForwardTrace]:
    trace = ForwardTrace()
    hidden = batch
    for layer in extractor:
        trace.inputs.append(hidden)
        pre = hidden @ layer.weight.T + layer.bias
        trace.preactivations.append(pre)
        hidden = np.maximum(pre, 0.0)
    trace.features = hidden
    logits = hidden @ classifier.weight.T + classifier.bias
    return logits, trace


class Network:
    """Feature extractor plus expandable classifier"""

    def __init__(
        self,
        input_dim: int,
        extractor: Sequence[DenseLayer],
        classifier: DenseLayer,
        class_labels: Sequence[int] | None = None,
    ) -> None:
        self.input_dim = int(input_dim)
        self.extractor = list(extractor)
        self.classifier = classifier
        expected = self.input_dim
        for layer in self.extractor:
            if layer.weight.shape[1] != expected:
                raise InvalidArgument("extractor layer sizes do not chain")
            expected = layer.weight.shape[0]
        if classifier.weight.shape[1] != expected:
            raise InvalidArgument("classifier input width does not match feature_dim")
        self.class_labels = (
            list(class_labels)
            if class_labels is not None
            else list(range(classifier.weight.shape[0]))
        )
        self._velocity = [np.zeros_like(p) for p in self.parameters()]
        self._trace: ForwardTrace | None = None

    @classmethod
    def build(
        cls,
        input_dim: int,
        hidden_sizes: Sequence[int],
        rng: Rng,
        num_classes: int = 0,
    ) -> "Network":
        """He-uniform extractor, empty classifier expanded to ``num_classes``"""
        extractor = []
        fan_in = input_dim
        for width in hidden_sizes:
            bound = np.sqrt(6.0 / fan_in)
            extractor.append(
                DenseLayer(rng.uniform(-bound, bound, (width, fan_in)), np.zeros(width))
            )
            fan_in = width
        classifier = DenseLayer(np.zeros((0, fan_in)), np.zeros(0))
        net = cls(input_dim, extractor, classifier, [])
        if num_classes:
            net.expand_classifier(num_classes, rng)
        return net

    @property
    def feature_dim(self) -> int:
        return self.classifier.weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.classifier.weight.shape[0]

    @property
    def hidden_sizes(self) -> list[int]:
        return [layer.weight.shape[0] for layer in self.extractor]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.extractor:
            params.extend([layer.weight, layer.bias])
        params.extend([self.classifier.weight, self.classifier.bias])
        return params

    def extractor_parameters(self) -> list[np.ndarray]:
        return self.parameters()[:-2]

    def classifier_parameters(self) -> list[np.ndarray]:
        return self.parameters()[-2:]

    def _check_batch(self, batch) -> np.ndarray:
        batch = as_matrix(batch, name="batch")
        if batch.shape[1] != self.input_dim:
            raise InvalidArgument(
                f"batch has {batch.shape[1]} columns, network expects {self.input_dim}"
            )
        return batch

    def forward(self, batch) -> np.ndarray:
        batch = self._check_batch(batch)
        logits, self._trace = _propagate(self.extractor, self.classifier, batch)
        return logits

    def extract_features(self, batch) -> np.ndarray:
        batch = self._check_batch(batch)
        _, trace = _propagate(self.extractor, self.classifier, batch)
        return trace.features

    def expand_classifier(
        self, new_class_count: int, rng: Rng, labels: Sequence[int] | None = None
    ) -> "Network":
        """
        Append ``new_class_count`` rows to the classifier. Existing rows are
        left untouched; new rows are U(-s, s) with s = 1/sqrt(feature_dim),
        new biases zero.
        """
        if new_class_count < 1:
            raise InvalidArgument("expand_classifier needs at least one new class")
        if labels is not None and len(labels) != new_class_count:
            raise InvalidArgument("labels must match new_class_count")
        scale = 1.0 / np.sqrt(self.feature_dim)
        rows = rng.uniform(-scale, scale, (new_class_count, self.feature_dim))
        self.classifier = DenseLayer(
            np.vstack([self.classifier.weight, rows]),
            np.concatenate([self.classifier.bias, np.zeros(new_class_count)]),
        )
        start = self.num_classes - new_class_count
        self.class_labels.extend(
            labels if labels is not None else range(start, self.num_classes)
        )
        self._velocity[-2] = np.vstack(
            [self._velocity[-2], np.zeros((new_class_count, self.feature_dim))]
        )
        self._velocity[-1] = np.concatenate([self._velocity[-1], np.zeros(new_class_count)])
        logger.debug("classifier expanded to %d classes", self.num_classes)
        return self

    def gradients(self, loss_grad_wrt_logits) -> list[np.ndarray]:
        """Parameter gradients for the most recent ``forward`` call"""
        if self._trace is None:
            raise InvalidArgument("gradients requested before forward")
        grad = np.asarray(loss_grad_wrt_logits, dtype=np.float64)
        expected = (self._trace.features.shape[0], self.num_classes)
        if grad.shape != expected:
            raise InvalidArgument(f"gradient shape {grad.shape} != logits shape {expected}")

        grads: list[np.ndarray] = [grad.T @ self._trace.features, grad.sum(axis=0)]
        upstream = grad @ self.classifier.weight
        for index in range(len(self.extractor) - 1, -1, -1):
            layer = self.extractor[index]
            local = upstream * (self._trace.preactivations[index] > 0)
            grads = [local.T @ self._trace.inputs[index], local.sum(axis=0)] + grads
            upstream = local @ layer.weight
        return grads

    def backward_and_step(
        self,
        loss_grad_wrt_logits,
        optimizer: SgdConfig,
        *,
        learning_rate: float | None = None,
        freeze_extractor: bool = False,
    ) -> "Network":
        """
        One SGD step with momentum and coupled weight decay:
        v <- momentum * v + (g + wd * w); w <- w - lr * v.
        With ``freeze_extractor`` only the classifier is touched.
        """
        lr = optimizer.learning_rate if learning_rate is None else learning_rate
        grads = self.gradients(loss_grad_wrt_logits)
        params = self.parameters()
        first = len(params) - 2 if freeze_extractor else 0
        for i in range(first, len(params)):
            step = grads[i] + optimizer.weight_decay * params[i]
            self._velocity[i] = optimizer.momentum * self._velocity[i] + step
            params[i] -= lr * self._velocity[i]
        return self

    def reset_optimizer(self) -> None:
        self._velocity = [np.zeros_like(p) for p in self.parameters()]

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.parameters()])

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        offset = 0
        for param in self.parameters():
            size = param.size
            param[...] = flat[offset : offset + size].reshape(param.shape)
            offset += size

    def copy(self) -> "Network":
        clone = Network(
            self.input_dim,
            [layer.copy() for layer in self.extractor],
            self.classifier.copy(),
            self.class_labels,
        )
        return clone

    def snapshot(self) -> "TeacherSnapshot":
        return TeacherSnapshot(self)

    def save(self, path: str | Path) -> None:
        """
        Checkpoint layout (numpy .npz, no pickling):
          header            JSON string: format, version, input_dim,
                            hidden_sizes, class_labels
          extractor_<i>_w   (out, in) weights of extractor layer i
          extractor_<i>_b   (out,) biases
          classifier_w      (N, feature_dim)
          classifier_b      (N,)
        """
        header = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "hidden_sizes": self.hidden_sizes,
            "class_labels": [int(c) for c in self.class_labels],
        }
        arrays = {"header": np.array(json.dumps(header, sort_keys=True))}
        for i, layer in enumerate(self.extractor):
            arrays[f"extractor_{i}_w"] = layer.weight
            arrays[f"extractor_{i}_b"] = layer.bias
        arrays["classifier_w"] = self.classifier.weight
        arrays["classifier_b"] = self.classifier.bias
        with open(path, "wb") as handle:
            np.savez(handle, **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Network":
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(str(archive["header"]))
            if header.get("format") != CHECKPOINT_FORMAT:
                raise InvalidArgument(f"{path} is not a network checkpoint")
            if header.get("version") != CHECKPOINT_VERSION:
                raise InvalidArgument(f"unsupported checkpoint version {header.get('version')}")
            extractor = [
                DenseLayer(archive[f"extractor_{i}_w"].copy(), archive[f"extractor_{i}_b"].copy())
                for i in range(len(header["hidden_sizes"]))
            ]
            classifier = DenseLayer(archive["classifier_w"].copy(), archive["classifier_b"].copy())
        return cls(header["input_dim"], extractor, classifier, header["class_labels"])


class TeacherSnapshot:
    """Frozen copy of a Network; its arrays are read-only"""

    def __init__(self, net: Network) -> None:
        self.input_dim = net.input_dim
        self.extractor = [layer.copy() for layer in net.extractor]
        self.classifier = net.classifier.copy()
        self.class_labels = tuple(net.class_labels)
        for layer in [*self.extractor, self.classifier]:
            layer.weight.flags.writeable = False
            layer.bias.flags.writeable = False

    @property
    def num_classes(self) -> int:
        return self.classifier.weight.shape[0]

    def _check_batch(self, batch) -> np.ndarray:
        batch = as_matrix(batch, name="batch")
        if batch.shape[1] != self.input_dim:
            raise InvalidArgument(
                f"batch has {batch.shape[1]} columns, teacher expects {self.input_dim}"
            )
        return batch

    def forward(self, batch) -> np.ndarray:
        logits, _ = _propagate(self.extractor, self.classifier, self._check_batch(batch))
        return logits

    def extract_features(self, batch) -> np.ndarray:
        _, trace = _propagate(self.extractor, self.classifier, self._check_batch(batch))
        return trace.features

    def fingerprint(self) -> bytes:
        return b"".join(
            array.tobytes()
            for layer in [*self.extractor, self.classifier]
            for array in (layer.weight, layer.bias)
        )
