"""Synthetic non-i.i.d. classification tasks and the three loss families."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..numerics import RngStream

LOSS_KINDS = ("least_squares", "logistic", "mlp")


@dataclass(frozen=True)
class LossModel:
    """Flat-parameter model: layers in order, weights before biases.

    ``least_squares`` and ``logistic`` are a single affine layer
    (dim x classes weights, then classes biases) with squared error on
    one-hot targets or softmax cross-entropy. ``mlp`` adds one tanh hidden
    layer of width ``hidden``.
    """

    kind: str
    dim: int
    classes: int
    hidden: int = 16

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; choose from {LOSS_KINDS}")

    @property
    def size(self) -> int:
        if self.kind == "mlp":
            return self.dim * self.hidden + self.hidden + self.hidden * self.classes + self.classes
        return self.dim * self.classes + self.classes

    def unpack(self, w):
        d, c, h = self.dim, self.classes, self.hidden
        if self.kind == "mlp":
            i = 0
            W1 = w[i:i + d * h].reshape(d, h); i += d * h
            b1 = w[i:i + h]; i += h
            W2 = w[i:i + h * c].reshape(h, c); i += h * c
            b2 = w[i:i + c]
            return W1, b1, W2, b2
        return w[:d * c].reshape(d, c), w[d * c:]

    def initial(self, rng: RngStream | None = None) -> np.ndarray:
        """Zeros for the affine models; U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for the MLP."""
        if self.kind != "mlp":
            return np.zeros(self.size)
        if rng is None:
            raise ValueError("the mlp initializer needs a random stream")
        gen = rng.generator()
        d, c, h = self.dim, self.classes, self.hidden
        parts = [gen.uniform(-1, 1, d * h) / np.sqrt(d), np.zeros(h),
                 gen.uniform(-1, 1, h * c) / np.sqrt(h), np.zeros(c)]
        return np.concatenate(parts)

    def _forward(self, w, X):
        if self.kind == "mlp":
            W1, b1, W2, b2 = self.unpack(w)
            A = np.tanh(X @ W1 + b1)
            return A @ W2 + b2, A
        W, b = self.unpack(w)
        return X @ W + b, None

    def scores(self, w, X) -> np.ndarray:
        return self._forward(w, X)[0]

    def predict(self, w, X) -> np.ndarray:
        return np.argmax(self.scores(w, X), axis=1)

    def _output_residual(self, Z, y):
        """Per-sample loss and d(loss)/d(scores)."""
        n = len(y)
        if self.kind == "least_squares":
            R = Z.copy()
            R[np.arange(n), y] -= 1.0
            return 0.5 * np.sum(R ** 2, axis=1), R
        Zs = Z - Z.max(axis=1, keepdims=True)
        expZ = np.exp(Zs)
        sums = expZ.sum(axis=1)
        loss = np.log(sums) - Zs[np.arange(n), y]
        G = expZ / sums[:, None]
        G[np.arange(n), y] -= 1.0
        return loss, G

    def loss(self, w, X, y) -> float:
        Z, _ = self._forward(w, X)
        return float(self._output_residual(Z, y)[0].mean())

    def grad(self, w, X, y) -> np.ndarray:
        """Gradient of the mean loss over (X, y)."""
        n = len(y)
        Z, A = self._forward(w, X)
        _, G = self._output_residual(Z, y)
        G = G / n
        if self.kind == "mlp":
            _, _, W2, _ = self.unpack(w)
            gW2 = A.T @ G
            gb2 = G.sum(axis=0)
            D = (G @ W2.T) * (1.0 - A ** 2)
            gW1 = X.T @ D
            gb1 = D.sum(axis=0)
            return np.concatenate([gW1.ravel(), gb1, gW2.ravel(), gb2])
        return np.concatenate([(X.T @ G).ravel(), G.sum(axis=0)])

    def per_sample_grads(self, w, X, y) -> np.ndarray:
        """n x size matrix of individual sample gradients."""
        if self.kind == "mlp":
            return np.stack([self.grad(w, X[i:i + 1], y[i:i + 1]) for i in range(len(y))])
        Z, _ = self._forward(w, X)
        _, G = self._output_residual(Z, y)
        gW = (X[:, :, None] * G[:, None, :]).reshape(len(y), -1)
        return np.hstack([gW, G])


@dataclass
class FederatedTask:
    model: LossModel
    device_X: list[np.ndarray]
    device_y: list[np.ndarray]
    test_X: np.ndarray
    test_y: np.ndarray
    label_sets: list[tuple[int, ...]]
    class_means: np.ndarray

    def __post_init__(self):
        if len(self.device_X) != len(self.device_y) or not self.device_X:
            raise ValueError("need matching, non-empty per-device datasets")
        if any(len(y) == 0 for y in self.device_y):
            raise ValueError("every device needs at least one sample")

    @property
    def K(self) -> int:
        return len(self.device_X)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(y) for y in self.device_y])

    @cached_property
    def _pool(self):
        return np.vstack(self.device_X), np.concatenate(self.device_y)

    def pooled(self) -> tuple[np.ndarray, np.ndarray]:
        return self._pool

    def global_loss(self, w) -> float:
        """Sample-weighted average of the device losses."""
        X, y = self.pooled()
        return self.model.loss(w, X, y)

    def global_grad(self, w) -> np.ndarray:
        X, y = self.pooled()
        return self.model.grad(w, X, y)

    def accuracy(self, w) -> float:
        return float(np.mean(self.model.predict(w, self.test_X) == self.test_y))


def _assign_labels(sizes: np.ndarray, classes: int, skew: int) -> list[tuple[int, ...]]:
    """Give each device ``skew`` distinct classes, balancing class totals.

    Devices are processed largest first and take the classes with the lowest
    running sample total (ties to the lowest class index).
    """
    totals = np.zeros(classes)
    labels: list[tuple[int, ...]] = [()] * len(sizes)
    for k in sorted(range(len(sizes)), key=lambda k: (-sizes[k], k)):
        chosen = tuple(sorted(np.lexsort((np.arange(classes), totals))[:skew].tolist()))
        totals[list(chosen)] += sizes[k] / skew
        labels[k] = chosen
    return labels


def generate_synthetic_task(rng: RngStream, K: int, classes: int = 10, dim: int = 20,
                            samples_per_device: int = 100, skew: int = 2,
                            loss: str = "logistic", hidden: int = 16,
                            separation: float = 1.0, test_samples: int = 2000,
                            size_range: float = 4.0) -> FederatedTask:
    """Gaussian class clusters split non-i.i.d. across devices.

    Class means are N(0, separation^2 I) and samples add N(0, I) noise. Each
    device holds samples from exactly ``skew`` classes; its size is drawn
    log-uniformly from [n / sqrt(size_range), n * sqrt(size_range)].
    """
    if classes < 2 or dim < 1 or K < 1:
        raise ValueError("need classes >= 2, dim >= 1, K >= 1")
    if not 1 <= skew <= classes:
        raise ValueError(f"skew must lie in [1, {classes}], got {skew}")
    gen_means = rng.substream(0).generator()
    class_means = separation * gen_means.standard_normal((classes, dim))

    gen_sizes = rng.substream(1).generator()
    log_span = np.log(size_range) / 2
    sizes = np.maximum(skew, np.round(
        samples_per_device * np.exp(gen_sizes.uniform(-log_span, log_span, K)))).astype(int)
    label_sets = _assign_labels(sizes, classes, skew)

    device_X, device_y = [], []
    for k in range(K):
        gen = rng.substream(2, k).generator()
        per_class = np.full(skew, sizes[k] // skew)
        per_class[: sizes[k] % skew] += 1
        y = np.repeat(np.array(label_sets[k]), per_class)
        X = class_means[y] + gen.standard_normal((len(y), dim))
        order = gen.permutation(len(y))
        device_X.append(X[order])
        device_y.append(y[order])

    gen_test = rng.substream(3).generator()
    test_y = np.arange(test_samples) % classes
    test_X = class_means[test_y] + gen_test.standard_normal((test_samples, dim))
    model = LossModel(loss, dim, classes, hidden)
    return FederatedTask(model, device_X, device_y, test_X, test_y, label_sets, class_means)
