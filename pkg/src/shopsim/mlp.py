"""Minimal fully-connected network: tanh hidden layers, linear output.

Plain numpy with hand-derived gradients; enough for the per-arm reward and
Q-value heads used by the neural policies.
"""

from __future__ import annotations

import numpy as np


class Mlp:
    """Feedforward net defined by ``sizes = (in, hidden..., out)``."""

    def __init__(self, sizes: tuple[int, ...], rng: np.random.Generator):
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._forward_cached(x)[0]

    def _forward_cached(self, x: np.ndarray):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        if x.shape[1] != self.sizes[0]:
            raise ValueError(f"expected input dim {self.sizes[0]}, got {x.shape[1]}")
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            activations.append(h)
        return h, activations

    def backward(self, x: np.ndarray, grad_out: np.ndarray):
        """Gradients of a scalar loss with upstream gradient ``grad_out``.

        Returns (weight_grads, bias_grads) matching the parameter lists.
        """
        _, acts = self._forward_cached(x)
        grad = np.atleast_2d(np.asarray(grad_out, dtype=np.float64))
        w_grads = [None] * len(self.weights)
        b_grads = [None] * len(self.biases)
        for i in range(len(self.weights) - 1, -1, -1):
            w_grads[i] = acts[i].T @ grad
            b_grads[i] = grad.sum(axis=0)
            if i > 0:
                grad = (grad @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return w_grads, b_grads

    def sgd_step(self, w_grads, b_grads, lr: float) -> None:
        for w, g in zip(self.weights, w_grads):
            w -= lr * g
        for b, g in zip(self.biases, b_grads):
            b -= lr * g

    # -- parameter (de)serialization ------------------------------------------

    def get_params(self) -> list[np.ndarray]:
        return [a.copy() for a in self.weights + self.biases]

    def set_params(self, params: list[np.ndarray]) -> None:
        n = len(self.weights)
        for i, w in enumerate(params[:n]):
            self.weights[i] = w.copy()
        for i, b in enumerate(params[n:]):
            self.biases[i] = b.copy()

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.sizes = self.sizes
        clone.weights = [w.copy() for w in self.weights]
        clone.biases = [b.copy() for b in self.biases]
        return clone


def squared_error_grad(pred: np.ndarray, target: np.ndarray,
                       arm_index: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error on the selected output head only.

    Returns (loss, grad wrt the network output matrix).
    """
    pred = np.atleast_2d(pred)
    rows = np.arange(pred.shape[0])
    diff = pred[rows, arm_index] - target
    grad = np.zeros_like(pred)
    grad[rows, arm_index] = 2.0 * diff / pred.shape[0]
    return float(np.mean(diff ** 2)), grad
