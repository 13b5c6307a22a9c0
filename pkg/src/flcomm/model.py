"""One-hidden-layer perceptron with manually derived gradients.

Parameters live in a single flat float64 vector (input->hidden weights,
hidden bias, hidden->output weights, output bias) so gradient transport,
quantization, and server updates operate on plain vectors. The softmax
cross-entropy loss is computed in log space; predicted labels break argmax
ties toward the lowest class index.
"""

from dataclasses import dataclass

import numpy as np


class MLP:
    """Shape descriptor plus pure functions over flat parameter vectors."""

    def __init__(self, n_in: int, n_hidden: int, n_out: int):
        if min(n_in, n_hidden, n_out) < 1:
            raise ValueError("layer sizes must be positive")
        self.n_in = n_in
        self.n_hidden = n_hidden
        self.n_out = n_out

    @property
    def dim(self) -> int:
        return self.n_in * self.n_hidden + self.n_hidden + self.n_hidden * self.n_out + self.n_out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """He-scaled normal weights, zero biases."""
        w1 = rng.normal(0.0, np.sqrt(2.0 / self.n_in), (self.n_in, self.n_hidden))
        w2 = rng.normal(0.0, np.sqrt(2.0 / self.n_hidden), (self.n_hidden, self.n_out))
        return np.concatenate(
            [w1.ravel(), np.zeros(self.n_hidden), w2.ravel(), np.zeros(self.n_out)]
        )

    def unpack(self, w: np.ndarray):
        """Views into the flat vector; no copies."""
        if w.size != self.dim:
            raise ValueError(f"parameter vector has {w.size} entries, expected {self.dim}")
        a = self.n_in * self.n_hidden
        b = a + self.n_hidden
        c = b + self.n_hidden * self.n_out
        w1 = w[:a].reshape(self.n_in, self.n_hidden)
        b1 = w[a:b]
        w2 = w[b:c].reshape(self.n_hidden, self.n_out)
        b2 = w[c:]
        return w1, b1, w2, b2

    def _forward(self, w, x, hidden_scale=None):
        w1, b1, w2, b2 = self.unpack(w)
        z1 = x @ w1 + b1
        a1 = np.maximum(z1, 0.0)
        if hidden_scale is not None:
            a1 = a1 * hidden_scale[None, :]
        z2 = a1 @ w2 + b2
        return z1, a1, z2

    def logits(self, w: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self._forward(w, x)[2]

    @staticmethod
    def _log_softmax(z):
        shifted = z - z.max(axis=1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))

    def loss(self, w: np.ndarray, x: np.ndarray, y: np.ndarray,
             hidden_scale: np.ndarray | None = None) -> float:
        z2 = self._forward(w, x, hidden_scale)[2]
        logp = self._log_softmax(z2)
        return float(-logp[np.arange(y.size), y].mean())

    def loss_and_grad(self, w: np.ndarray, x: np.ndarray, y: np.ndarray,
                      hidden_scale: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        """Mean cross-entropy over the batch and its gradient as a flat vector.

        ``hidden_scale`` applies a fixed per-unit scale to the hidden
        activations in both passes (used for hidden-layer feature dropout).
        """
        n = y.size
        w1, b1, w2, b2 = self.unpack(w)
        z1, a1, z2 = self._forward(w, x, hidden_scale)
        logp = self._log_softmax(z2)
        loss = float(-logp[np.arange(n), y].mean())

        dz2 = np.exp(logp)
        dz2[np.arange(n), y] -= 1.0
        dz2 /= n
        gw2 = a1.T @ dz2
        gb2 = dz2.sum(axis=0)
        da1 = dz2 @ w2.T
        if hidden_scale is not None:
            da1 = da1 * hidden_scale[None, :]
        dz1 = da1 * (z1 > 0.0)
        gw1 = x.T @ dz1
        gb1 = dz1.sum(axis=0)
        grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2])
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite training loss: learning rate or data pathology")
        return loss, grad

    def evaluate(self, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
        """(accuracy, mean cross-entropy) on a labeled set."""
        if y.size == 0:
            raise ValueError("empty evaluation set")
        z2 = self.logits(w, x)
        logp = self._log_softmax(z2)
        preds = np.argmax(z2, axis=1)  # ties resolve to the lowest index
        acc = float((preds == y).mean())
        loss = float(-logp[np.arange(y.size), y].mean())
        return acc, loss


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int


class Adam:
    """Standard Adam recurrence with bias correction."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def init_state(self, dim: int) -> AdamState:
        return AdamState(m=np.zeros(dim), v=np.zeros(dim), t=0)

    def step(self, state: AdamState, w: np.ndarray, g: np.ndarray) -> tuple[AdamState, np.ndarray]:
        t = state.t + 1
        m = self.beta1 * state.m + (1.0 - self.beta1) * g
        v = self.beta2 * state.v + (1.0 - self.beta2) * g * g
        m_hat = m / (1.0 - self.beta1**t)
        v_hat = v / (1.0 - self.beta2**t)
        w_new = w - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return AdamState(m=m, v=v, t=t), w_new
