"""Neural building blocks on top of the autodiff engine.

All blocks register their parameters in a shared ParameterStore under a
name prefix, so checkpoints are flat name->array maps.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor, concat, dropout
from .params import ParameterStore


def _init(rng: np.random.Generator, shape, scale=None) -> np.ndarray:
    if scale is None:
        fan_in = shape[0] if len(shape) > 1 else shape[0]
        scale = 1.0 / np.sqrt(max(fan_in, 1))
    return rng.uniform(-scale, scale, size=shape)


class Linear:
    def __init__(self, store: ParameterStore, prefix: str, n_in: int, n_out: int,
                 rng: np.random.Generator):
        self.w = store.add(f"{prefix}.w", _init(rng, (n_in, n_out)))
        self.b = store.add(f"{prefix}.b", np.zeros((1, n_out)))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.w + self.b


class MLP:
    """Fully-connected stack with ReLU between layers, optional dropout on hiddens."""

    def __init__(self, store, prefix, sizes, rng, dropout_rate=0.0):
        self.layers = [Linear(store, f"{prefix}.fc{i}", sizes[i], sizes[i + 1], rng)
                       for i in range(len(sizes) - 1)]
        self.dropout_rate = dropout_rate

    def __call__(self, x: Tensor, rng: np.random.Generator | None = None,
                 training: bool = False) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = x.relu()
                if training and self.dropout_rate > 0.0:
                    x = dropout(x, self.dropout_rate, rng, training)
        return x


class LSTMLayer:
    """Single LSTM layer over (1, n_in) row-vector inputs."""

    def __init__(self, store, prefix, n_in, n_hidden, rng):
        self.n_hidden = n_hidden
        self.wx = store.add(f"{prefix}.wx", _init(rng, (n_in, 4 * n_hidden)))
        self.wh = store.add(f"{prefix}.wh", _init(rng, (n_hidden, 4 * n_hidden)))
        self.b = store.add(f"{prefix}.b", np.zeros((1, 4 * n_hidden)))

    def step(self, x: Tensor, h: Tensor, c: Tensor):
        n = self.n_hidden
        gates = x @ self.wx + h @ self.wh + self.b
        i = gates[:, 0 * n:1 * n].sigmoid()
        f = gates[:, 1 * n:2 * n].sigmoid()
        g = gates[:, 2 * n:3 * n].tanh()
        o = gates[:, 3 * n:4 * n].sigmoid()
        c_next = f * c + i * g
        h_next = o * c_next.tanh()
        return h_next, c_next


class LSTMStack:
    """Multi-layer LSTM; hidden size is shared across layers."""

    def __init__(self, store, prefix, n_in, n_hidden, n_layers, rng):
        self.n_hidden = n_hidden
        self.n_layers = n_layers
        self.layers = [
            LSTMLayer(store, f"{prefix}.l{i}", n_in if i == 0 else n_hidden,
                      n_hidden, rng)
            for i in range(n_layers)
        ]

    def zero_state(self):
        z = Tensor(np.zeros((1, self.n_hidden)))
        return [(z, z) for _ in range(self.n_layers)]

    def step(self, x: Tensor, state):
        new_state = []
        for layer, (h, c) in zip(self.layers, state):
            x, c_next = layer.step(x, h, c)
            new_state.append((x, c_next))
        return x, new_state

    def run(self, inputs, state=None):
        """Consume a sequence of (1, n_in) tensors; return (outputs, final state)."""
        if state is None:
            state = self.zero_state()
        outputs = []
        for x in inputs:
            out, state = self.step(x, state)
            outputs.append(out)
        return outputs, state


class BilinearAttention:
    """General bilinear attention: score(h, m_k) = h W m_k^T over memory rows."""

    def __init__(self, store, prefix, n_query, n_memory, rng):
        self.w = store.add(f"{prefix}.w", _init(rng, (n_query, n_memory)))

    def __call__(self, query: Tensor, memory: Tensor):
        """query (1, q), memory (n, m) -> (context (1, m), weights (1, n))."""
        scores = (query @ self.w) @ memory.T
        weights = scores.softmax(axis=-1)
        context = weights @ memory
        return context, weights


def embedding_table(store: ParameterStore, name: str, n_rows: int, dim: int,
                    rng: np.random.Generator,
                    pretrained: dict[int, np.ndarray] | None = None) -> Tensor:
    data = _init(rng, (n_rows, dim), scale=0.1)
    if pretrained:
        for idx, vec in pretrained.items():
            data[idx] = vec
    return store.add(name, data)
