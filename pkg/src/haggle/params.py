"""Named parameter store, Adam optimizer, and checkpoint round-tripping."""

from __future__ import annotations

import io
import zipfile

import numpy as np

from .autodiff import Tensor

CHECKPOINT_VERSION = 1


class ParameterStore:
    """Flat map name -> trainable Tensor, with grad buffers living on the tensors."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        t = Tensor(np.asarray(value, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def num_params(self) -> int:
        return sum(t.data.size for t in self._params.values())

    # -- persistence -----------------------------------------------------

    def save(self, path):
        arrays = {name: t.data for name, t in self._params.items()}
        arrays["__version__"] = np.array([CHECKPOINT_VERSION], dtype=np.int64)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    def load(self, path):
        with np.load(path) as archive:
            version = int(archive["__version__"][0])
            if version != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {version}")
            for name, t in self._params.items():
                if name not in archive:
                    raise KeyError(f"checkpoint missing parameter {name}")
                loaded = archive[name]
                if loaded.shape != t.data.shape:
                    raise ValueError(
                        f"shape mismatch for {name}: {loaded.shape} vs {t.data.shape}")
                t.data = loaded.astype(np.float64)

    def state_bytes(self) -> bytes:
        buf = io.BytesIO()
        arrays = {name: t.data for name, t in sorted(self._params.items())}
        np.savez(buf, **arrays)
        return buf.getvalue()

    def digest(self) -> dict[str, bytes]:
        """Raw little-endian bytes per parameter, for bit-exact comparison."""
        return {name: t.data.astype("<f8").tobytes()
                for name, t in self._params.items()}


def global_grad_norm(store: ParameterStore) -> float:
    total = 0.0
    for t in store.tensors():
        if t.grad is not None:
            total += float((t.grad ** 2).sum())
    return float(np.sqrt(total))


def clip_grad_norm(store: ParameterStore, max_norm: float):
    norm = global_grad_norm(store)
    if norm > max_norm > 0.0:
        scale = max_norm / norm
        for t in store.tensors():
            if t.grad is not None:
                t.grad *= scale
    return norm


class Adam:
    """Standard Adam with bias correction; aborts the step on NaN gradients."""

    def __init__(self, store: ParameterStore, lr=1e-3, beta1=0.9, beta2=0.999,
                 eps=1e-8):
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self):
        for name, t in self.store.items():
            if t.grad is not None and not np.all(np.isfinite(t.grad)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, t in self.store.items():
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data = t.data - self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def check_gradients(loss_fn, store: ParameterStore, h: float = 1e-5) -> float:
    """Compare analytic gradients of `loss_fn()` against central differences.

    Returns the maximum relative error over every parameter entry. `loss_fn`
    must rebuild the forward graph from the store's tensors on each call.
    """
    store.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in store.items()}
    max_rel = 0.0
    for name, t in store.items():
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn().item()
            flat[i] = orig - h
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = analytic[name].reshape(-1)[i]
            # floor keeps FD roundoff noise on near-zero gradients from
            # dominating the relative error
            denom = max(abs(a), abs(numeric), 1e-6)
            max_rel = max(max_rel, abs(a - numeric) / denom)
    return max_rel
