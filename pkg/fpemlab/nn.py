"""
A tiny dense neural network stack on numpy: ReLU MLPs, two losses, SGD and Adam,
and the FPEMCKPT checkpoint format. Everything is float64.
"""
import struct
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from .errors import CorruptCheckpointError, DimensionError, NonFiniteError

__all__ = [
    "Mlp",
    "Sgd",
    "Adam",
    "Optimizer",
    "LOSS_KINDS",
    "softmax",
    "masked_softmax",
    "forward",
    "backward",
    "apply_update",
    "make_optimizer",
    "gradient_check",
    "encode_mlp",
    "decode_mlp",
    "save_mlp",
    "load_mlp",
]

LOSS_KINDS = ("softmax_xent", "mse")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax restricted to mask; masked entries get exactly zero."""
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


class Mlp:
    """
    A stack of dense layers, ReLU on every hidden layer and a linear head.
    Weights are stored (in, out) so that a batch goes through as x @ W + b.
    """

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None):
        if len(sizes) < 2 or min(sizes) < 1:
            raise DimensionError(f"invalid layer sizes {sizes}")
        rng = rng or np.random.default_rng(0)
        self.layers: List[Tuple[np.ndarray, np.ndarray]] = []
        for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
            hidden = i < len(sizes) - 2
            # He-uniform before a ReLU, LeCun-uniform for the linear head.
            limit = np.sqrt((6.0 if hidden else 3.0) / fan_in)
            w = rng.uniform(-limit, limit, (fan_in, fan_out))
            self.layers.append((w, np.zeros(fan_out)))

    def __repr__(self):
        return f"<Mlp({'-'.join(map(str, self.sizes))})>"

    @classmethod
    def from_layers(cls, layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> "Mlp":
        mlp = cls.__new__(cls)
        mlp.layers = []
        for w, b in layers:
            w = np.array(w, dtype=np.float64, ndmin=2)
            b = np.array(b, dtype=np.float64, ndmin=1)
            if mlp.layers and mlp.layers[-1][0].shape[1] != w.shape[0]:
                raise DimensionError("adjacent layer dimensions disagree")
            if b.shape != (w.shape[1],):
                raise DimensionError(f"bias of shape {b.shape} for weights {w.shape}")
            mlp.layers.append((w, b))
        if not mlp.layers:
            raise DimensionError("an Mlp needs at least one layer")
        return mlp

    @property
    def sizes(self) -> List[int]:
        return [self.layers[0][0].shape[0]] + [w.shape[1] for w, _ in self.layers]

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1][0].shape[1]

    @property
    def parameters(self) -> List[np.ndarray]:
        return [p for layer in self.layers for p in layer]

    def copy(self) -> "Mlp":
        return Mlp.from_layers([(w.copy(), b.copy()) for w, b in self.layers])

    def load_from(self, other: "Mlp"):
        """Copy the parameters of other into self (same architecture)."""
        if other.sizes != self.sizes:
            raise DimensionError(f"cannot load {other} into {self}")
        for (w, b), (ow, ob) in zip(self.layers, other.layers):
            w[...] = ow
            b[...] = ob

    def parameters_bytes(self) -> bytes:
        return encode_mlp(self)

    def grow_output(self, n: int = 1):
        """Add n output units with zero weights and biases (so zero logits)."""
        w, b = self.layers[-1]
        self.layers[-1] = (
            np.concatenate([w, np.zeros((w.shape[0], n))], axis=1),
            np.concatenate([b, np.zeros(n)]),
        )

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)

    def forward(self, x) -> np.ndarray:
        return self._activations(x)[-1]

    def _activations(self, x) -> List[np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise DimensionError(f"{self} expects inputs of size {self.input_dim}, got {x.shape}")
        activations = [x]
        for i, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if i < len(self.layers) - 1:
                x = np.maximum(x, 0.0)
            activations.append(x)
        return activations

    def backward(self, x, loss_kind: str, target, mask=None) -> Tuple[List[np.ndarray], float]:
        """
        Gradients of the mean loss over the batch, in the order of `parameters`.

        softmax_xent: target holds class indices or rows of probabilities.
        mse: target has the shape of the output; mask (same shape) weights each entry.
        """
        if loss_kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss {loss_kind!r}, expected one of {LOSS_KINDS}")
        activations = self._activations(np.atleast_2d(np.asarray(x, dtype=np.float64)))
        output = activations[-1]
        batch = output.shape[0]

        if loss_kind == "softmax_xent":
            target = np.asarray(target)
            if target.ndim <= 1 and np.issubdtype(target.dtype, np.integer):
                labels = np.atleast_1d(target)
                if labels.shape[0] != batch:
                    raise DimensionError(f"{labels.shape[0]} labels for a batch of {batch}")
                if np.any(labels < 0) or np.any(labels >= output.shape[1]):
                    raise DimensionError(f"labels out of range [0, {output.shape[1]})")
                target = np.eye(output.shape[1])[labels]
            target = np.atleast_2d(np.asarray(target, dtype=np.float64))
            if target.shape != output.shape:
                raise DimensionError(f"target of shape {target.shape} for output {output.shape}")
            log_probs = output - output.max(axis=1, keepdims=True)
            log_probs -= np.log(np.exp(log_probs).sum(axis=1, keepdims=True))
            # Zero-target entries contribute nothing, even where log_probs is -inf.
            loss = -np.sum(np.where(target > 0, target * log_probs, 0.0)) / batch
            delta = (np.exp(log_probs) - target) / batch
        else:
            target = np.atleast_2d(np.asarray(target, dtype=np.float64))
            if target.shape != output.shape:
                raise DimensionError(f"target of shape {target.shape} for output {output.shape}")
            weights = np.ones_like(output) if mask is None else np.atleast_2d(np.asarray(mask, dtype=np.float64))
            error = output - target
            loss = np.sum(weights * error**2) / batch
            delta = 2.0 * weights * error / batch

        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite {loss_kind} loss")

        grads: List[np.ndarray] = []
        for i in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[i]
            grads.append(delta.sum(axis=0))
            grads.append(activations[i].T @ delta)
            if i > 0:
                delta = (delta @ w.T) * (activations[i] > 0)
        grads.reverse()
        return grads, float(loss)


class Optimizer:
    lr: float

    def step(self, params: List[np.ndarray], grads: List[np.ndarray]):
        raise NotImplementedError


class Sgd(Optimizer):
    def __init__(self, lr: float = 1e-2):
        self.lr = lr
        self.t = 0

    def __repr__(self):
        return f"Sgd(lr={self.lr})"

    def step(self, params, grads):
        self.t += 1
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam(Optimizer):
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: Optional[List[np.ndarray]] = None
        self.v: Optional[List[np.ndarray]] = None

    def __repr__(self):
        return f"Adam(lr={self.lr}, t={self.t})"

    def step(self, params, grads):
        if self.m is None or [m.shape for m in self.m] != [p.shape for p in params]:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        correction_1 = 1 - self.beta1**self.t
        correction_2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / correction_1) / (np.sqrt(v / correction_2) + self.eps)


def make_optimizer(name: str, lr: float) -> Optimizer:
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return Sgd(lr)
    raise ValueError(f"unknown optimizer {name!r}")


def forward(params: Mlp, x) -> np.ndarray:
    return params.forward(x)


def backward(params: Mlp, x, loss_kind: str, target, mask=None) -> Tuple[List[np.ndarray], float]:
    return params.backward(x, loss_kind, target, mask)


def apply_update(params: Union[Mlp, List[np.ndarray]], grads: List[np.ndarray], optimizer: Optimizer):
    """Update the parameters in place. Non-finite gradients are rejected before anything changes."""
    arrays = params.parameters if isinstance(params, Mlp) else params
    if len(arrays) != len(grads):
        raise DimensionError(f"{len(grads)} gradients for {len(arrays)} parameters")
    for p, g in zip(arrays, grads):
        if p.shape != g.shape:
            raise DimensionError(f"gradient of shape {g.shape} for parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError("non-finite gradient, update rejected")
    optimizer.step(arrays, grads)
    return params


def gradient_check(mlp: Mlp, x, loss_kind: str, target, mask=None, step: float = 1e-5) -> float:
    """Max relative error between backprop and central finite differences."""
    grads, _ = mlp.backward(x, loss_kind, target, mask)
    worst = 0.0
    for p, g in zip(mlp.parameters, grads):
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = p[idx]
            p[idx] = original + step
            _, plus = mlp.backward(x, loss_kind, target, mask)
            p[idx] = original - step
            _, minus = mlp.backward(x, loss_kind, target, mask)
            p[idx] = original
            numeric = (plus - minus) / (2 * step)
            denominator = max(abs(numeric) + abs(g[idx]), 1e-6)
            worst = max(worst, abs(numeric - g[idx]) / denominator)
    return worst


# Checkpoint format: magic, version byte, layer count, (in, out) per layer,
# then for each layer its weights (row-major) and biases as little-endian float64.
_HEADER = struct.Struct("<8sBI")
_DIMS = struct.Struct("<II")
_FLOAT = np.dtype("<f8")


def encode_mlp(mlp: Mlp) -> bytes:
    parts = [_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(mlp.layers))]
    parts += [_DIMS.pack(*w.shape) for w, _ in mlp.layers]
    for w, b in mlp.layers:
        parts.append(np.ascontiguousarray(w, dtype=_FLOAT).tobytes())
        parts.append(np.ascontiguousarray(b, dtype=_FLOAT).tobytes())
    return b"".join(parts)


def decode_mlp(data: bytes, source="<bytes>") -> Mlp:
    if len(data) < _HEADER.size:
        raise CorruptCheckpointError(source, "truncated header")
    magic, version, n_layers = _HEADER.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise CorruptCheckpointError(source, f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpointError(source, f"unsupported version {version}")
    offset = _HEADER.size
    if n_layers < 1 or len(data) < offset + n_layers * _DIMS.size:
        raise CorruptCheckpointError(source, "truncated layer table")
    dims = [_DIMS.unpack_from(data, offset + i * _DIMS.size) for i in range(n_layers)]
    offset += n_layers * _DIMS.size

    expected = offset + sum((i * o + o) * _FLOAT.itemsize for i, o in dims)
    if len(data) != expected:
        raise CorruptCheckpointError(source, f"expected {expected} bytes, found {len(data)}")

    layers = []
    for fan_in, fan_out in dims:
        w = np.frombuffer(data, _FLOAT, fan_in * fan_out, offset).reshape(fan_in, fan_out)
        offset += w.nbytes
        b = np.frombuffer(data, _FLOAT, fan_out, offset)
        offset += b.nbytes
        layers.append((w.astype(np.float64), b.astype(np.float64)))
    try:
        return Mlp.from_layers(layers)
    except DimensionError as e:
        raise CorruptCheckpointError(source, str(e)) from None


def save_mlp(mlp: Mlp, path: Union[str, Path]):
    Path(path).write_bytes(encode_mlp(mlp))


def load_mlp(path: Union[str, Path]) -> Mlp:
    path = Path(path)
    return decode_mlp(path.read_bytes(), path)
