"""Parameterized layers, a freezable parameter registry, Adam, checkpoints.

Layers register their tensors into a ParameterSet under dotted names
("extractor.0.weight"). Frozen names are excluded from Adam updates and
from the L2 penalty, which is how the phase-2 protocol keeps the feature
extractor bitwise untouched.
"""

from __future__ import annotations

import json
import struct
from typing import Iterable, Iterator

import numpy as np

from .autodiff import (Tensor, add, add_bias, matmul, mul, reshape, sigmoid,
                       slice_, tanh, transpose)

CHECKPOINT_MAGIC = b"LHC1"
CHECKPOINT_VERSION = 1


class MissingGradientError(RuntimeError):
    """A non-frozen parameter reached an optimizer step without a gradient."""


class CheckpointError(ValueError):
    """Checkpoint file is malformed or inconsistent."""


def xavier_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    """uniform(-b, b) with b = sqrt(6 / (in_dim + out_dim)), shape (out, in)."""
    bound = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim))


class ParameterSet:
    """Named parameter tensors plus the subset excluded from updates."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._frozen: set[str] = set()

    def add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(data, requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def freeze(self, names: Iterable[str]) -> None:
        for name in names:
            if name not in self._params:
                raise KeyError(f"cannot freeze unknown parameter {name!r}")
            self._frozen.add(name)
            self._params[name].requires_grad = False

    def freeze_prefix(self, prefix: str) -> None:
        self.freeze([n for n in self._params if n.startswith(prefix)])

    def is_frozen(self, name: str) -> bool:
        return name in self._frozen

    def frozen_names(self) -> frozenset[str]:
        return frozenset(self._frozen)

    def trainable(self) -> list[tuple[str, Tensor]]:
        return [(n, t) for n, t in self._params.items() if n not in self._frozen]

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.zero_grad()

    def tobytes(self, names: Iterable[str] | None = None) -> bytes:
        """Concatenated raw bytes of the named parameters, for bitwise checks."""
        picked = sorted(names) if names is not None else sorted(self._params)
        return b"".join(np.ascontiguousarray(self._params[n].data).tobytes() for n in picked)

    def names_with_prefix(self, prefix: str) -> list[str]:
        return [n for n in self._params if n.startswith(prefix)]


class Linear:
    """y = x W^T + b with W of shape (out, in)."""

    def __init__(self, params: ParameterSet, name: str, in_dim: int, out_dim: int,
                 rng: np.random.Generator):
        if in_dim <= 0 or out_dim <= 0:
            raise ValueError(f"Linear dims must be positive, got {in_dim}->{out_dim}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = params.add(f"{name}.weight", xavier_uniform(rng, out_dim, in_dim))
        self.bias = params.add(f"{name}.bias", np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return add_bias(matmul(x, transpose(self.weight)), self.bias)

    def tensors(self) -> list[Tensor]:
        return [self.weight, self.bias]


class LstmCell:
    """Single LSTM cell; gate order (input, forget, candidate, output).

    The forget-gate bias slice is initialized to 1.0 so early steps keep
    their cell memory.
    """

    def __init__(self, params: ParameterSet, name: str, in_dim: int, hidden_dim: int,
                 rng: np.random.Generator):
        if hidden_dim <= 0:
            raise ValueError(f"hidden_dim must be positive, got {hidden_dim}")
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.w_x = params.add(f"{name}.w_x", xavier_uniform(rng, 4 * hidden_dim, in_dim))
        self.w_h = params.add(f"{name}.w_h", xavier_uniform(rng, 4 * hidden_dim, hidden_dim))
        bias = np.zeros(4 * hidden_dim)
        bias[hidden_dim:2 * hidden_dim] = 1.0
        self.bias = params.add(f"{name}.bias", bias)

    def step(self, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        h = self.hidden_dim
        gates = add_bias(add(matmul(x, transpose(self.w_x)),
                             matmul(h_prev, transpose(self.w_h))), self.bias)
        i = sigmoid(slice_(gates, 1, 0, h))
        f = sigmoid(slice_(gates, 1, h, 2 * h))
        g = tanh(slice_(gates, 1, 2 * h, 3 * h))
        o = sigmoid(slice_(gates, 1, 3 * h, 4 * h))
        c = add(mul(f, c_prev), mul(i, g))
        return mul(o, tanh(c)), c

    def tensors(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.bias]


def lstm_step(cell: LstmCell, x: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """One recurrence step; accepts single vectors or row batches."""
    if x.data.ndim == 1:
        h, c = cell.step(reshape(x, (1, x.shape[0])),
                         reshape(h_prev, (1, h_prev.shape[0])),
                         reshape(c_prev, (1, c_prev.shape[0])))
        return reshape(h, (cell.hidden_dim,)), reshape(c, (cell.hidden_dim,))
    return cell.step(x, h_prev, c_prev)


class Adam:
    """Adam with bias correction; frozen parameters are never touched."""

    def __init__(self, params: ParameterSet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self) -> None:
        self.t += 1
        for name, p in self.params.trainable():
            if p.grad is None:
                raise MissingGradientError(f"no gradient for trainable parameter {name!r}")
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p.data)
                self._v[name] = np.zeros_like(p.data)
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / (1.0 - self.beta1 ** self.t)
            v_hat = v / (1.0 - self.beta2 ** self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        self.params.zero_grad()


# ------------------------------------------------------------- checkpoints
#
# Layout: b"LHC1" | u32le manifest length | UTF-8 JSON manifest | payload.
# The manifest lists parameter names, shapes, frozen flags and byte offsets
# into the payload; the payload is the little-endian f64 arrays concatenated
# in manifest order.

def save_checkpoint(path, params: ParameterSet, hyperparams: dict | None = None) -> None:
    entries = []
    offset = 0
    blobs = []
    for name, t in params.items():
        blob = np.ascontiguousarray(t.data).astype("<f8").tobytes()
        entries.append({
            "name": name,
            "shape": list(t.data.shape),
            "frozen": params.is_frozen(name),
            "offset": offset,
        })
        blobs.append(blob)
        offset += len(blob)
    manifest = {
        "format_version": CHECKPOINT_VERSION,
        "hyperparameters": hyperparams or {},
        "parameters": entries,
    }
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(manifest_bytes)))
        fh.write(manifest_bytes)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    if len(raw) < 8:
        raise CheckpointError(f"{path}: truncated header")
    (manifest_len,) = struct.unpack("<I", raw[4:8])
    manifest_end = 8 + manifest_len
    if len(raw) < manifest_end:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[8:manifest_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest: {exc}") from exc
    if manifest.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {manifest.get('format_version')}")

    payload = raw[manifest_end:]
    params = ParameterSet()
    frozen = []
    for entry in manifest["parameters"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        start = entry["offset"]
        end = start + count * 8
        if end > len(payload):
            raise CheckpointError(f"{path}: payload truncated at parameter {entry['name']!r}")
        data = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape)
        params.add(entry["name"], data.copy())
        if entry["frozen"]:
            frozen.append(entry["name"])
    params.freeze(frozen)
    return params, manifest["hyperparameters"]
