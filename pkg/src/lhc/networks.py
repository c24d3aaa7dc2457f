"""The class-to-string encoder, string decoder, and LSTM string classifier.

Bit distributions travel as lists of L tensors, one (B, 2) row-stochastic
pair per string position; column 0 is P(bit=0). A single example's
distribution sequence is the (L, 2) numpy array stacked from a batch of
one, which is what string_of and the lookup table consume.
"""

from __future__ import annotations

import itertools
import json

import numpy as np

from .autodiff import ShapeError, Tensor, concat, softmax, softmax2, tanh
from .nn import Linear, LstmCell, ParameterSet

LOOKUP_VERSION = 1


class CollisionError(ValueError):
    """Two or more classes were encoded to the same string."""

    def __init__(self, pairs: list[tuple[int, int]]):
        self.pairs = pairs
        listing = "; ".join(f"classes {a} and {b}" for a, b in pairs)
        super().__init__(f"string encoding is not one-to-one: {listing}")


def string_of(dist: np.ndarray) -> str:
    """Per-bit argmax of an (L, 2) distribution sequence; ties go to 0."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[1] != 2:
        raise ShapeError(f"expected an (L, 2) distribution sequence, got {dist.shape}")
    return "".join("1" if p1 > p0 else "0" for p0, p1 in dist)


class StringLookupTable:
    """Frozen bijection between class ids and distinct L-bit strings."""

    def __init__(self, class_to_string: dict[int, str], class_names: list[str] | None = None):
        if not class_to_string:
            raise ValueError("lookup table needs at least one entry")
        lengths = {len(s) for s in class_to_string.values()}
        if len(lengths) != 1:
            raise ValueError(f"strings must share one length, got lengths {sorted(lengths)}")
        bad = [s for s in class_to_string.values() if set(s) - {"0", "1"}]
        if bad:
            raise ValueError(f"non-binary string {bad[0]!r}")
        if len(set(class_to_string.values())) != len(class_to_string):
            groups: dict[str, list[int]] = {}
            for c, s in class_to_string.items():
                groups.setdefault(s, []).append(c)
            pairs = [p for g in groups.values() if len(g) > 1
                     for p in itertools.combinations(sorted(g), 2)]
            raise CollisionError(pairs)
        self.class_to_string = dict(sorted(class_to_string.items()))
        self.string_to_class = {s: c for c, s in self.class_to_string.items()}
        self.string_length = lengths.pop()
        self.num_classes = len(self.class_to_string)
        self.class_names = (list(class_names) if class_names is not None
                            else [str(c) for c in self.class_to_string])

    def lookup(self, bits: str) -> int | None:
        return self.string_to_class.get(bits)

    def to_json(self) -> str:
        obj = {
            "version": LOOKUP_VERSION,
            "L": self.string_length,
            "C": self.num_classes,
            "entries": [
                {"class_id": c, "class_name": self.class_names[i], "string": s}
                for i, (c, s) in enumerate(self.class_to_string.items())
            ],
        }
        return json.dumps(obj, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StringLookupTable":
        obj = json.loads(text)
        mapping = {e["class_id"]: e["string"] for e in obj["entries"]}
        names = [e["class_name"] for e in sorted(obj["entries"], key=lambda e: e["class_id"])]
        table = cls(mapping, class_names=names)
        if table.string_length != obj["L"] or table.num_classes != obj["C"]:
            raise ValueError("lookup JSON header disagrees with its entries")
        return table


def lookup_predict(table: StringLookupTable, p: np.ndarray) -> int | None:
    """Exact-match prediction; None means no class owns the extracted string."""
    return table.lookup(string_of(p))


class Class2StrNet:
    """One-hot class label -> per-bit distributions q via a shared trunk."""

    def __init__(self, params: ParameterSet, num_classes: int, string_length: int,
                 rng: np.random.Generator, hidden_dim: int | None = None,
                 prefix: str = "class2str"):
        self.num_classes = num_classes
        self.string_length = string_length
        self.hidden_dim = hidden_dim if hidden_dim is not None else max(500, 2 * num_classes)
        self.trunk = Linear(params, f"{prefix}.trunk", num_classes, self.hidden_dim, rng)
        self.heads = [Linear(params, f"{prefix}.head{i}", self.hidden_dim, 2, rng)
                      for i in range(string_length)]

    def forward(self, labels: Tensor) -> list[Tensor]:
        if labels.data.ndim != 2 or labels.shape[1] != self.num_classes:
            raise ShapeError(f"expected (B, {self.num_classes}) labels, got {labels.shape}")
        z = tanh(self.trunk(labels))
        return [softmax2(head(z)) for head in self.heads]

    def encode(self, class_id: int) -> np.ndarray:
        """Soft (L, 2) distribution sequence for one class, no grad recording."""
        onehot = np.zeros((1, self.num_classes))
        onehot[0, class_id] = 1.0
        q = self.forward(Tensor(onehot))
        return np.vstack([qi.data[0] for qi in q])

    def tensors(self):
        return self.trunk.tensors() + [t for h in self.heads for t in h.tensors()]


class Str2ClassNet:
    """Per-bit distributions -> class distribution, via the flattened 2L vector."""

    def __init__(self, params: ParameterSet, num_classes: int, string_length: int,
                 rng: np.random.Generator, hidden_dim: int | None = None,
                 prefix: str = "str2class"):
        self.num_classes = num_classes
        self.string_length = string_length
        self.hidden_dim = hidden_dim if hidden_dim is not None else max(500, 2 * num_classes)
        self.fc1 = Linear(params, f"{prefix}.fc1", 2 * string_length, self.hidden_dim, rng)
        self.fc2 = Linear(params, f"{prefix}.fc2", self.hidden_dim, num_classes, rng)

    def forward(self, q: list[Tensor]) -> Tensor:
        if len(q) != self.string_length:
            raise ShapeError(f"expected {self.string_length} bit distributions, got {len(q)}")
        flat = concat(q, axis=1)
        return softmax(self.fc2(tanh(self.fc1(flat))))

    def tensors(self):
        return self.fc1.tensors() + self.fc2.tensors()


class LhClassifierNet:
    """Feature vector -> per-bit distributions p through an LSTM unrolled L steps.

    The projected feature vector is the input at every timestep; the
    dependence of later bits on earlier ones lives in the recurrent state.
    A single output head is shared across timesteps.
    """

    def __init__(self, params: ParameterSet, feature_dim: int, hidden_dim: int,
                 string_length: int, rng: np.random.Generator, num_layers: int = 1,
                 prefix: str = "lh"):
        if num_layers not in (1, 2):
            raise ValueError(f"num_layers must be 1 or 2, got {num_layers}")
        self.feature_dim = feature_dim
        self.hidden_dim = hidden_dim
        self.string_length = string_length
        self.num_layers = num_layers
        self.projection = Linear(params, f"{prefix}.projection", feature_dim, hidden_dim, rng)
        self.cells = [LstmCell(params, f"{prefix}.lstm{l}", hidden_dim, hidden_dim, rng)
                      for l in range(num_layers)]
        self.head = Linear(params, f"{prefix}.head", hidden_dim, 2, rng)

    def forward(self, features: Tensor) -> list[Tensor]:
        if features.data.ndim != 2 or features.shape[1] != self.feature_dim:
            raise ShapeError(f"expected (B, {self.feature_dim}) features, got {features.shape}")
        batch = features.shape[0]
        x = self.projection(features)
        h = [Tensor(np.zeros((batch, self.hidden_dim))) for _ in self.cells]
        c = [Tensor(np.zeros((batch, self.hidden_dim))) for _ in self.cells]
        outputs = []
        for _ in range(self.string_length):
            inp = x
            for layer, cell in enumerate(self.cells):
                h[layer], c[layer] = cell.step(inp, h[layer], c[layer])
                inp = h[layer]
            outputs.append(softmax2(self.head(inp)))
        return outputs

    def predict_bits(self, features: np.ndarray) -> np.ndarray:
        """Hard (N, L) bit matrix for a feature batch, no grad recording."""
        p = self.forward(Tensor(np.atleast_2d(features)))
        return np.stack([(pi.data[:, 1] > pi.data[:, 0]).astype(np.int64) for pi in p], axis=1)

    def tensors(self):
        out = self.projection.tensors()
        for cell in self.cells:
            out += cell.tensors()
        return out + self.head.tensors()


def freeze_lookup(net: Class2StrNet, class_names: list[str] | None = None) -> StringLookupTable:
    """Materialize the learned encoding; raises CollisionError if not one-to-one."""
    mapping = {c: string_of(net.encode(c)) for c in range(net.num_classes)}
    return StringLookupTable(mapping, class_names=class_names)
