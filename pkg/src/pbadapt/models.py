"""Score-based multiclass hypotheses over a flat parameter vector.

Layer ``l`` stores its weight matrix (``out x in``, row-major) followed by its
bias; layers are laid out input to output. Hidden layers use ``tanh``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DimensionMismatch, NonFiniteError, ValidationError

__all__ = [
    "Architecture",
    "ScoredModel",
    "init_model",
    "forward",
    "backward",
    "split_head",
    "disagreement",
    "model_to_dict",
    "model_from_dict",
    "save_model",
    "load_model",
]

MAX_PARAMS = 50_000
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    kind: str
    input_dim: int
    class_count: int
    hidden_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.kind not in ("linear", "mlp"):
            raise ValidationError(f"unknown architecture kind {self.kind!r}")
        if self.kind == "linear" and self.hidden_dims:
            raise ValidationError("linear models take no hidden layers")
        if self.kind == "mlp" and not 1 <= len(self.hidden_dims) <= 3:
            raise ValidationError("mlp needs 1 to 3 hidden layers")
        if any(not 1 <= h <= 256 for h in self.hidden_dims):
            raise ValidationError("hidden widths must lie in [1, 256]")
        if self.input_dim < 1 or self.class_count < 2:
            raise ValidationError("need input_dim >= 1 and class_count >= 2")
        if self.param_count > MAX_PARAMS:
            raise ValidationError(f"{self.param_count} parameters exceeds cap of {MAX_PARAMS}")

    @classmethod
    def linear(cls, input_dim: int, class_count: int) -> "Architecture":
        return cls("linear", input_dim, class_count)

    @classmethod
    def mlp(cls, input_dim: int, class_count: int, hidden_dims=(32,)) -> "Architecture":
        return cls("mlp", input_dim, class_count, tuple(hidden_dims))

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_dims, self.class_count)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        w = self.widths
        return [(w[i + 1], w[i]) for i in range(len(w) - 1)]

    @property
    def param_count(self) -> int:
        return sum(o * i + o for o, i in self.layer_shapes)

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1] if self.hidden_dims else self.input_dim

    @property
    def head_param_count(self) -> int:
        o, i = self.layer_shapes[-1]
        return o * i + o

    def head_architecture(self) -> "Architecture":
        return Architecture.linear(self.feature_dim, self.class_count)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.input_dim,
            "class_count": self.class_count,
            "hidden_dims": list(self.hidden_dims),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Architecture":
        return cls(d["kind"], int(d["input_dim"]), int(d["class_count"]), tuple(d.get("hidden_dims", ())))


def _unpack(arch: Architecture, params: np.ndarray):
    layers, pos = [], 0
    for o, i in arch.layer_shapes:
        w = params[pos : pos + o * i].reshape(o, i)
        pos += o * i
        b = params[pos : pos + o]
        pos += o
        layers.append((w, b))
    return layers


def _check_input(arch: Architecture, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[-1] != arch.input_dim:
        raise DimensionMismatch(f"expected {arch.input_dim} features, got {x.shape[-1]}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteError("input contains non-finite values")
    return x


def forward(arch: Architecture, params: np.ndarray, x: np.ndarray, upto_features: bool = False):
    """Scores for a batch ``x`` plus the cache ``backward`` needs.

    With ``upto_features`` the output is the last hidden activation instead of
    the class scores.
    """
    layers = _unpack(arch, params)
    if upto_features:
        layers = layers[:-1]
    cache = []
    a = x
    for li, (w, b) in enumerate(layers):
        z = a @ w.T + b
        last = li == len(arch.layer_shapes) - 1
        cache.append(a)
        a = z if last else np.tanh(z)
    return a, cache


def backward(
    arch: Architecture,
    params: np.ndarray,
    cache: list,
    dout: np.ndarray,
    upto_features: bool = False,
):
    """Gradient w.r.t. the flat parameters and w.r.t. the input batch.

    ``dout`` is the gradient of a scalar w.r.t. the forward output. When
    ``upto_features`` is set only the feature-map slice of the gradient is
    filled; the head slice stays zero.
    """
    layers = _unpack(arch, params)
    n_layers = len(layers) - 1 if upto_features else len(layers)
    grad = np.zeros_like(params)
    offsets, pos = [], 0
    for o, i in arch.layer_shapes:
        offsets.append(pos)
        pos += o * i + o
    delta = dout
    for li in range(n_layers - 1, -1, -1):
        w, b = layers[li]
        a_in = cache[li]
        last = li == len(arch.layer_shapes) - 1
        if not last:
            # cached activation of this layer's output is the next layer's input
            a_out = cache[li + 1] if li + 1 < len(cache) else None
            if a_out is None:
                a_out = np.tanh(a_in @ w.T + b)
            delta = delta * (1.0 - a_out * a_out)
        o, i = w.shape
        p = offsets[li]
        grad[p : p + o * i] = (delta.T @ a_in).ravel()
        grad[p + o * i : p + o * i + o] = delta.sum(axis=0)
        delta = delta @ w
    return grad, delta


class ScoredModel:
    """A multiclass scorer; predictions are the argmax of the scores."""

    __slots__ = ("architecture", "params")

    def __init__(self, architecture: Architecture, params):
        p = np.array(params, dtype=np.float64).ravel()
        if p.size != architecture.param_count:
            raise ValidationError(
                f"expected {architecture.param_count} parameters, got {p.size}"
            )
        p.setflags(write=False)
        self.architecture = architecture
        self.params = p

    def __repr__(self) -> str:
        a = self.architecture
        return f"ScoredModel({a.kind}, {a.widths}, P={a.param_count})"

    def scores(self, x) -> np.ndarray:
        x = _check_input(self.architecture, x)
        out, _ = forward(self.architecture, self.params, x)
        return out

    def predict(self, x) -> np.ndarray:
        # np.argmax picks the first maximum: ties go to the least label
        return np.argmax(self.scores(x), axis=1)

    def features(self, x) -> np.ndarray:
        x = _check_input(self.architecture, x)
        if self.architecture.kind == "linear":
            return x
        out, _ = forward(self.architecture, self.params, x, upto_features=True)
        return out

    def head(self) -> "ScoredModel":
        arch = self.architecture
        if arch.kind == "linear":
            return self
        return ScoredModel(arch.head_architecture(), self.params[-arch.head_param_count :])

    def with_params(self, params) -> "ScoredModel":
        return ScoredModel(self.architecture, params)

    def with_head(self, head: "ScoredModel") -> "ScoredModel":
        """Same feature map, classifier layer replaced by ``head``."""
        arch = self.architecture
        if arch.kind == "linear":
            return ScoredModel(arch, head.params)
        p = np.concatenate([self.params[: -arch.head_param_count], head.params])
        return ScoredModel(arch, p)


def init_model(arch: Architecture, seed) -> ScoredModel:
    """Uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialisation."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chunks = []
    for o, i in arch.layer_shapes:
        bound = 1.0 / np.sqrt(i)
        chunks.append(rng.uniform(-bound, bound, size=o * i))
        chunks.append(rng.uniform(-bound, bound, size=o))
    return ScoredModel(arch, np.concatenate(chunks))


def split_head(model: ScoredModel) -> tuple[Callable[[np.ndarray], np.ndarray], ScoredModel]:
    """``(feature_map, head)`` with ``head.scores(feature_map(x)) == model.scores(x)``.

    Linear models get the identity feature map and themselves as head.
    """
    return model.features, model.head()


def disagreement(a: ScoredModel, b: ScoredModel, x) -> np.ndarray:
    """1 where the two models predict different labels, else 0."""
    if (
        a.architecture.input_dim != b.architecture.input_dim
        or a.architecture.class_count != b.architecture.class_count
    ):
        raise DimensionMismatch("models disagree on input dimension or class count")
    return (a.predict(x) != b.predict(x)).astype(np.int64)


def model_to_dict(model: ScoredModel) -> dict:
    return {
        "format": "pbadapt.model",
        "version": FORMAT_VERSION,
        "architecture": model.architecture.to_dict(),
        # float repr round-trips exactly
        "params": [float(v) for v in model.params],
    }


def model_from_dict(d: dict) -> ScoredModel:
    if d.get("version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported model format version {d.get('version')!r}")
    return ScoredModel(Architecture.from_dict(d["architecture"]), np.array(d["params"], dtype=np.float64))


def save_model(model: ScoredModel, path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path) -> ScoredModel:
    return model_from_dict(json.loads(Path(path).read_text()))
