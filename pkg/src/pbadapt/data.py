"""Samples, CSV ingestion, random splits and synthetic adaptation tasks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyDatasetError, ParseError, ValidationError

__all__ = [
    "LabeledSample",
    "UnlabeledSample",
    "AdaptationTask",
    "SyntheticSpec",
    "Shift",
    "load_csv",
    "random_split",
    "make_synthetic_task",
    "empirical_risk",
    "error_gap",
]


def _as_features(features) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ValidationError(f"features must be a 2-D matrix, got shape {x.shape}")
    if x.shape[0] < 1:
        raise EmptyDatasetError("sample has no rows")
    x = x.copy()
    x.setflags(write=False)
    return x


@dataclass(frozen=True, eq=False)
class UnlabeledSample:
    """Feature rows without labels (the marginal sample of a domain)."""

    features: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "features", _as_features(self.features))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class LabeledSample:
    """Feature rows with dense integer labels in ``[0, class_count)``.

    A sample doubles as its own empirical distribution: every risk computed on
    it is a plain average over rows.
    """

    features: np.ndarray
    labels: np.ndarray
    class_count: int | None = None

    def __post_init__(self):
        x = _as_features(self.features)
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise ValidationError(
                f"expected {x.shape[0]} labels, got array of shape {y.shape}"
            )
        if not np.issubdtype(y.dtype, np.integer):
            if not np.all(np.equal(np.mod(y, 1), 0)):
                raise ValidationError("labels must be integers")
        y = y.astype(np.int64)
        c = int(y.max()) + 1 if self.class_count is None else int(self.class_count)
        if c < 2:
            raise ValidationError(f"class_count must be >= 2, got {c}")
        if y.min() < 0 or y.max() >= c:
            raise ValidationError(f"labels must lie in [0, {c})")
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_count", c)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def unlabeled(self) -> UnlabeledSample:
        return UnlabeledSample(self.features)

    def subset(self, idx) -> "LabeledSample":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledSample(self.features[idx], self.labels[idx], self.class_count)


@dataclass(frozen=True, eq=False)
class AdaptationTask:
    """A source sample, unlabeled target features and (research mode) target labels."""

    source: LabeledSample
    target_features: UnlabeledSample
    target_labels: np.ndarray | None = None
    shift_descriptor: str = ""

    def __post_init__(self):
        if self.source.dim != self.target_features.dim:
            raise DimensionMismatch(
                f"source has {self.source.dim} features, target has {self.target_features.dim}"
            )
        if self.target_labels is not None:
            # validates range against the source label space
            t = LabeledSample(
                self.target_features.features, self.target_labels, self.source.class_count
            )
            object.__setattr__(self, "target_labels", t.labels)

    @property
    def research_mode(self) -> bool:
        return self.target_labels is not None

    @property
    def target(self) -> LabeledSample:
        """The labeled target sample; only available in research mode."""
        if self.target_labels is None:
            raise ValidationError("target labels unavailable (deployment mode)")
        return LabeledSample(
            self.target_features.features, self.target_labels, self.source.class_count
        )


def load_csv(path, label_column: str | None = None) -> LabeledSample | UnlabeledSample:
    """Read a CSV file with a header row.

    Every column other than ``label_column`` is parsed as a float feature.
    Labels must be non-negative integers; ``class_count`` is ``1 + max label``
    and gaps in the label set are rejected rather than remapped.

    Raises:
        ParseError: a cell could not be parsed (message names row and column).
        EmptyDatasetError: the file has a header but no data rows.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: file is empty") from None
        if label_column is not None and label_column not in header:
            raise ParseError(f"{path}: no column named {label_column!r}")
        li = header.index(label_column) if label_column is not None else None
        rows, labels = [], []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {r} has {len(row)} cells, header has {len(header)}"
                )
            feats = []
            for j, cell in enumerate(row):
                if j == li:
                    try:
                        lab = int(cell.strip())
                    except ValueError:
                        raise ParseError(
                            f"{path}: row {r}, column {header[j]!r}: label {cell!r} is not an integer"
                        ) from None
                    if lab < 0:
                        raise ParseError(
                            f"{path}: row {r}, column {header[j]!r}: negative label {lab}"
                        )
                    labels.append(lab)
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise ParseError(
                        f"{path}: row {r}, column {header[j]!r}: cannot parse {cell!r}"
                    ) from None
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {r}, column {header[j]!r}: non-finite value")
                feats.append(v)
            rows.append(feats)
    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    x = np.array(rows, dtype=np.float64)
    if li is None:
        return UnlabeledSample(x)
    y = np.array(labels, dtype=np.int64)
    missing = sorted(set(range(int(y.max()) + 1)) - set(y.tolist()))
    if missing:
        raise ParseError(f"{path}: labels are not dense, missing {missing}")
    return LabeledSample(x, y)


def random_split(sample: LabeledSample, fraction: float, seed: int):
    """Split into two disjoint parts; the first has ``round(fraction * n)`` rows.

    Rounding is half-up (``floor(fraction * n + 0.5)``), clipped so both parts
    are non-empty.
    """
    n = len(sample)
    if n < 2:
        raise ValidationError(f"cannot split a sample of size {n}")
    if not 0.0 < fraction < 1.0:
        raise ValidationError(f"fraction must be in (0, 1), got {fraction}")
    k = min(max(int(math.floor(fraction * n + 0.5)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return sample.subset(np.sort(perm[:k])), sample.subset(np.sort(perm[k:]))


@dataclass(frozen=True)
class Shift:
    """A target-domain transformation.

    ``kind`` is one of ``none``, ``rotate`` (``angle`` in degrees, applied to
    the first two coordinates), ``noise`` (additive Gaussian with std
    ``sigma``), ``label_shift`` (class proportions ``weights``) and
    ``random_labels`` (structureless features with uniform random labels).
    """

    kind: str = "none"
    angle: float = 0.0
    sigma: float = 0.0
    weights: tuple[float, ...] = ()

    def describe(self) -> str:
        if self.kind == "rotate":
            return f"rotate({self.angle:g})"
        if self.kind == "noise":
            return f"noise({self.sigma:g})"
        if self.kind == "label_shift":
            return "label_shift(" + ",".join(f"{w:g}" for w in self.weights) + ")"
        return self.kind


_SHIFT_KINDS = ("none", "rotate", "noise", "label_shift", "random_labels")


@dataclass(frozen=True)
class SyntheticSpec:
    class_count: int = 3
    dim: int = 2
    per_class_n: int = 100
    shift: Shift = field(default_factory=Shift)
    seed: int = 0
    separation: float = 3.0
    spread: float = 1.0

    def validate(self) -> None:
        if self.class_count < 2:
            raise ValidationError("class_count must be >= 2")
        if self.dim < 2:
            raise ValidationError("dim must be >= 2")
        if self.per_class_n < 1:
            raise ValidationError("per_class_n must be >= 1")
        if self.spread <= 0 or self.separation <= 0:
            raise ValidationError("separation and spread must be positive")
        s = self.shift
        if s.kind not in _SHIFT_KINDS:
            raise ValidationError(f"unknown shift kind {s.kind!r}")
        if s.kind == "noise" and s.sigma < 0:
            raise ValidationError("noise sigma must be >= 0")
        if s.kind == "label_shift":
            w = np.asarray(s.weights, dtype=float)
            if w.shape != (self.class_count,) or np.any(w < 0) or w.sum() <= 0:
                raise ValidationError("label_shift weights must be C non-negative numbers")


def class_centroids(class_count: int, dim: int, separation: float) -> np.ndarray:
    """Class means evenly spaced on a circle of radius ``separation`` in the first two axes."""
    ang = 2.0 * np.pi * np.arange(class_count) / class_count
    c = np.zeros((class_count, dim))
    c[:, 0] = separation * np.cos(ang)
    c[:, 1] = separation * np.sin(ang)
    return c


def rotate_first_two(x: np.ndarray, angle_deg: float) -> np.ndarray:
    a = math.radians(angle_deg)
    r = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    out = np.array(x, dtype=np.float64, copy=True)
    out[:, :2] = x[:, :2] @ r.T
    return out


def _draw_blobs(rng, centroids, counts, spread):
    labels = np.repeat(np.arange(len(counts)), counts)
    x = centroids[labels] + spread * rng.standard_normal((labels.size, centroids.shape[1]))
    return x, labels


def make_synthetic_task(spec: SyntheticSpec) -> AdaptationTask:
    """Isotropic Gaussian blobs for the source and a shifted target (labels kept).

    With ``shift.kind == "none"`` the target is an independent redraw from the
    source distribution.
    """
    spec.validate()
    C, d, n = spec.class_count, spec.dim, spec.per_class_n
    rng_s, rng_t = (np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2))
    cent = class_centroids(C, d, spec.separation)
    xs, ys = _draw_blobs(rng_s, cent, np.full(C, n), spec.spread)
    shift = spec.shift
    if shift.kind == "label_shift":
        w = np.asarray(shift.weights, dtype=float)
        counts = np.floor(w / w.sum() * C * n + 0.5).astype(int)
        if counts.sum() == 0:
            counts[np.argmax(w)] = 1
        xt, yt = _draw_blobs(rng_t, cent, counts, spec.spread)
    elif shift.kind == "random_labels":
        # structureless features covering the source's range, labels uniform
        scale = spec.separation + spec.spread
        xt = scale * rng_t.standard_normal((C * n, d))
        yt = rng_t.integers(0, C, size=C * n)
    else:
        xt, yt = _draw_blobs(rng_t, cent, np.full(C, n), spec.spread)
        if shift.kind == "rotate":
            xt = rotate_first_two(xt, shift.angle)
        elif shift.kind == "noise":
            xt = xt + shift.sigma * rng_t.standard_normal(xt.shape)
    return AdaptationTask(
        source=LabeledSample(xs, ys, C),
        target_features=UnlabeledSample(xt),
        target_labels=yt,
        shift_descriptor=shift.describe(),
    )


def _check_dim(model, sample) -> None:
    if model.architecture.input_dim != sample.dim:
        raise DimensionMismatch(
            f"model expects {model.architecture.input_dim} features, sample has {sample.dim}"
        )


def empirical_risk(model, sample: LabeledSample) -> float:
    """Fraction of rows the model misclassifies."""
    _check_dim(model, sample)
    wrong = np.count_nonzero(model.predict(sample.features) != sample.labels)
    return wrong / len(sample)


def error_gap(model, a: LabeledSample, b: LabeledSample) -> float:
    """``|R_a(model) - R_b(model)|``."""
    return abs(empirical_risk(model, a) - empirical_risk(model, b))


def concat(samples: Sequence[LabeledSample]) -> LabeledSample:
    c = max(s.class_count for s in samples)
    return LabeledSample(
        np.vstack([s.features for s in samples]),
        np.concatenate([s.labels for s in samples]),
        c,
    )
