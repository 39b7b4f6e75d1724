"""Pair index generation for the metric and classification views.

Two generators produce tagged index pairs from a labeled mini-batch:

* metric-view (`mlpg`): sample-sample pairs within the batch, positive
  when labels match, canonicalized unordered (left < right);
* classification-view (`clpg`): sample-weight pairs per anchor, one
  positive (the anchor's own class row) and one negative per other class.

The unified negative set is the union of the classification negatives
with the (optionally noise-filtered) metric negatives. Filtering keeps
the similarities inside a box-and-whisker band around the interquartile
range, dropping too-easy and too-hard pairs.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterator, NamedTuple

import numpy as np

from .errors import (
    ConfigInvalidError,
    DimensionMismatchError,
    EmptyInputError,
    LabelOutOfRangeError,
    OriginMismatchError,
)
from .sphere import UNIT_NORM_TOL

POSITIVE = "positive"
NEGATIVE = "negative"
ML = "ml"
CL = "cl"

# Quantile interpolation used for the whisker band. "linear" interpolates
# at positions q*(n-1) on the sorted list; kept a named constant so
# alternate conventions (e.g. Tukey hinges) are one change away.
DEFAULT_QUANTILE_METHOD = "linear"

# Documented whisker presets: 1.0 suits lower-capacity models, 1.5 admits
# harder negatives for higher-capacity ones.
WHISKER_CHOICES = (1.0, 1.5)


class Pair(NamedTuple):
    left: int
    right: int
    kind: str  # POSITIVE or NEGATIVE
    origin: str  # ML: both indices address batch samples; CL: right is a class row


@dataclass(frozen=True)
class PairIndexSet:
    """An immutable collection of tagged index pairs."""

    pairs: tuple[Pair, ...]

    def __post_init__(self):
        object.__setattr__(self, "pairs", tuple(self.pairs))
        for p in self.pairs:
            if p.kind not in (POSITIVE, NEGATIVE):
                raise ValueError(f"unknown pair kind {p.kind!r}")
            if p.origin not in (ML, CL):
                raise OriginMismatchError(f"unknown pair origin {p.origin!r}")
            if p.origin == ML and not p.left < p.right:
                raise ValueError(
                    f"ml pairs must be canonical with left < right, got ({p.left}, {p.right})"
                )

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self) -> Iterator[Pair]:
        return iter(self.pairs)

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Left and right indices as int arrays (empty arrays when no pairs)."""
        if not self.pairs:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        lefts, rights = zip(*((p.left, p.right) for p in self.pairs))
        return np.asarray(lefts, dtype=int), np.asarray(rights, dtype=int)

    def all_origin(self, origin: str) -> bool:
        return all(p.origin == origin for p in self.pairs)


@dataclass(frozen=True)
class LabeledBatch:
    """A mini-batch of unit embeddings with integer class labels.

    `indices` optionally records each row's position in the source
    dataset so the trainer can route gradients back to parameter rows.
    """

    embeddings: np.ndarray  # (N, d), unit rows
    labels: np.ndarray  # (N,), nonnegative ints
    indices: np.ndarray | None = None

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        lab = np.asarray(self.labels, dtype=int)
        if emb.ndim != 2 or emb.shape[0] < 2 or emb.shape[1] < 2:
            raise DimensionMismatchError(
                f"batch embeddings must be (N>=2, d>=2), got shape {emb.shape}"
            )
        if lab.shape != (emb.shape[0],):
            raise DimensionMismatchError(
                f"labels shape {lab.shape} does not match batch size {emb.shape[0]}"
            )
        if np.any(lab < 0):
            raise LabelOutOfRangeError("labels must be nonnegative")
        norms = np.linalg.norm(emb, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"embedding row {bad} is not unit norm ({norms[bad]!r})")
        object.__setattr__(self, "embeddings", emb)
        object.__setattr__(self, "labels", lab)
        if self.indices is not None:
            object.__setattr__(self, "indices", np.asarray(self.indices, dtype=int))

    @property
    def size(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]


@dataclass(frozen=True)
class ClassWeightMatrix:
    """One unit weight row per class."""

    weights: np.ndarray  # (C, d), unit rows

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 2 or w.shape[1] < 2:
            raise DimensionMismatchError(
                f"class weights must be (C>=2, d>=2), got shape {w.shape}"
            )
        norms = np.linalg.norm(w, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValueError(f"weight row {bad} is not unit norm ({norms[bad]!r})")
        object.__setattr__(self, "weights", w)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class FilterConfig:
    """Whisker band for noise-negative filtering.

    whisker_r multiplies the interquartile range on both sides; math.inf
    disables filtering (everything retained).
    """

    whisker_r: float = 1.0
    quantile_method: str = DEFAULT_QUANTILE_METHOD

    def __post_init__(self):
        r = float(self.whisker_r)
        if np.isnan(r) or r < 0:
            raise ConfigInvalidError(f"whisker_r must be a nonnegative real, got {self.whisker_r!r}")
        object.__setattr__(self, "whisker_r", r)


def mlpg(batch: LabeledBatch) -> tuple[PairIndexSet, PairIndexSet]:
    """All unordered sample pairs of the batch, split by label agreement.

    Returns (positives, negatives); together they partition the
    N*(N-1)/2 unordered pairs.
    """
    labels = batch.labels
    pos, neg = [], []
    for i, j in combinations(range(batch.size), 2):
        kind = POSITIVE if labels[i] == labels[j] else NEGATIVE
        (pos if kind == POSITIVE else neg).append(Pair(i, j, kind, ML))
    return PairIndexSet(tuple(pos)), PairIndexSet(tuple(neg))


def clpg(anchor: int, batch: LabeledBatch, num_classes: int) -> tuple[PairIndexSet, PairIndexSet]:
    """The anchor's sample-weight pairs: its own class row as the single
    positive and every other class row as a negative."""
    if not 0 <= anchor < batch.size:
        raise LabelOutOfRangeError(f"anchor {anchor} outside batch of size {batch.size}")
    y = int(batch.labels[anchor])
    if y >= num_classes:
        raise LabelOutOfRangeError(f"label {y} outside [0, {num_classes})")
    positive = PairIndexSet((Pair(anchor, y, POSITIVE, CL),))
    negatives = PairIndexSet(
        tuple(Pair(anchor, j, NEGATIVE, CL) for j in range(num_classes) if j != y)
    )
    return positive, negatives


def filter_noise(similarities, cfg: FilterConfig) -> np.ndarray:
    """Boolean retention mask over a similarity list via box-and-whisker bounds.

    With s_l and s_u the lower and upper quartiles and IQR = s_u - s_l,
    value k is retained iff s_l - r*IQR <= s_k <= s_u + r*IQR.
    """
    s = np.asarray(similarities, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionMismatchError(f"expected a 1-D similarity list, got shape {s.shape}")
    if s.size == 0:
        raise EmptyInputError("cannot filter an empty similarity list")
    if not np.all(np.isfinite(s)):
        raise ValueError("similarities must be finite")
    if np.isinf(cfg.whisker_r):
        return np.ones(s.shape, dtype=bool)
    s_l = float(np.quantile(s, 0.25, method=cfg.quantile_method))
    s_u = float(np.quantile(s, 0.75, method=cfg.quantile_method))
    iqr = s_u - s_l
    lo = s_l - cfg.whisker_r * iqr
    hi = s_u + cfg.whisker_r * iqr
    return (s >= lo) & (s <= hi)


def apply_retention_mask(pairs: PairIndexSet, mask) -> PairIndexSet:
    """Keep the pairs whose mask entry is True (mask aligned with pair order)."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != (len(pairs),):
        raise DimensionMismatchError(
            f"mask length {m.shape} does not match {len(pairs)} pairs"
        )
    return PairIndexSet(tuple(p for p, keep in zip(pairs, m) if keep))


def unpg_union(cl_negatives: PairIndexSet, filtered_ml_negatives: PairIndexSet) -> PairIndexSet:
    """Disjoint union of classification-view and metric-view negatives,
    preserving origin tags (classification pairs first)."""
    if not cl_negatives.all_origin(CL):
        raise OriginMismatchError("cl_negatives must contain only cl-origin pairs")
    if not filtered_ml_negatives.all_origin(ML):
        raise OriginMismatchError("filtered_ml_negatives must contain only ml-origin pairs")
    return PairIndexSet(cl_negatives.pairs + filtered_ml_negatives.pairs)
