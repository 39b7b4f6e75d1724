"""Similarity computation: raw cosines to margin-adjusted score sets.

Three variants share one shape: negatives always pass through as plain
cosines, and only the positive score is transformed.

* ``snpair``: identity, no margin.
* ``cosface``: subtract the margin from the positive cosine. The
  additive direction is chosen so the margin makes positives harder
  (shifts the positive score set toward the negatives); an eased
  positive would let the loss vanish.
* ``arcface``: add the margin to the positive angle before the cosine,
  clamping the shifted angle at pi so scores stay in [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigInvalidError, OriginMismatchError
from .pairs import ML, POSITIVE, LabeledBatch, PairIndexSet

SNPAIR = "snpair"
COSFACE = "cosface"
ARCFACE = "arcface"
VARIANTS = (SNPAIR, COSFACE, ARCFACE)

# Floor for sin(theta) in the angular chain factor; bounds the backward
# pass at coincident or antipodal pairs.
SIN_EPSILON = 1e-7


@dataclass(frozen=True)
class MarginConfig:
    """Margin variant and size (radians for arcface, cosine units for cosface)."""

    variant: str = ARCFACE
    m: float = 0.5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigInvalidError(
                f"margin.variant must be one of {VARIANTS}, got {self.variant!r}"
            )
        m = float(self.m)
        if np.isnan(m) or m < 0:
            raise ConfigInvalidError(f"margin.m must be a nonnegative real, got {self.m!r}")
        if self.variant == ARCFACE and m >= math.pi:
            raise ConfigInvalidError(f"margin.m must be < pi for arcface, got {self.m!r}")
        if self.variant == SNPAIR and m != 0.0:
            raise ConfigInvalidError(f"margin.m must be 0 for snpair, got {self.m!r}")
        object.__setattr__(self, "m", m)


@dataclass(frozen=True)
class ScoreSets:
    """Positive and negative similarity scores entering the loss.

    Negative scores carry origin tags ("cl" or "ml") aligned by index.
    """

    positive_scores: np.ndarray
    negative_scores: np.ndarray
    negative_origins: tuple[str, ...]

    def __post_init__(self):
        pos = np.asarray(self.positive_scores, dtype=np.float64)
        neg = np.asarray(self.negative_scores, dtype=np.float64)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValueError("scores must be finite")
        if len(self.negative_origins) != neg.shape[0]:
            raise ValueError("negative_origins must align with negative_scores")
        object.__setattr__(self, "positive_scores", pos)
        object.__setattr__(self, "negative_scores", neg)
        object.__setattr__(self, "negative_origins", tuple(self.negative_origins))


def sc_snpair(pairs: PairIndexSet, batch: LabeledBatch) -> ScoreSets:
    """Plain pairwise cosines for metric-view pairs, no margin.

    Accepts a set mixing positive and negative pairs and splits the
    scores by kind; raises OriginMismatchError on any non-ml pair.
    """
    if not pairs.all_origin(ML):
        raise OriginMismatchError("snpair scoring expects ml-origin pairs only")
    emb = batch.embeddings
    sims = np.clip(emb @ emb.T, -1.0, 1.0)
    pos_scores, neg_scores = [], []
    for p in pairs:
        s = sims[p.left, p.right]
        (pos_scores if p.kind == POSITIVE else neg_scores).append(s)
    return ScoreSets(
        np.asarray(pos_scores),
        np.asarray(neg_scores),
        tuple(ML for _ in neg_scores),
    )


def sc_cosface(positive_cos, m: float):
    """Positive score with the margin subtracted from the cosine.

    May leave [-1, 1] for positives near -1; negatives are untouched by
    construction (this transform is applied to positives only).
    """
    return positive_cos - m


def sc_arcface(positive_angle, m: float):
    """Positive score cos(theta + m), with theta + m clamped at pi."""
    shifted = np.minimum(np.asarray(positive_angle, dtype=np.float64) + m, np.pi)
    out = np.cos(shifted)
    return float(out) if out.ndim == 0 else out


def arcface_chain_factor(theta, m: float):
    """d cos(theta + m) / d cos(theta) = sin(theta + m) / sin(theta).

    The denominator is floored at SIN_EPSILON so the factor stays finite
    at coincident or antipodal pairs. Where theta + m >= pi the score is
    clamped to -1 and the factor is 0 (flat region), keeping the
    backward pass consistent with the clamped forward.
    """
    th = np.asarray(theta, dtype=np.float64)
    factor = np.sin(th + m) / np.maximum(np.sin(th), SIN_EPSILON)
    out = np.where(th + m < np.pi, factor, 0.0)
    return float(out) if out.ndim == 0 else out


def positive_transform(cos_values, cfg: MarginConfig):
    """Apply the variant's positive-score transform to raw cosines."""
    c = np.asarray(cos_values, dtype=np.float64)
    if cfg.variant == SNPAIR:
        return c.copy()
    if cfg.variant == COSFACE:
        return sc_cosface(c, cfg.m)
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    return sc_arcface(theta, cfg.m)


def positive_chain(cos_values, cfg: MarginConfig):
    """Derivative of the positive transform with respect to the raw cosine."""
    c = np.asarray(cos_values, dtype=np.float64)
    if cfg.variant in (SNPAIR, COSFACE):
        return np.ones_like(c)
    theta = np.arccos(np.clip(c, -1.0, 1.0))
    return np.asarray(arcface_chain_factor(theta, cfg.m))
