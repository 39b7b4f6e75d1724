"""Verification and identification metrics plus distribution diagnostics.

Threshold metrics follow deterministic conventions on discrete data:

* TAR@FAR accepts strictly above the threshold, and the threshold is
  the smallest value whose false-accept rate stays at or below the
  target (a negative order statistic, or -inf when everything passes);
* best-threshold accuracy accepts at or above the threshold, sweeping
  candidate midpoints between consecutive distinct scores and breaking
  ties toward the smallest threshold;
* rank-1 breaks gallery ties toward the lowest index.

Distribution diagnostics: the histogram-intersection overlap count over
[-1, 1] and the separation gap (smallest positive minus largest
negative similarity, positive exactly when the sampled sets are fully
separated).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmptyGalleryError,
    EmptyInputError,
    EmptyNegativesError,
    InsufficientPairsError,
)
from .sphere import normalize_rows

DEFAULT_NUM_BINS = 200
DEFAULT_SAMPLE_COUNT = 256
SCORE_RANGE = (-1.0, 1.0)


@dataclass(frozen=True)
class ScoredPairs:
    """Positive and negative similarity scores collected for evaluation."""

    positive_scores: np.ndarray
    negative_scores: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positive_scores, dtype=np.float64).ravel()
        neg = np.asarray(self.negative_scores, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(neg))):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "positive_scores", pos)
        object.__setattr__(self, "negative_scores", neg)


@dataclass
class MetricsReport:
    """One evaluation snapshot; serializes to a schema-validated JSON document."""

    tar_at_far: list[tuple[float, float]]
    verification_accuracy: float
    best_threshold: float
    rank1: float
    overlap_count: int
    wdfs_gap: float
    theta_p_max: float
    theta_n_min: float

    def to_dict(self) -> dict:
        return {
            "tar_at_far": [[float(f), float(t)] for f, t in self.tar_at_far],
            "verification_accuracy": float(self.verification_accuracy),
            "best_threshold": float(self.best_threshold),
            "rank1": float(self.rank1),
            "overlap_count": int(self.overlap_count),
            "wdfs_gap": float(self.wdfs_gap),
            "theta_p_max": float(self.theta_p_max),
            "theta_n_min": float(self.theta_n_min),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "MetricsReport":
        return cls(
            tar_at_far=[(float(f), float(t)) for f, t in data["tar_at_far"]],
            verification_accuracy=float(data["verification_accuracy"]),
            best_threshold=float(data["best_threshold"]),
            rank1=float(data["rank1"]),
            overlap_count=int(data["overlap_count"]),
            wdfs_gap=float(data["wdfs_gap"]),
            theta_p_max=float(data["theta_p_max"]),
            theta_n_min=float(data["theta_n_min"]),
        )


def tar_at_far(pairs: ScoredPairs, far_targets) -> list[tuple[float, float]]:
    """True-accept rate at each false-accept target.

    For target f the threshold is the smallest tau with
    (#negatives > tau) / |negatives| <= f; the returned rate is
    (#positives > tau) / |positives|.
    """
    neg = pairs.negative_scores
    pos = pairs.positive_scores
    if neg.size == 0:
        raise EmptyNegativesError("TAR@FAR needs at least one negative score")
    targets = [float(f) for f in far_targets]
    if any(f < 0 or f > 1 for f in targets):
        raise ValueError("FAR targets must lie in [0, 1]")
    neg_desc = np.sort(neg)[::-1]
    n_neg = neg.shape[0]
    # rates[k] = k / n_neg is the FAR of admitting the k highest negatives
    rates = np.arange(n_neg + 1) / n_neg
    out = []
    for f in targets:
        k = int(np.searchsorted(rates, f, side="right")) - 1
        if k >= n_neg:
            tau = -np.inf
        else:
            tau = neg_desc[k]
        tar = float(np.mean(pos > tau)) if pos.size else 0.0
        out.append((f, tar))
    return out


def verification_accuracy(pairs: ScoredPairs) -> tuple[float, float]:
    """Best-threshold accuracy with accept iff score >= threshold.

    Candidates are midpoints between consecutive distinct scores plus
    one below and one above all scores; ties go to the smallest.
    Returns (accuracy, best_threshold).
    """
    pos = np.sort(pairs.positive_scores)
    neg = np.sort(pairs.negative_scores)
    if pos.size == 0 or neg.size == 0:
        raise EmptyInputError("verification accuracy needs both positives and negatives")
    distinct = np.unique(np.concatenate([pos, neg]))
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    candidates = np.concatenate([[distinct[0] - 1.0], mids, [distinct[-1] + 1.0]])
    tp = pos.shape[0] - np.searchsorted(pos, candidates, side="left")
    tn = np.searchsorted(neg, candidates, side="left")
    acc = (tp + tn) / (pos.shape[0] + neg.shape[0])
    best = int(np.argmax(acc))  # first max = smallest candidate
    return float(acc[best]), float(candidates[best])


def rank1(probe_embeddings, probe_labels, gallery_embeddings, gallery_labels) -> float:
    """Fraction of probes whose highest-cosine gallery row shares their class."""
    gallery = np.asarray(gallery_embeddings, dtype=np.float64)
    probes = np.asarray(probe_embeddings, dtype=np.float64)
    g_labels = np.asarray(gallery_labels)
    p_labels = np.asarray(probe_labels)
    if gallery.ndim != 2 or gallery.shape[0] == 0:
        raise EmptyGalleryError("gallery must be a nonempty 2-D array")
    if probes.ndim != 2 or probes.shape[0] == 0:
        raise EmptyInputError("probes must be a nonempty 2-D array")
    if probes.shape[1] != gallery.shape[1]:
        raise DimensionMismatchError(
            f"probe dim {probes.shape[1]} does not match gallery dim {gallery.shape[1]}"
        )
    sims = normalize_rows(probes) @ normalize_rows(gallery).T
    nearest = np.argmax(sims, axis=1)  # ties resolve to the lowest index
    return float(np.mean(g_labels[nearest] == p_labels))


def overlap_count(pairs: ScoredPairs, num_bins: int = DEFAULT_NUM_BINS) -> int:
    """Histogram-intersection count between the two score lists over [-1, 1]."""
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    pos_hist, _ = np.histogram(pairs.positive_scores, bins=num_bins, range=SCORE_RANGE)
    neg_hist, _ = np.histogram(pairs.negative_scores, bins=num_bins, range=SCORE_RANGE)
    return int(np.minimum(pos_hist, neg_hist).sum())


def wdfs_gap(pairs: ScoredPairs) -> tuple[float, float, float]:
    """Separation gap min(positives) - max(negatives) and the matching angles.

    The gap is positive exactly when the sampled sets are fully
    separated. Returns (gap, theta_p_max, theta_n_min) with the angles
    of the worst positive and hardest negative.
    """
    pos = pairs.positive_scores
    neg = pairs.negative_scores
    if pos.size == 0 or neg.size == 0:
        raise EmptyInputError("the separation gap needs both positives and negatives")
    lo_pos = float(pos.min())
    hi_neg = float(neg.max())
    theta_p_max = float(np.arccos(np.clip(lo_pos, -1.0, 1.0)))
    theta_n_min = float(np.arccos(np.clip(hi_neg, -1.0, 1.0)))
    return lo_pos - hi_neg, theta_p_max, theta_n_min


def hard_negative_sample(positive_scores, negative_scores, count: int,
                         rng: np.random.Generator) -> ScoredPairs:
    """`count` random positives and the `count` highest-similarity negatives."""
    pos = np.asarray(positive_scores, dtype=np.float64).ravel()
    neg = np.asarray(negative_scores, dtype=np.float64).ravel()
    if count > pos.shape[0] or count > neg.shape[0]:
        raise InsufficientPairsError(
            f"requested {count} pairs, have {pos.shape[0]} positives / {neg.shape[0]} negatives"
        )
    chosen = rng.choice(pos.shape[0], size=count, replace=False)
    hardest = np.sort(neg)[neg.shape[0] - count:]
    return ScoredPairs(pos[chosen], hardest)


def pairwise_scores(embeddings, labels) -> ScoredPairs:
    """All same-class and different-class cosines among the given embeddings."""
    emb = normalize_rows(np.asarray(embeddings, dtype=np.float64))
    lab = np.asarray(labels)
    if lab.shape[0] != emb.shape[0]:
        raise DimensionMismatchError("labels must align with embedding rows")
    sims = np.clip(emb @ emb.T, -1.0, 1.0)
    iu, ju = np.triu_indices(emb.shape[0], k=1)
    same = lab[iu] == lab[ju]
    vals = sims[iu, ju]
    return ScoredPairs(vals[same], vals[~same])


def build_metrics_report(
    embeddings,
    labels,
    gallery_embeddings,
    gallery_labels,
    far_targets,
    num_bins: int = DEFAULT_NUM_BINS,
    sample_count: int = DEFAULT_SAMPLE_COUNT,
    rng: np.random.Generator | None = None,
) -> MetricsReport:
    """Full evaluation snapshot for an embedding table.

    Threshold metrics and rank-1 use every pair; the overlap count and
    separation gap use the sampling protocol (random positives, the
    hardest negatives, `sample_count` each, clipped to availability).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    scores = pairwise_scores(embeddings, labels)
    tar = tar_at_far(scores, far_targets)
    acc, thr = verification_accuracy(scores)
    r1 = rank1(embeddings, labels, gallery_embeddings, gallery_labels)
    k = min(sample_count, scores.positive_scores.shape[0], scores.negative_scores.shape[0])
    sampled = hard_negative_sample(scores.positive_scores, scores.negative_scores, k, rng)
    overlap = overlap_count(sampled, num_bins)
    gap, theta_p, theta_n = wdfs_gap(sampled)
    return MetricsReport(
        tar_at_far=tar,
        verification_accuracy=acc,
        best_threshold=thr,
        rank1=r1,
        overlap_count=overlap,
        wdfs_gap=gap,
        theta_p_max=theta_p,
        theta_n_min=theta_n,
    )


def export_histogram_csv(scores, path: str, num_bins: int = DEFAULT_NUM_BINS) -> None:
    """Write (bin_center, count) rows for one score list over [-1, 1]."""
    vals = np.asarray(scores, dtype=np.float64).ravel()
    counts, edges = np.histogram(vals, bins=num_bins, range=SCORE_RANGE)
    centers = (edges[:-1] + edges[1:]) / 2.0
    with open(path, "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_center", "count"])
        for center, count in zip(centers, counts):
            writer.writerow([f"{center:.17g}", int(count)])
