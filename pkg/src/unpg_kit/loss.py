"""The unified pair-similarity loss, forward and backward.

Per anchor i with positive score s^p_i and negative scores {s^n_j}:

    L_i = log(1 + sum_j exp(gamma * (s^n_j - s^p_i)))
        = -log P_i,   P_i = e^{g s^p_i} / (e^{g s^p_i} + sum_j e^{g s^n_j})

and the batch loss is the mean over anchors. The extended form splits
the negatives into per-anchor classification scores and one shared
metric-view list that every anchor's normalizer reuses (the shared list
is duplicated across anchors, not re-weighted).

All normalizers use max-shifted log-sum-exp so gamma = 64 with scores in
[-1.5, 1.5] stays finite. The backward pass is closed form:

    dL/ds^p_i = -gamma * (1 - P_i) / K
    dL/ds^n_j = +gamma * w_ij / K,   w_ij = e^{g s^n_j} / Z_i

`batch_forward` composes the whole pipeline (pair generation, noise
filtering, margin transform, loss) on raw arrays and returns exact
gradients with respect to the unnormalized embeddings and class weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigInvalidError,
    DimensionMismatchError,
    EmptyPositivesError,
    LabelOutOfRangeError,
    ZeroNormError,
)
from .margins import MarginConfig, positive_chain, positive_transform
from .pairs import FilterConfig, filter_noise
from .sphere import ZERO_NORM_THRESHOLD

DEFAULT_GAMMA = 64.0


@dataclass
class LossConfig:
    """Scale factor, margin, whisker band, and the unified-negatives switch."""

    gamma: float = DEFAULT_GAMMA
    margin: MarginConfig = field(default_factory=MarginConfig)
    whisker: FilterConfig = field(default_factory=FilterConfig)
    unpg_enabled: bool = True

    def __post_init__(self):
        g = float(self.gamma)
        if not np.isfinite(g) or g <= 0:
            raise ConfigInvalidError(f"gamma must be a positive real, got {self.gamma!r}")
        self.gamma = g


@dataclass
class LossOutput:
    """Forward values plus the score-level gradient of the mean loss.

    grad_neg is a (K, L) matrix of per-anchor partials; when the
    negatives came as one shared list, column j collects that score's
    contribution through anchor i and the total derivative of the shared
    score is the column sum. num_cl_negatives marks where the
    classification columns end and the shared metric columns begin
    (None when the split does not apply).
    """

    value: float
    per_anchor: np.ndarray  # (K,)
    softmax_prob: np.ndarray  # (K,) P_i
    neg_weights: np.ndarray  # (K, L) softmax weight of each negative term
    grad_pos: np.ndarray  # (K,)
    grad_neg: np.ndarray  # (K, L)
    num_cl_negatives: int | None = None

    @property
    def grad_neg_cl(self) -> np.ndarray:
        if self.num_cl_negatives is None:
            raise ValueError("no cl/ml split recorded for this output")
        return self.grad_neg[:, : self.num_cl_negatives]

    @property
    def grad_neg_ml(self) -> np.ndarray:
        if self.num_cl_negatives is None:
            raise ValueError("no cl/ml split recorded for this output")
        return self.grad_neg[:, self.num_cl_negatives:]


def _check_scores(name: str, arr: np.ndarray) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")


def _as_neg_matrix(neg_scores, num_anchors: int) -> np.ndarray:
    """Coerce negatives to (K, L): a 1-D list is shared by every anchor."""
    neg = np.asarray(neg_scores, dtype=np.float64)
    if neg.ndim == 1:
        neg = np.broadcast_to(neg, (num_anchors, neg.shape[0]))
    if neg.ndim != 2 or neg.shape[0] != num_anchors:
        raise DimensionMismatchError(
            f"negative scores must be (L,) or ({num_anchors}, L), got shape {neg.shape}"
        )
    return neg


def loss_backward(output: LossOutput, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Score-level gradients of the mean loss from the stored softmax terms."""
    k = output.per_anchor.shape[0]
    grad_pos = -gamma * (1.0 - output.softmax_prob) / k
    grad_neg = gamma * output.neg_weights / k
    return grad_pos, grad_neg


def unified_loss(pos_scores, neg_scores, gamma: float) -> LossOutput:
    """Mean softmax-style pair loss over K anchors.

    `neg_scores` is either one list shared by every anchor or a (K, L)
    matrix of per-anchor negatives. An empty negative list gives zero
    loss and zero gradients.
    """
    if gamma <= 0 or not np.isfinite(gamma):
        raise ConfigInvalidError(f"gamma must be a positive real, got {gamma!r}")
    pos = np.atleast_1d(np.asarray(pos_scores, dtype=np.float64))
    if pos.ndim != 1:
        raise DimensionMismatchError(f"positive scores must be 1-D, got shape {pos.shape}")
    if pos.shape[0] == 0:
        raise EmptyPositivesError("at least one positive score is required")
    _check_scores("positive scores", pos)
    k = pos.shape[0]
    neg = _as_neg_matrix(neg_scores, k)
    _check_scores("negative scores", neg)

    zp = gamma * pos
    if neg.shape[1] == 0:
        per_anchor = np.zeros(k)
        prob = np.ones(k)
        weights = np.zeros((k, 0))
    else:
        zn = gamma * neg
        shift = np.maximum(zp, zn.max(axis=1))
        log_z = shift + np.log(
            np.exp(zp - shift) + np.exp(zn - shift[:, None]).sum(axis=1)
        )
        per_anchor = log_z - zp
        prob = np.exp(zp - log_z)
        weights = np.exp(zn - log_z[:, None])

    out = LossOutput(
        value=float(per_anchor.mean()),
        per_anchor=per_anchor,
        softmax_prob=prob,
        neg_weights=weights,
        grad_pos=np.zeros(k),
        grad_neg=np.zeros((k, neg.shape[1])),
    )
    out.grad_pos, out.grad_neg = loss_backward(out, gamma)
    return out


def unified_loss_unpg(pos_scores, cl_neg, ml_neg, gamma: float) -> LossOutput:
    """The unified loss with the shared metric-view negative list.

    Each anchor's normalizer sums its own classification negatives plus
    the one shared metric list (duplicated across anchors). With an
    empty metric list this is exactly `unified_loss` on the
    classification negatives.
    """
    if gamma <= 0 or not np.isfinite(gamma):
        raise ConfigInvalidError(f"gamma must be a positive real, got {gamma!r}")
    pos = np.atleast_1d(np.asarray(pos_scores, dtype=np.float64))
    if pos.shape[0] == 0:
        raise EmptyPositivesError("at least one positive score is required")
    _check_scores("positive scores", pos)
    k = pos.shape[0]
    cl = _as_neg_matrix(cl_neg, k)
    _check_scores("cl negative scores", cl)
    ml = np.asarray(ml_neg, dtype=np.float64)
    if ml.ndim != 1:
        raise DimensionMismatchError(f"ml negatives must be a 1-D shared list, got shape {ml.shape}")
    _check_scores("ml negative scores", ml)

    n_cl = cl.shape[1]
    if ml.shape[0] == 0:
        out = unified_loss(pos, cl, gamma)
        out.num_cl_negatives = n_cl
        return out

    zp = gamma * pos
    zcl = gamma * cl
    zml = gamma * ml
    shift = np.maximum(zp, zml.max())
    if n_cl:
        shift = np.maximum(shift, zcl.max(axis=1))
    z_total = (
        np.exp(zp - shift)
        + np.exp(zcl - shift[:, None]).sum(axis=1)
        + np.exp(zml[None, :] - shift[:, None]).sum(axis=1)
    )
    log_z = shift + np.log(z_total)
    per_anchor = log_z - zp
    prob = np.exp(zp - log_z)
    weights = np.hstack(
        [np.exp(zcl - log_z[:, None]), np.exp(zml[None, :] - log_z[:, None])]
    )

    out = LossOutput(
        value=float(per_anchor.mean()),
        per_anchor=per_anchor,
        softmax_prob=prob,
        neg_weights=weights,
        grad_pos=np.zeros(k),
        grad_neg=np.zeros_like(weights),
        num_cl_negatives=n_cl,
    )
    out.grad_pos, out.grad_neg = loss_backward(out, gamma)
    return out


@dataclass
class BatchArtifacts:
    """Everything one composed forward/backward pass produced."""

    loss: LossOutput
    grad_embeddings: np.ndarray  # (N, d), w.r.t. raw embeddings
    grad_weights: np.ndarray  # (C, d), w.r.t. raw class weights
    positive_raw_cos: np.ndarray  # (N,) cosines before the margin
    positive_scores: np.ndarray  # (N,) after the margin
    cl_negative_scores: np.ndarray  # (N, C-1)
    ml_scores: np.ndarray  # (M,) metric negatives incl. injected outliers
    ml_retained: np.ndarray  # (M,) bool, whisker filter outcome
    ml_pair_indices: np.ndarray  # (M, 2) sample indices; -1 rows are injected


def _row_norms(name: str, arr: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(arr, axis=1)
    if np.any(norms < ZERO_NORM_THRESHOLD):
        bad = int(np.argmin(norms))
        raise ZeroNormError(f"{name} row {bad} has norm {norms[bad]:.3e}")
    return norms


def batch_forward(
    embeddings,
    labels,
    weights,
    cfg: LossConfig,
    outlier_negatives: int = 0,
) -> BatchArtifacts:
    """Composed forward and backward pass on raw (unnormalized) arrays.

    Pipeline: normalize, generate classification pairs for every anchor,
    optionally add the batch's metric-view negatives (whisker-filtered,
    shared across anchors), apply the margin to the positive cosine, and
    evaluate the loss. Gradients are exact for the computation as run,
    with the retention mask treated as constant.

    `outlier_negatives` appends that many synthetic similarity entries
    at +1 and as many at -1 to the metric list before filtering; they
    carry no pair indices and receive no gradient (a diagnostic for the
    filter's effect on extreme negatives).
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    w = np.asarray(weights, dtype=np.float64)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionMismatchError(
            f"embeddings {x.shape} and weights {w.shape} must be 2-D with a common dim"
        )
    n, d = x.shape
    c = w.shape[0]
    if y.shape != (n,):
        raise DimensionMismatchError(f"labels shape {y.shape} does not match batch size {n}")
    if np.any(y < 0) or np.any(y >= c):
        raise LabelOutOfRangeError(f"labels must lie in [0, {c})")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
        raise ValueError("embeddings and weights must be finite")

    xn = _row_norms("embedding", x)
    wn = _row_norms("weight", w)
    xh = x / xn[:, None]
    wh = w / wn[:, None]

    sim_cw = xh @ wh.T  # (N, C)
    sim_clipped = np.clip(sim_cw, -1.0, 1.0)
    rows = np.arange(n)
    pos_raw = sim_clipped[rows, y]
    pos_scores = positive_transform(pos_raw, cfg.margin)
    chain = positive_chain(pos_raw, cfg.margin)

    neg_mask = np.ones((n, c), dtype=bool)
    neg_mask[rows, y] = False
    cl_neg = sim_clipped[neg_mask].reshape(n, c - 1)

    if cfg.unpg_enabled:
        iu, ju = np.triu_indices(n, k=1)
        diff = y[iu] != y[ju]
        iu, ju = iu[diff], ju[diff]
        sim_xx = xh @ xh.T
        ml_scores = np.clip(sim_xx[iu, ju], -1.0, 1.0)
        ml_idx = np.stack([iu, ju], axis=1) if iu.size else np.zeros((0, 2), dtype=int)
        if outlier_negatives > 0:
            inj = np.concatenate(
                [np.ones(outlier_negatives), -np.ones(outlier_negatives)]
            )
            ml_scores = np.concatenate([ml_scores, inj])
            ml_idx = np.vstack([ml_idx, -np.ones((inj.shape[0], 2), dtype=int)])
        if ml_scores.size:
            retained = filter_noise(ml_scores, cfg.whisker)
        else:
            retained = np.zeros(0, dtype=bool)
        ml_kept = ml_scores[retained]
        idx_kept = ml_idx[retained]
    else:
        sim_xx = None
        ml_scores = np.zeros(0)
        ml_idx = np.zeros((0, 2), dtype=int)
        retained = np.zeros(0, dtype=bool)
        ml_kept = np.zeros(0)
        idx_kept = ml_idx

    out = unified_loss_unpg(pos_scores, cl_neg, ml_kept, cfg.gamma)

    # Backward: coefficient of each raw cosine in the mean loss.
    coeff = np.zeros((n, c))
    coeff[rows, y] = out.grad_pos * chain
    coeff[neg_mask] = out.grad_neg_cl.ravel()

    proj = (coeff * sim_cw).sum(axis=1, keepdims=True)
    grad_x = (coeff @ wh - proj * xh) / xn[:, None]
    grad_w = (coeff.T @ xh - (coeff * sim_cw).sum(axis=0)[:, None] * wh) / wn[:, None]

    if ml_kept.size:
        total_ml = out.grad_neg_ml.sum(axis=0)  # shared list: sum over anchors
        real = idx_kept[:, 0] >= 0
        if np.any(real):
            a = idx_kept[real, 0]
            b = idx_kept[real, 1]
            g = total_ml[real]
            gm = np.zeros((n, n))
            gm[a, b] = g
            gm[b, a] = g
            proj_m = (gm * sim_xx).sum(axis=1, keepdims=True)
            grad_x += (gm @ xh - proj_m * xh) / xn[:, None]

    return BatchArtifacts(
        loss=out,
        grad_embeddings=grad_x,
        grad_weights=grad_w,
        positive_raw_cos=pos_raw,
        positive_scores=np.asarray(pos_scores),
        cl_negative_scores=cl_neg,
        ml_scores=ml_scores,
        ml_retained=retained,
        ml_pair_indices=ml_idx,
    )


def embedding_backward(
    embeddings, labels, weights, cfg: LossConfig, outlier_negatives: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the composed loss w.r.t. raw embeddings and weights."""
    art = batch_forward(embeddings, labels, weights, cfg, outlier_negatives)
    return art.grad_embeddings, art.grad_weights
