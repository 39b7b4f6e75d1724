"""Deterministic desk-scale training harness.

Synthetic clustered data on the unit sphere, class-balanced P x Q batch
sampling, and SGD with momentum under a linear warm-up plus cosine
annealing schedule. Two parameterizations:

* ``free_embedding``: every sample's embedding is a parameter row,
  isolating the loss geometry from any encoder;
* ``linear_encoder``: a square matrix maps raw inputs to embeddings.

Embedding and class-weight rows are renormalized to unit norm after
every update; weight decay acts on the raw parameters beforehand.
Checkpoints are CSV tables (17 significant digits per value) with a
JSON sidecar carrying config, labels, and the step counter.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import (
    CheckpointCorruptError,
    ConfigInvalidError,
    InsufficientDataError,
)
from .loss import LossConfig, LossOutput, batch_forward
from .pairs import ClassWeightMatrix, LabeledBatch
from .sphere import normalize_rows

FREE_EMBEDDING = "free_embedding"
LINEAR_ENCODER = "linear_encoder"
MODES = (FREE_EMBEDDING, LINEAR_ENCODER)

_CHECKPOINT_META = "meta.json"
_CHECKPOINT_EMBEDDINGS = "embeddings.csv"
_CHECKPOINT_WEIGHTS = "weights.csv"
_CHECKPOINT_ENCODER = "encoder.csv"


@dataclass(frozen=True)
class SyntheticSpec:
    """Clustered unit-sphere dataset: per class a random mean direction,
    samples normalized from mean + gaussian noise / concentration."""

    num_classes: int = 8
    samples_per_class: int = 16
    dim: int = 8
    cluster_concentration: float = 4.0
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigInvalidError(f"dataset.num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 2:
            raise ConfigInvalidError(f"dataset.dim must be >= 2, got {self.dim}")
        if self.samples_per_class < 1:
            raise ConfigInvalidError(
                f"dataset.samples_per_class must be >= 1, got {self.samples_per_class}"
            )
        if not self.cluster_concentration > 0:
            raise ConfigInvalidError(
                f"dataset.cluster_concentration must be > 0, got {self.cluster_concentration}"
            )

    @property
    def size(self) -> int:
        return self.num_classes * self.samples_per_class


@dataclass
class TrainConfig:
    """Optimization settings; batch size is classes_per_batch * samples_per_class_per_batch."""

    mode: str = FREE_EMBEDDING
    classes_per_batch: int = 4
    samples_per_class_per_batch: int = 4
    base_lr: float = 0.1
    warmup_epochs: int = 3
    max_epochs: int = 20
    steps_per_epoch: int = 25
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    outlier_negatives: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigInvalidError(f"train.mode must be one of {MODES}, got {self.mode!r}")
        if self.classes_per_batch < 1 or self.samples_per_class_per_batch < 1:
            raise ConfigInvalidError("train.classes_per_batch and samples_per_class_per_batch must be >= 1")
        if not self.base_lr > 0:
            raise ConfigInvalidError(f"train.base_lr must be > 0, got {self.base_lr!r}")
        if self.max_epochs < 0 or self.warmup_epochs < 0:
            raise ConfigInvalidError("train.max_epochs and warmup_epochs must be >= 0")
        # max_epochs == 0 is the degenerate no-training run; otherwise the
        # cosine phase needs at least one epoch after warm-up.
        if self.max_epochs > 0 and not self.warmup_epochs < self.max_epochs:
            raise ConfigInvalidError(
                f"train.warmup_epochs ({self.warmup_epochs}) must be < max_epochs ({self.max_epochs})"
            )
        if self.steps_per_epoch < 1:
            raise ConfigInvalidError(f"train.steps_per_epoch must be >= 1, got {self.steps_per_epoch}")
        if not 0 <= self.momentum < 1:
            raise ConfigInvalidError(f"train.momentum must be in [0, 1), got {self.momentum!r}")
        if self.weight_decay < 0:
            raise ConfigInvalidError(f"train.weight_decay must be >= 0, got {self.weight_decay!r}")
        if self.outlier_negatives < 0:
            raise ConfigInvalidError(f"train.outlier_negatives must be >= 0, got {self.outlier_negatives}")

    @property
    def batch_size(self) -> int:
        return self.classes_per_batch * self.samples_per_class_per_batch

    @property
    def total_steps(self) -> int:
        return self.max_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch


@dataclass
class OptimizerState:
    """Trainable parameters, their momentum buffers, and the schedule position."""

    params: dict[str, np.ndarray]
    momentum: dict[str, np.ndarray]
    step: int = 0
    lr: float = 0.0


def gen_synthetic(spec: SyntheticSpec, means: np.ndarray | None = None):
    """Unit-norm dataset (vectors, labels), deterministic under spec.seed.

    `means` overrides the per-class mean directions (rows are normalized
    here), which lets tests construct e.g. antipodal clusters.
    """
    rng = np.random.default_rng(spec.seed)
    if means is None:
        means = rng.standard_normal((spec.num_classes, spec.dim))
    means = normalize_rows(np.asarray(means, dtype=np.float64))
    if means.shape != (spec.num_classes, spec.dim):
        raise ConfigInvalidError(
            f"means shape {means.shape} does not match spec ({spec.num_classes}, {spec.dim})"
        )
    chunks = []
    for c in range(spec.num_classes):
        noise = rng.standard_normal((spec.samples_per_class, spec.dim))
        chunks.append(means[c] + noise / spec.cluster_concentration)
    vectors = normalize_rows(np.vstack(chunks))
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    return vectors, labels


def sample_batch(vectors, labels, classes_per_batch: int, samples_per_class: int,
                 rng: np.random.Generator) -> LabeledBatch:
    """Class-balanced batch: P distinct classes, Q samples each, drawn
    uniformly without replacement. Guarantees P*Q*(Q-1)/2 metric-view
    positives."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes_per_batch > classes.shape[0]:
        raise InsufficientDataError(
            f"requested {classes_per_batch} classes, dataset has {classes.shape[0]}"
        )
    chosen = rng.choice(classes, size=classes_per_batch, replace=False)
    picks = []
    for c in chosen:
        pool = np.flatnonzero(labels == c)
        if samples_per_class > pool.shape[0]:
            raise InsufficientDataError(
                f"class {c} has {pool.shape[0]} samples, requested {samples_per_class}"
            )
        picks.append(rng.choice(pool, size=samples_per_class, replace=False))
    indices = np.concatenate(picks)
    return LabeledBatch(vectors[indices], labels[indices], indices=indices)


def init_weights(num_classes: int, dim: int, seed: int) -> ClassWeightMatrix:
    """Class weights sampled uniformly on the sphere (normalized gaussian rows)."""
    rng = np.random.default_rng(seed)
    return ClassWeightMatrix(normalize_rows(rng.standard_normal((num_classes, dim))))


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Linear warm-up to base_lr, then cosine annealing to 0 at the last step."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    total = cfg.total_steps
    warm = cfg.warmup_steps
    if total == 0:
        return 0.0
    if step < warm:
        return cfg.base_lr * step / warm
    progress = min((step - warm) / (total - warm), 1.0)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def init_state(cfg: TrainConfig, dataset_vectors, dataset_labels) -> OptimizerState:
    """Parameters for the chosen mode plus zeroed momentum buffers.

    Free mode starts the embedding table at the dataset vectors; encoder
    mode draws a gaussian matrix scaled by 1/sqrt(dim)."""
    vectors = np.asarray(dataset_vectors, dtype=np.float64)
    labels = np.asarray(dataset_labels)
    num_classes = int(labels.max()) + 1
    dim = vectors.shape[1]
    params = {"weights": init_weights(num_classes, dim, cfg.seed).weights.copy()}
    if cfg.mode == FREE_EMBEDDING:
        params["embeddings"] = vectors.copy()
    else:
        enc_rng = np.random.default_rng(cfg.seed + 3)
        params["encoder"] = enc_rng.standard_normal((dim, dim)) / math.sqrt(dim)
    momentum = {k: np.zeros_like(v) for k, v in params.items()}
    return OptimizerState(params=params, momentum=momentum)


def _sgd_update(state: OptimizerState, grads: dict[str, np.ndarray], lr: float,
                momentum: float, weight_decay: float) -> None:
    """One momentum-SGD step, renormalizing spherical parameter rows.

    Buffers always accumulate; parameters move only when lr != 0, so a
    zero-lr step leaves them bitwise untouched."""
    for name, grad in grads.items():
        buf = state.momentum[name]
        buf *= momentum
        buf += grad
        if weight_decay:
            buf += weight_decay * state.params[name]
        if lr != 0.0:
            state.params[name] -= lr * buf
            if name in ("embeddings", "weights"):
                state.params[name] = normalize_rows(state.params[name])


def train_step(state: OptimizerState, batch: LabeledBatch, cfg: TrainConfig,
               inputs: np.ndarray | None = None) -> tuple[OptimizerState, LossOutput]:
    """One optimization step on a batch; returns the (mutated) state and loss.

    Encoder mode needs `inputs`, the raw dataset rows matching the batch.
    """
    lr = lr_at(state.step, cfg)
    if cfg.mode == FREE_EMBEDDING:
        if batch.indices is None:
            raise ValueError("free_embedding mode needs batch.indices to route gradients")
        emb = state.params["embeddings"][batch.indices]
        art = batch_forward(emb, batch.labels, state.params["weights"], cfg.loss,
                            cfg.outlier_negatives)
        grad_emb = np.zeros_like(state.params["embeddings"])
        grad_emb[batch.indices] = art.grad_embeddings
        grads = {"embeddings": grad_emb, "weights": art.grad_weights}
    else:
        if inputs is None:
            raise ValueError("linear_encoder mode needs the raw input rows")
        x_in = np.asarray(inputs, dtype=np.float64)
        emb = x_in @ state.params["encoder"].T
        art = batch_forward(emb, batch.labels, state.params["weights"], cfg.loss,
                            cfg.outlier_negatives)
        grads = {
            "encoder": art.grad_embeddings.T @ x_in,
            "weights": art.grad_weights,
        }
    _sgd_update(state, grads, lr, cfg.momentum, cfg.weight_decay)
    state.step += 1
    state.lr = lr
    return state, art.loss


def current_embeddings(state: OptimizerState, cfg: TrainConfig, dataset_vectors) -> np.ndarray:
    """Unit-norm embedding table for the whole dataset under the current parameters."""
    if cfg.mode == FREE_EMBEDDING:
        return normalize_rows(state.params["embeddings"])
    raw = np.asarray(dataset_vectors, dtype=np.float64) @ state.params["encoder"].T
    return normalize_rows(raw)


def _write_csv_matrix(path: str, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for row in matrix:
            fh.write(",".join(f"{v:.17g}" for v in row))
            fh.write("\n")


def _read_csv_matrix(path: str) -> np.ndarray:
    try:
        rows = []
        with open(path, "r", encoding="ascii") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rows.append([float(tok) for tok in line.split(",")])
    except (OSError, ValueError) as exc:
        raise CheckpointCorruptError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise CheckpointCorruptError(f"{path} is empty")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise CheckpointCorruptError(f"{path} has ragged rows")
    arr = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise CheckpointCorruptError(f"{path} contains non-finite values")
    return arr


def save_checkpoint(directory: str, state: OptimizerState, cfg: TrainConfig,
                    dataset_vectors, dataset_labels, config_dict: dict | None = None) -> None:
    """Write the embedding table, class weights, optional encoder, and a
    JSON sidecar with mode, step, labels, and the run config."""
    os.makedirs(directory, exist_ok=True)
    emb = current_embeddings(state, cfg, dataset_vectors)
    _write_csv_matrix(os.path.join(directory, _CHECKPOINT_EMBEDDINGS), emb)
    _write_csv_matrix(os.path.join(directory, _CHECKPOINT_WEIGHTS), state.params["weights"])
    if cfg.mode == LINEAR_ENCODER:
        _write_csv_matrix(os.path.join(directory, _CHECKPOINT_ENCODER), state.params["encoder"])
    meta = {
        "mode": cfg.mode,
        "step": state.step,
        "dim": int(emb.shape[1]),
        "num_classes": int(state.params["weights"].shape[0]),
        "labels": [int(v) for v in np.asarray(dataset_labels)],
        "config": config_dict if config_dict is not None else {},
    }
    with open(os.path.join(directory, _CHECKPOINT_META), "w", encoding="ascii") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(directory: str) -> dict:
    """Read a checkpoint directory back into arrays plus its metadata.

    Raises CheckpointCorruptError for missing files, ragged or
    non-numeric rows, non-finite values, or inconsistent shapes."""
    meta_path = os.path.join(directory, _CHECKPOINT_META)
    try:
        with open(meta_path, "r", encoding="ascii") as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointCorruptError(f"cannot read {meta_path}: {exc}") from exc
    for key in ("mode", "step", "dim", "num_classes", "labels"):
        if key not in meta:
            raise CheckpointCorruptError(f"{meta_path} is missing key {key!r}")
    embeddings = _read_csv_matrix(os.path.join(directory, _CHECKPOINT_EMBEDDINGS))
    weights = _read_csv_matrix(os.path.join(directory, _CHECKPOINT_WEIGHTS))
    if embeddings.shape[1] != int(meta["dim"]) or weights.shape[1] != int(meta["dim"]):
        raise CheckpointCorruptError("checkpoint dim does not match its metadata")
    if weights.shape[0] != int(meta["num_classes"]):
        raise CheckpointCorruptError("checkpoint class count does not match its metadata")
    labels = np.asarray(meta["labels"], dtype=int)
    if labels.shape[0] != embeddings.shape[0]:
        raise CheckpointCorruptError("checkpoint labels do not match the embedding rows")
    out = {
        "embeddings": embeddings,
        "weights": weights,
        "labels": labels,
        "meta": meta,
    }
    encoder_path = os.path.join(directory, _CHECKPOINT_ENCODER)
    if meta["mode"] == LINEAR_ENCODER:
        out["encoder"] = _read_csv_matrix(encoder_path)
    return out


def train_config_to_dict(cfg: TrainConfig) -> dict:
    """JSON-ready view of a TrainConfig (nested dataclasses included)."""
    return asdict(cfg)
