"""Operator entry point: train, evaluate, and compare runs.

Commands::

    unpg-kit train --config run.json [--out DIR] [--allow-nonfinite]
    unpg-kit eval --ckpt DIR --data spec.json
    unpg-kit analyze DIR_A DIR_B [--sweep-whisker r1,r2,...] [--bins N]

Config files are JSON validated against the schemas shipped in
``unpg_kit/schemas``. Exit codes: 0 success, 2 config error, 3 data or
I/O error, 4 numeric failure (non-finite loss without
``--allow-nonfinite``). The environment variable ``UNPG_SEED``
overrides the training seed.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np

from .errors import (
    CheckpointCorruptError,
    ConfigInvalidError,
    DimensionMismatchError,
    EmptyInputError,
    InsufficientDataError,
    InsufficientPairsError,
    LabelOutOfRangeError,
    NumericError,
    RunIncompleteError,
    ZeroNormError,
)
from .loss import LossConfig
from .margins import MarginConfig
from .metrics import (
    MetricsReport,
    build_metrics_report,
    export_histogram_csv,
    pairwise_scores,
)
from .pairs import FilterConfig
from .trainer import (
    LINEAR_ENCODER,
    OptimizerState,
    SyntheticSpec,
    TrainConfig,
    current_embeddings,
    gen_synthetic,
    init_state,
    load_checkpoint,
    sample_batch,
    save_checkpoint,
    train_step,
)

SEED_ENV_VAR = "UNPG_SEED"
DEFAULT_FAR_TARGETS = (0.0, 0.001, 0.01, 0.1)

_LOSS_LOG = "loss_log.jsonl"
_METRICS_LOG = "metrics.jsonl"
_FINAL_METRICS = "final_metrics.json"
_RUN_RECORD = "run_record.json"
_CONFIG_COPY = "config.json"
_CHECKPOINT_DIR = "checkpoint"


def _load_schema(name: str) -> dict:
    with resources.files("unpg_kit.schemas").joinpath(name).open("r") as fh:
        return json.load(fh)


def validate_against_schema(document: dict, schema_name: str) -> None:
    """Validate a JSON document, re-raising schema errors as config errors."""
    schema = _load_schema(schema_name)
    try:
        jsonschema.validate(document, schema)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigInvalidError(f"{path}: {exc.message}") from exc


@dataclass
class RunConfig:
    """Everything one training run needs, as parsed from a config file."""

    dataset: SyntheticSpec
    train: TrainConfig
    output_dir: str
    eval_every: int
    far_targets: list[float] = field(default_factory=lambda: list(DEFAULT_FAR_TARGETS))
    num_bins: int = 200
    sample_count: int = 256

    def __post_init__(self):
        if self.eval_every < 1:
            raise ConfigInvalidError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.num_bins < 1:
            raise ConfigInvalidError(f"num_bins must be >= 1, got {self.num_bins}")
        if self.sample_count < 1:
            raise ConfigInvalidError(f"sample_count must be >= 1, got {self.sample_count}")
        for f in self.far_targets:
            if not 0 <= f <= 1:
                raise ConfigInvalidError(f"far_targets entries must lie in [0, 1], got {f!r}")


def _parse_whisker(value) -> float:
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError as exc:
            raise ConfigInvalidError(
                f"whisker.whisker_r must be a number or 'inf', got {value!r}"
            ) from exc
    return float(value)


def run_config_from_dict(data: dict) -> RunConfig:
    """Build a validated RunConfig from a parsed JSON document."""
    validate_against_schema(data, "run_config.schema.json")
    dataset = SyntheticSpec(**data["dataset"])
    train_data = dict(data["train"])
    loss_data = dict(train_data.pop("loss", {}))
    margin = MarginConfig(**loss_data.pop("margin", {}))
    whisker_data = dict(loss_data.pop("whisker", {}))
    if "whisker_r" in whisker_data:
        whisker_data["whisker_r"] = _parse_whisker(whisker_data["whisker_r"])
    whisker = FilterConfig(**whisker_data)
    loss_cfg = LossConfig(margin=margin, whisker=whisker, **loss_data)
    train_cfg = TrainConfig(loss=loss_cfg, **train_data)
    total = max(train_cfg.total_steps, 1)
    return RunConfig(
        dataset=dataset,
        train=train_cfg,
        output_dir=data["output_dir"],
        eval_every=int(data.get("eval_every", total)),
        far_targets=[float(f) for f in data.get("far_targets", DEFAULT_FAR_TARGETS)],
        num_bins=int(data.get("num_bins", 200)),
        sample_count=int(data.get("sample_count", 256)),
    )


def run_config_to_dict(cfg: RunConfig) -> dict:
    """JSON-safe dict for a RunConfig; infinite whisker becomes the string 'inf'."""
    whisker_r = cfg.train.loss.whisker.whisker_r
    return {
        "dataset": {
            "num_classes": cfg.dataset.num_classes,
            "samples_per_class": cfg.dataset.samples_per_class,
            "dim": cfg.dataset.dim,
            "cluster_concentration": cfg.dataset.cluster_concentration,
            "seed": cfg.dataset.seed,
        },
        "train": {
            "mode": cfg.train.mode,
            "classes_per_batch": cfg.train.classes_per_batch,
            "samples_per_class_per_batch": cfg.train.samples_per_class_per_batch,
            "base_lr": cfg.train.base_lr,
            "warmup_epochs": cfg.train.warmup_epochs,
            "max_epochs": cfg.train.max_epochs,
            "steps_per_epoch": cfg.train.steps_per_epoch,
            "momentum": cfg.train.momentum,
            "weight_decay": cfg.train.weight_decay,
            "seed": cfg.train.seed,
            "outlier_negatives": cfg.train.outlier_negatives,
            "loss": {
                "gamma": cfg.train.loss.gamma,
                "unpg_enabled": cfg.train.loss.unpg_enabled,
                "margin": {
                    "variant": cfg.train.loss.margin.variant,
                    "m": cfg.train.loss.margin.m,
                },
                "whisker": {
                    "whisker_r": "inf" if math.isinf(whisker_r) else whisker_r,
                    "quantile_method": cfg.train.loss.whisker.quantile_method,
                },
            },
        },
        "output_dir": cfg.output_dir,
        "eval_every": cfg.eval_every,
        "far_targets": list(cfg.far_targets),
        "num_bins": cfg.num_bins,
        "sample_count": cfg.sample_count,
    }


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalidError(f"{path} is not valid JSON: {exc}") from exc
    cfg = run_config_from_dict(data)
    if SEED_ENV_VAR in os.environ:
        raw = os.environ[SEED_ENV_VAR]
        try:
            seed = int(raw)
        except ValueError as exc:
            raise ConfigInvalidError(f"{SEED_ENV_VAR} must be an integer, got {raw!r}") from exc
        cfg.train.seed = seed
    return cfg


@dataclass
class RunRecord:
    """In-memory outcome of one training run before serialization."""

    loss_rows: list[dict]
    metrics_rows: list[dict]
    final_report: MetricsReport
    wall_seconds: float
    total_steps: int
    state: OptimizerState
    dataset_vectors: np.ndarray
    dataset_labels: np.ndarray

    @property
    def final_loss(self) -> float:
        return self.loss_rows[-1]["loss"] if self.loss_rows else float("nan")


def execute_run(cfg: RunConfig, allow_nonfinite: bool = False) -> RunRecord:
    """Train to completion per the config; raises NumericError on a
    non-finite loss unless allowed."""
    start = time.perf_counter()
    vectors, labels = gen_synthetic(cfg.dataset)
    state = init_state(cfg.train, vectors, labels)
    batch_rng = np.random.default_rng(cfg.train.seed + 1)
    metrics_rng = np.random.default_rng(cfg.train.seed + 2)

    def snapshot(step: int) -> dict:
        report = build_metrics_report(
            current_embeddings(state, cfg.train, vectors),
            labels,
            state.params["weights"],
            np.arange(state.params["weights"].shape[0]),
            cfg.far_targets,
            num_bins=cfg.num_bins,
            sample_count=cfg.sample_count,
            rng=metrics_rng,
        )
        return {"step": step, **report.to_dict()}

    loss_rows: list[dict] = []
    metrics_rows = [snapshot(0)]
    total = cfg.train.total_steps
    for step in range(total):
        batch = sample_batch(
            vectors, labels,
            cfg.train.classes_per_batch, cfg.train.samples_per_class_per_batch,
            batch_rng,
        )
        inputs = vectors[batch.indices] if cfg.train.mode == LINEAR_ENCODER else None
        state, loss_out = train_step(state, batch, cfg.train, inputs=inputs)
        value = float(loss_out.value)
        if not math.isfinite(value) and not allow_nonfinite:
            raise NumericError(f"non-finite loss {value!r} at step {step}")
        loss_rows.append({"step": step, "lr": float(state.lr), "loss": value})
        if (step + 1) % cfg.eval_every == 0 and (step + 1) < total:
            metrics_rows.append(snapshot(step + 1))

    final_row = snapshot(total)
    if total > 0:
        metrics_rows.append(final_row)
    final_report = MetricsReport.from_dict({k: v for k, v in final_row.items() if k != "step"})
    return RunRecord(
        loss_rows=loss_rows,
        metrics_rows=metrics_rows,
        final_report=final_report,
        wall_seconds=time.perf_counter() - start,
        total_steps=total,
        state=state,
        dataset_vectors=vectors,
        dataset_labels=labels,
    )


def write_run_outputs(record: RunRecord, cfg: RunConfig, out_dir: str) -> None:
    """Materialize a run directory: config copy, loss log, metrics,
    checkpoint, and the run record."""
    os.makedirs(out_dir, exist_ok=True)
    config_dict = run_config_to_dict(cfg)
    with open(os.path.join(out_dir, _CONFIG_COPY), "w", encoding="ascii") as fh:
        json.dump(config_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, _LOSS_LOG), "w", encoding="ascii", newline="\n") as fh:
        for row in record.loss_rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")
    with open(os.path.join(out_dir, _METRICS_LOG), "w", encoding="ascii", newline="\n") as fh:
        for row in record.metrics_rows:
            fh.write(json.dumps(row, sort_keys=True))
            fh.write("\n")
    with open(os.path.join(out_dir, _FINAL_METRICS), "w", encoding="ascii") as fh:
        json.dump(record.final_report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    save_checkpoint(
        os.path.join(out_dir, _CHECKPOINT_DIR),
        record.state,
        cfg.train,
        record.dataset_vectors,
        record.dataset_labels,
        config_dict=config_dict,
    )
    run_record = {
        "status": "completed",
        "total_steps": record.total_steps,
        "wall_seconds": record.wall_seconds,
        "final_loss": record.final_loss,
        "checkpoint": _CHECKPOINT_DIR,
        "loss_log": _LOSS_LOG,
        "final_metrics": _FINAL_METRICS,
    }
    with open(os.path.join(out_dir, _RUN_RECORD), "w", encoding="ascii") as fh:
        json.dump(run_record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    out_dir = args.out if args.out else cfg.output_dir
    record = execute_run(cfg, allow_nonfinite=args.allow_nonfinite)
    write_run_outputs(record, cfg, out_dir)
    print(json.dumps({"output_dir": out_dir, "steps": record.total_steps,
                      "final_loss": record.final_loss}, sort_keys=True))
    return 0


def _load_dataset_spec(path: str) -> SyntheticSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalidError(f"{path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigInvalidError(f"{path} must hold a JSON object")
    try:
        return SyntheticSpec(**data)
    except TypeError as exc:
        raise ConfigInvalidError(f"dataset spec: {exc}") from exc


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    spec = _load_dataset_spec(args.data)
    if int(ckpt["meta"]["dim"]) != spec.dim:
        raise DimensionMismatchError(
            f"dataset dim {spec.dim} does not match checkpoint dim {ckpt['meta']['dim']}"
        )
    vectors, labels = gen_synthetic(spec)
    if labels.shape[0] != ckpt["labels"].shape[0] or not np.array_equal(labels, ckpt["labels"]):
        raise DimensionMismatchError("dataset spec does not reproduce the checkpoint's labels")
    if ckpt["meta"]["mode"] == LINEAR_ENCODER:
        from .sphere import normalize_rows

        embeddings = normalize_rows(vectors @ ckpt["encoder"].T)
    else:
        embeddings = ckpt["embeddings"]
    report = build_metrics_report(
        embeddings,
        labels,
        ckpt["weights"],
        np.arange(ckpt["weights"].shape[0]),
        [float(f) for f in args.far_targets.split(",")] if args.far_targets else list(DEFAULT_FAR_TARGETS),
        num_bins=args.bins,
        sample_count=args.sample_count,
        rng=np.random.default_rng(args.seed),
    )
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return 0


def _load_run_summary(directory: str) -> dict:
    record_path = os.path.join(directory, _RUN_RECORD)
    metrics_path = os.path.join(directory, _FINAL_METRICS)
    if not os.path.exists(record_path) or not os.path.exists(metrics_path):
        raise RunIncompleteError(f"{directory} lacks a completed run record")
    with open(record_path, "r", encoding="utf-8") as fh:
        record = json.load(fh)
    if record.get("status") != "completed":
        raise RunIncompleteError(f"{directory} run status is {record.get('status')!r}")
    with open(metrics_path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    return {
        "directory": directory,
        "overlap_count": int(report["overlap_count"]),
        "wdfs_gap": float(report["wdfs_gap"]),
        "verification_accuracy": float(report["verification_accuracy"]),
        "final_loss": float(record.get("final_loss", float("nan"))),
    }


def _export_run_histograms(directory: str, tag: str, out_dir: str, bins: int) -> None:
    ckpt = load_checkpoint(os.path.join(directory, _CHECKPOINT_DIR))
    scores = pairwise_scores(ckpt["embeddings"], ckpt["labels"])
    export_histogram_csv(scores.positive_scores,
                         os.path.join(out_dir, f"{tag}_positives_hist.csv"), bins)
    export_histogram_csv(scores.negative_scores,
                         os.path.join(out_dir, f"{tag}_negatives_hist.csv"), bins)


def cmd_analyze(args) -> int:
    summary_a = _load_run_summary(args.run_a)
    summary_b = _load_run_summary(args.run_b)
    os.makedirs(args.out, exist_ok=True)
    _export_run_histograms(args.run_a, "run_a", args.out, args.bins)
    _export_run_histograms(args.run_b, "run_b", args.out, args.bins)
    report = {
        "run_a": summary_a,
        "run_b": summary_b,
        "difference": {
            "overlap_count": summary_a["overlap_count"] - summary_b["overlap_count"],
            "wdfs_gap": summary_a["wdfs_gap"] - summary_b["wdfs_gap"],
        },
    }

    if args.sweep_whisker is not None:
        tokens = [t for t in args.sweep_whisker.split(",") if t.strip()]
        if not tokens:
            raise ConfigInvalidError("--sweep-whisker needs a nonempty list of sizes")
        try:
            sizes = [float(t) for t in tokens]
        except ValueError as exc:
            raise ConfigInvalidError(f"--sweep-whisker: {exc}") from exc
        config_path = os.path.join(args.run_a, _CONFIG_COPY)
        if not os.path.exists(config_path):
            raise RunIncompleteError(f"{args.run_a} lacks {_CONFIG_COPY} for the sweep")
        with open(config_path, "r", encoding="utf-8") as fh:
            base = json.load(fh)
        rows = []
        for r in sizes:
            data = json.loads(json.dumps(base))
            data.setdefault("train", {}).setdefault("loss", {}).setdefault("whisker", {})
            data["train"]["loss"]["whisker"]["whisker_r"] = r
            sweep_dir = os.path.join(args.out, f"sweep_r{r:g}")
            data["output_dir"] = sweep_dir
            cfg = run_config_from_dict(data)
            record = execute_run(cfg)
            write_run_outputs(record, cfg, sweep_dir)
            rows.append({
                "whisker_r": r,
                "final_loss": record.final_loss,
                "overlap_count": record.final_report.overlap_count,
                "wdfs_gap": record.final_report.wdfs_gap,
                "verification_accuracy": record.final_report.verification_accuracy,
            })
        report["whisker_sweep"] = rows
        with open(os.path.join(args.out, "whisker_sweep.csv"), "w", encoding="ascii",
                  newline="\n") as fh:
            fh.write("whisker_r,final_loss,overlap_count,wdfs_gap,verification_accuracy\n")
            for row in rows:
                fh.write(
                    f"{row['whisker_r']:g},{row['final_loss']:.17g},"
                    f"{row['overlap_count']},{row['wdfs_gap']:.17g},"
                    f"{row['verification_accuracy']:.17g}\n"
                )

    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="unpg-kit",
        description="Train, evaluate, and compare pair-similarity loss runs at desk scale.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run a training config to completion")
    p_train.add_argument("--config", required=True, help="path to a run config JSON file")
    p_train.add_argument("--out", help="override the config's output directory")
    p_train.add_argument("--allow-nonfinite", action="store_true",
                         help="keep training through non-finite losses instead of aborting")
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="recompute metrics for a checkpoint")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint directory")
    p_eval.add_argument("--data", required=True, help="dataset spec JSON file")
    p_eval.add_argument("--far-targets", dest="far_targets",
                        help="comma-separated FAR targets (default 0,0.001,0.01,0.1)")
    p_eval.add_argument("--bins", type=int, default=200)
    p_eval.add_argument("--sample-count", dest="sample_count", type=int, default=256)
    p_eval.add_argument("--seed", type=int, default=0)
    p_eval.set_defaults(func=cmd_eval)

    p_an = sub.add_parser("analyze", help="compare two completed runs")
    p_an.add_argument("run_a")
    p_an.add_argument("run_b")
    p_an.add_argument("--out", default="analysis_out",
                      help="directory for histogram CSVs and sweep runs")
    p_an.add_argument("--bins", type=int, default=200)
    p_an.add_argument("--sweep-whisker", dest="sweep_whisker",
                      help="comma-separated whisker sizes; retrains run A's config per size")
    p_an.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigInvalidError as exc:
        print(f"unpg-kit: config error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointCorruptError, RunIncompleteError, InsufficientDataError,
            InsufficientPairsError, DimensionMismatchError, LabelOutOfRangeError,
            EmptyInputError, OSError) as exc:
        print(f"unpg-kit: data error: {exc}", file=sys.stderr)
        return 3
    except (NumericError, ZeroNormError, FloatingPointError) as exc:
        print(f"unpg-kit: numeric failure: {exc}", file=sys.stderr)
        return 4


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
