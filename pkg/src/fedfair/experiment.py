"""End-to-end experiment execution and artifact writing.

A run directory holds: ``manifest.json`` (config echo with all defaults,
seed, privacy totals, timing), ``metrics.csv`` (one row per round and
client), ``checkpoint.bin`` (final global model), and per-client
``traces/client_N.csv`` step traces. Paired-privacy mode executes the same
seed with privacy on and off and adds a side-by-side comparison table.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

from . import kernels
from .config import ExperimentConfig, serialize_config
from .data import encode_features, load_csv_dataset, partition_clients
from .federation import (
    ClientBundle,
    RunAbortedError,
    RunResult,
    run_training,
    split_client,
)
from .metrics import write_metrics_csv
from .model import save_checkpoint
from .privacy import PrivacyConfig
from .trainer import TRACE_CSV_COLUMNS, trace_csv_rows

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


class OutputDirError(RuntimeError):
    """Refusing to write into a directory that already holds a run."""


def prepare_bundles(cfg: ExperimentConfig) -> tuple[list[ClientBundle], dict]:
    """Load, encode, partition, and split the dataset per the config.

    Returns the client bundles and a data report for the manifest.
    """
    raw = load_csv_dataset(cfg.csv_path, cfg.schema)
    encoded = encode_features(raw, cfg.schema)
    shards = partition_clients(
        encoded.features,
        encoded.labels,
        encoded.groups,
        cfg.federation.n_clients,
        seed=cfg.seed,
    )
    bundles = [split_client(s, cfg.training.eval_fraction, cfg.seed) for s in shards]
    report = {
        "rows_loaded": len(raw),
        "rows_dropped_missing": raw.n_dropped_missing,
        "rows_dropped_sensitive": encoded.n_dropped_sensitive,
        "n_features": encoded.features.shape[1],
        "constant_columns": encoded.stats.constant_columns(),
    }
    return bundles, report


def execute_run(cfg: ExperimentConfig, out_dir: Path | None = None) -> tuple[RunResult, dict]:
    """Run training per the config; returns the result and its manifest dict.

    When ``out_dir`` is given, an aborted run still leaves a manifest there
    marking the failed round before the error propagates.
    """
    started = time.time()
    bundles, data_report = prepare_bundles(cfg)
    try:
        result = run_training(
            bundles,
            cfg.seed,
            fairness=cfg.fairness,
            privacy=cfg.privacy,
            fed=cfg.federation,
            model_dims=[bundles[0].train.features.shape[1], *cfg.hidden_dims, 1],
            lr_theta=cfg.training.lr_theta,
            batch_size=cfg.training.batch_size,
            n_groups=cfg.schema.n_groups,
        )
    except RunAbortedError as exc:
        if out_dir is not None:
            out_dir.mkdir(parents=True, exist_ok=True)
            (out_dir / MANIFEST_NAME).write_text(
                json.dumps(
                    {
                        "config": cfg.to_dict(),
                        "seed": cfg.seed,
                        "status": "failed",
                        "failed_round": exc.round_index,
                        "error": str(exc),
                    },
                    indent=2,
                    sort_keys=True,
                )
                + "\n",
                encoding="utf-8",
            )
        raise
    manifest = {
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "kernel_backend": kernels.active_backend(),
        "data": data_report,
        "shard_sizes": result.shard_sizes,
        "shard_label_balance": result.shard_label_balance,
        "privacy": _privacy_manifest(cfg.privacy, result),
        "wall_clock_seconds": round(time.time() - started, 3),
        "status": "completed",
    }
    return result, manifest


def _privacy_manifest(privacy: PrivacyConfig, result: RunResult) -> dict:
    if not privacy.enabled or result.ledger is None:
        return {"enabled": False}
    return {
        "enabled": True,
        "epsilon_step": result.ledger.epsilon_step,
        "delta_step": result.ledger.delta_step,
        "clip_bound": privacy.clip_bound,
        "sigma": privacy.noise_multiplier,
        "steps": result.ledger.steps,
        "epsilon_total": result.ledger.epsilon_total,
        "delta_total": result.ledger.delta_total,
        "by_round": result.privacy_by_round,
    }


def write_run_artifacts(out_dir: Path, cfg: ExperimentConfig, result: RunResult, manifest: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (out_dir / "config.json").write_text(serialize_config(cfg), encoding="utf-8")
    write_metrics_csv(result.metrics_rows, out_dir / "metrics.csv")
    save_checkpoint(result.global_params, out_dir / "checkpoint.bin")
    traces_dir = out_dir / "traces"
    traces_dir.mkdir(exist_ok=True)
    for cid, trace in sorted(result.traces.items()):
        rows = trace_csv_rows(trace)
        for step, row in enumerate(rows):  # per-round counters -> one run-long counter
            row[0] = step
        with open(traces_dir / f"client_{cid}.csv", "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(TRACE_CSV_COLUMNS)
            writer.writerows(rows)


def check_output_dir(out_dir: Path, overwrite: bool) -> None:
    if (out_dir / MANIFEST_NAME).exists() and not overwrite:
        raise OutputDirError(
            f"{out_dir} already contains a run manifest; pass --overwrite to replace it"
        )


def run_experiment(
    cfg: ExperimentConfig,
    out_dir,
    overwrite: bool = False,
    paired_privacy: bool = False,
) -> Path:
    """Execute one run (or a privacy-on/off pair) and write all artifacts."""
    out_dir = Path(out_dir)
    check_output_dir(out_dir, overwrite)

    if not paired_privacy:
        result, manifest = execute_run(cfg, out_dir)
        write_run_artifacts(out_dir, cfg, result, manifest)
        logger.info("run complete: %s", out_dir)
        return out_dir

    if not cfg.privacy.enabled:
        raise ValueError(
            "paired-privacy mode needs a config with privacy enabled; "
            "the baseline variant is derived by disabling it"
        )
    baseline_privacy = PrivacyConfig(enabled=False)
    variants = {
        "private": cfg,
        "baseline": cfg.with_privacy(baseline_privacy),
    }
    results = {}
    for name, variant in variants.items():
        sub = out_dir / name
        check_output_dir(sub, overwrite)
        result, manifest = execute_run(variant, sub)
        write_run_artifacts(sub, variant, result, manifest)
        results[name] = result
    _write_comparison(out_dir / "comparison.csv", results["private"], results["baseline"])
    (out_dir / MANIFEST_NAME).write_text(
        json.dumps(
            {
                "paired_privacy": True,
                "seed": cfg.seed,
                "variants": sorted(variants),
                "status": "completed",
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )
    logger.info("paired run complete: %s", out_dir)
    return out_dir


def _final_rows(result: RunResult) -> dict[int, dict]:
    last_round = max(r["round"] for r in result.metrics_rows)
    return {
        r["client"]: r for r in result.metrics_rows if r["round"] == last_round
    }


def _write_comparison(path: Path, private: RunResult, baseline: RunResult) -> None:
    """Final-round metrics side by side, with the accuracy delta recorded
    (noise sometimes helps accuracy; reported, never asserted)."""
    priv_rows = _final_rows(private)
    base_rows = _final_rows(baseline)
    cols = ["acc_overall", "acc_group_0", "acc_group_1", "demp_error", "eo_error", "di_error"]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["client"]
            + [f"{c}_private" for c in cols]
            + [f"{c}_baseline" for c in cols]
            + ["acc_delta_private_minus_baseline"]
        )
        for cid in sorted(set(priv_rows) | set(base_rows)):
            p = priv_rows.get(cid, {})
            b = base_rows.get(cid, {})
            writer.writerow(
                [cid]
                + [repr(p.get(c, float("nan"))) for c in cols]
                + [repr(b.get(c, float("nan"))) for c in cols]
                + [
                    repr(
                        p.get("acc_overall", float("nan"))
                        - b.get("acc_overall", float("nan"))
                    )
                ]
            )
