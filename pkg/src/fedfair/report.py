"""Cross-run comparison artifacts.

From one or more completed run directories, emit:

* ``plotdata.csv`` — long format (round, client, metric, value, variant),
  including per-round across-client accuracy means, both unweighted and
  weighted by shard size, under the pseudo-clients ``mean`` / ``wmean``.
* ``final_accuracy.csv`` — per-client per-group accuracy of the final
  round, one row per group, one column per client.
"""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

logger = logging.getLogger(__name__)

_METRIC_COLUMNS = [
    "acc_overall",
    "acc_group_0",
    "acc_group_1",
    "demp_error",
    "eo_error",
    "di_error",
]


class ReportError(RuntimeError):
    pass


def _load_run(run_dir: Path) -> tuple[dict, list[dict]]:
    manifest_path = run_dir / "manifest.json"
    metrics_path = run_dir / "metrics.csv"
    if not manifest_path.exists() or not metrics_path.exists():
        raise ReportError(f"{run_dir}: not a completed run (need manifest.json and metrics.csv)")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    rows = []
    with open(metrics_path, encoding="utf-8", newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"round": int(rec["round"]), "client": int(rec["client"])}
            for c in _METRIC_COLUMNS:
                row[c] = float(rec[c])
            rows.append(row)
    return manifest, rows


def emit_report(run_dirs, out_dir) -> Path:
    """Write comparison plot data and the final-accuracy table."""
    if not run_dirs:
        raise ReportError("need at least one run directory")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    runs = {}
    for rd in run_dirs:
        rd = Path(rd)
        manifest, rows = _load_run(rd)
        runs[rd.name] = (manifest, rows)

    # Align on the common round prefix when run lengths differ.
    max_rounds = {name: max(r["round"] for r in rows) + 1 for name, (_, rows) in runs.items()}
    common = min(max_rounds.values())
    if len(set(max_rounds.values())) > 1:
        logger.warning(
            "runs differ in length %s; aligning on the common prefix of %d rounds",
            max_rounds,
            common,
        )

    plot_path = out_dir / "plotdata.csv"
    with open(plot_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "client", "metric", "value", "variant"])
        for name, (manifest, rows) in sorted(runs.items()):
            shard_sizes = manifest.get("shard_sizes", [])
            by_round: dict[int, list[dict]] = {}
            for row in rows:
                if row["round"] < common:
                    by_round.setdefault(row["round"], []).append(row)
            for rnd in sorted(by_round):
                group = by_round[rnd]
                for row in group:
                    for metric in _METRIC_COLUMNS:
                        writer.writerow([rnd, row["client"], metric, repr(row[metric]), name])
                accs = [r["acc_overall"] for r in group]
                writer.writerow([rnd, "mean", "acc_overall", repr(sum(accs) / len(accs)), name])
                if shard_sizes:
                    weights = [shard_sizes[r["client"]] for r in group]
                    total = sum(weights)
                    wmean = sum(a * w for a, w in zip(accs, weights)) / total
                    writer.writerow([rnd, "wmean", "acc_overall", repr(wmean), name])

    table_path = out_dir / "final_accuracy.csv"
    with open(table_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        for name, (_, rows) in sorted(runs.items()):
            last = max(r["round"] for r in rows)
            final = sorted((r for r in rows if r["round"] == last), key=lambda r: r["client"])
            writer.writerow([f"run={name}", *[f"client_{r['client']}" for r in final]])
            writer.writerow(["group_0", *[repr(r["acc_group_0"]) for r in final]])
            writer.writerow(["group_1", *[repr(r["acc_group_1"]) for r in final]])
    return out_dir
