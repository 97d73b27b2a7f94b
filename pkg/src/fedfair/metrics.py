"""Group fairness statistics and losses.

Three metrics over a binary predictor and a sensitive attribute:

* demographic parity: per-group mean prediction minus overall mean
* equalized odds: the same, conditioned on the true label, per (group, label)
* disparate impact: minimum ratio of positive-decision rates minus one

Each has a soft form (means of predicted probabilities, differentiable,
used in training) and a hard form (decisions thresholded at 0.5, used for
reporting). Empty cells are flagged and skipped, never imputed.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

AGG_MAX_ABS = "max_abs"
AGG_MEAN_ABS = "mean_abs"

DEFAULT_EPS_DIV = 1e-6


@dataclass
class GroupStats:
    """Exact per-group / per-(group,label) prediction means for one batch.

    Empty groups and cells carry NaN means and a False entry in the
    corresponding mask.
    """

    counts: np.ndarray            # (G,) rows per group
    mean_p: np.ndarray            # (G,) mean prediction per group, NaN if empty
    overall_mean: float
    label_counts: np.ndarray      # (2,)
    label_mean: np.ndarray        # (2,) mean prediction per label, NaN if empty
    cell_counts: np.ndarray       # (G, 2)
    cell_mean: np.ndarray         # (G, 2), NaN if empty
    pos_rate: np.ndarray          # (G,) hard positive-decision rate, NaN if empty
    threshold: float

    @property
    def n_groups(self) -> int:
        return len(self.counts)

    @property
    def group_mask(self) -> np.ndarray:
        return self.counts > 0

    @property
    def cell_mask(self) -> np.ndarray:
        return self.cell_counts > 0


def group_stats(
    p: np.ndarray,
    a: np.ndarray,
    y: np.ndarray,
    n_groups: int | None = None,
    threshold: float = 0.5,
) -> GroupStats:
    """Two-pass group statistics (sums, then divides)."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if not (len(p) == len(a) == len(y)):
        raise ValueError("p, a, y must have equal lengths")
    if len(p) == 0:
        raise ValueError("empty input")
    g = int(a.max()) + 1 if n_groups is None else int(n_groups)

    counts = np.zeros(g, dtype=np.int64)
    sums = np.zeros(g, dtype=np.float64)
    pos = np.zeros(g, dtype=np.float64)
    cell_counts = np.zeros((g, 2), dtype=np.int64)
    cell_sums = np.zeros((g, 2), dtype=np.float64)
    np.add.at(counts, a, 1)
    np.add.at(sums, a, p)
    np.add.at(pos, a, (p > threshold).astype(np.float64))
    np.add.at(cell_counts, (a, y), 1)
    np.add.at(cell_sums, (a, y), p)
    label_counts = cell_counts.sum(axis=0)
    label_sums = cell_sums.sum(axis=0)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_p = np.where(counts > 0, sums / counts, np.nan)
        pos_rate = np.where(counts > 0, pos / counts, np.nan)
        label_mean = np.where(label_counts > 0, label_sums / label_counts, np.nan)
        cell_mean = np.where(cell_counts > 0, cell_sums / cell_counts, np.nan)

    return GroupStats(
        counts=counts,
        mean_p=mean_p,
        overall_mean=float(p.sum() / len(p)),
        label_counts=label_counts,
        label_mean=label_mean,
        cell_counts=cell_counts,
        cell_mean=cell_mean,
        pos_rate=pos_rate,
        threshold=threshold,
    )


def demp_loss(stats: GroupStats) -> np.ndarray:
    """Per-group demographic-parity loss: group mean minus overall mean."""
    return stats.mean_p - stats.overall_mean


def eo_loss(stats: GroupStats) -> np.ndarray:
    """Per-(group, label) equalized-odds loss; NaN marks skipped empty cells.

    A label whose every cell is empty is skipped with a warning.
    """
    out = stats.cell_mean - stats.label_mean[None, :]
    for label in (0, 1):
        if stats.label_counts[label] == 0:
            warnings.warn(
                f"equalized-odds: no rows with label {label}; cells skipped",
                stacklevel=2,
            )
    return out


def di_ratio_pairs(n_groups: int) -> list[tuple[int, int]]:
    """(numerator, denominator) group index pairs entering the DI minimum.

    Ordered adjacent pairs plus the wrap-around (first/last) pair; for two
    groups this is exactly both ratio orientations.
    """
    if n_groups < 2:
        raise ValueError("disparate impact needs at least 2 groups")
    pairs = [(i + 1, i) for i in range(n_groups - 1)]
    pairs.append((0, n_groups - 1))
    return pairs


def di_loss(
    stats: GroupStats, eps_div: float = DEFAULT_EPS_DIV, soft: bool = True
) -> tuple[float, float]:
    """Disparate-impact loss and its violation-positive penalty.

    Rates are soft (per-group mean prediction) for training or hard
    (thresholded decisions) for reporting. Every ratio denominator is
    guarded by ``eps_div``. Returns ``(l_di, penalty)`` with
    ``l_di = min_ratio - 1 <= 0`` and ``penalty = max(0, -l_di)``.
    """
    rates = stats.mean_p if soft else stats.pos_rate
    if not stats.group_mask.all():
        empty = np.flatnonzero(~stats.group_mask).tolist()
        raise ValueError(f"disparate impact undefined: groups {empty} have no samples")
    ratios = [rates[u] / (rates[v] + eps_div) for u, v in di_ratio_pairs(stats.n_groups)]
    l_di = float(min(ratios) - 1.0)
    return l_di, max(0.0, -l_di)


def aggregate_abs(losses: np.ndarray, mode: str) -> float:
    """Collapse per-cell losses to one value: max or mean of |loss|, NaNs skipped."""
    vals = np.abs(np.asarray(losses, dtype=np.float64).ravel())
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return 0.0
    if mode == AGG_MAX_ABS:
        return float(vals.max())
    if mode == AGG_MEAN_ABS:
        return float(vals.mean())
    raise ValueError(f"unknown aggregation mode {mode!r}")


@dataclass
class FairnessLosses:
    """All soft fairness losses of one batch under one aggregation mode."""

    demp: np.ndarray          # (G,) per group, NaN for empty groups
    eo: np.ndarray            # (G, 2) per (group, label), NaN for empty cells
    di: float                 # min ratio - 1, always <= 0
    aggregation: str


def fairness_losses(
    stats: GroupStats, aggregation: str = AGG_MAX_ABS, eps_div: float = DEFAULT_EPS_DIV
) -> FairnessLosses:
    """Bundle the demographic-parity, equalized-odds, and impact losses."""
    if aggregation not in (AGG_MAX_ABS, AGG_MEAN_ABS):
        raise ValueError(f"unknown aggregation mode {aggregation!r}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eo = eo_loss(stats)
    if stats.n_groups >= 2 and stats.group_mask.all():
        di, _ = di_loss(stats, eps_div=eps_div)
    else:
        di = float("nan")
    return FairnessLosses(demp=demp_loss(stats), eo=eo, di=di, aggregation=aggregation)


@dataclass
class FairnessReport:
    """Hard-decision fairness errors: max |loss| over groups/cells."""

    demp_error: float
    eo_error: float
    di_error: float
    accuracy: float
    group_accuracy: np.ndarray


def fairness_report(
    p: np.ndarray,
    a: np.ndarray,
    y: np.ndarray,
    threshold: float = 0.5,
    n_groups: int | None = None,
    eps_div: float = DEFAULT_EPS_DIV,
) -> FairnessReport:
    """Fairness errors of the thresholded predictor, plus accuracies."""
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    decisions = (p > threshold).astype(np.float64)
    stats = group_stats(decisions, a, y, n_groups=n_groups, threshold=threshold)

    demp_error = aggregate_abs(demp_loss(stats), AGG_MAX_ABS)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        eo_error = aggregate_abs(eo_loss(stats), AGG_MAX_ABS)
    if stats.group_mask.all() and stats.n_groups >= 2:
        l_di, _ = di_loss(stats, eps_div=eps_div, soft=False)
        di_error = abs(l_di)
    else:
        di_error = float("nan")

    correct = (decisions == y).astype(np.float64)
    grp_acc = np.full(stats.n_groups, np.nan)
    for g in range(stats.n_groups):
        mask = a == g
        if mask.any():
            grp_acc[g] = float(correct[mask].mean())
    return FairnessReport(
        demp_error=demp_error,
        eo_error=eo_error,
        di_error=di_error,
        accuracy=float(correct.mean()),
        group_accuracy=grp_acc,
    )


METRICS_CSV_COLUMNS = [
    "round",
    "client",
    "acc_overall",
    "acc_group_0",
    "acc_group_1",
    "demp_error",
    "eo_error",
    "di_error",
]


def write_metrics_csv(rows, path) -> None:
    """One row per (round, client); fixed column set, repr-stable floats."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_COLUMNS)
        for r in rows:
            writer.writerow(
                [
                    r["round"],
                    r["client"],
                    repr(r["acc_overall"]),
                    repr(r["acc_group_0"]),
                    repr(r["acc_group_1"]),
                    repr(r["demp_error"]),
                    repr(r["eo_error"]),
                    repr(r["di_error"]),
                ]
            )
