"""Fairness-constrained training via simultaneous primal-dual SGD.

The objective is mean cross-entropy plus, per enabled constraint, a
Lagrange multiplier times a violation-positive penalty:

    penalty_k = max(0, aggregated_loss_k - threshold_k)

Model parameters descend on the full objective while multipliers ascend on
the penalty vector, both evaluated at the pre-step point, with multipliers
clamped to [0, lambda_max] after every step. Multipliers start at
lambda_max.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import metrics
from .data import ClientDataset, batch_iter
from .model import (
    CrossEntropyLoss,
    ModelParams,
    apply_update,
    backward,
    forward_cached,
    init_model,
    seeded_backward,
)
from .rngstream import stream

CONSTRAINT_DEMP = "demp"
CONSTRAINT_EO = "eo"
CONSTRAINT_DI = "di"
KNOWN_CONSTRAINTS = (CONSTRAINT_DEMP, CONSTRAINT_EO, CONSTRAINT_DI)

AGG_PER_CELL = "per_cell"
_AGG_MODES = (metrics.AGG_MAX_ABS, metrics.AGG_MEAN_ABS, AGG_PER_CELL)


class TrainingError(RuntimeError):
    """A step produced a non-finite loss or gradient."""


@dataclass(frozen=True)
class FairnessConfig:
    """Which constraints are enforced and how hard."""

    constraints: tuple[str, ...] = (CONSTRAINT_DEMP, CONSTRAINT_EO, CONSTRAINT_DI)
    mu_demp: float = 0.0
    mu_eo: float = 0.0
    mu_di: float = 0.0
    lambda_max: float = 10.0
    eta_lambda: float = 0.05
    aggregation: str = metrics.AGG_MAX_ABS
    eps_div: float = metrics.DEFAULT_EPS_DIV

    def __post_init__(self):
        for c in self.constraints:
            if c not in KNOWN_CONSTRAINTS:
                raise ValueError(f"FairnessConfig.constraints: unknown constraint {c!r}")
        if len(set(self.constraints)) != len(self.constraints):
            raise ValueError("FairnessConfig.constraints: duplicates")
        for name in ("mu_demp", "mu_eo", "mu_di"):
            if getattr(self, name) < 0:
                raise ValueError(f"FairnessConfig.{name}: must be >= 0")
        if self.lambda_max <= 0:
            raise ValueError("FairnessConfig.lambda_max: must be > 0")
        if self.eta_lambda < 0:
            raise ValueError("FairnessConfig.eta_lambda: must be >= 0")
        if self.aggregation not in _AGG_MODES:
            raise ValueError(f"FairnessConfig.aggregation: unknown mode {self.aggregation!r}")

    def mu(self, constraint: str) -> float:
        return {"demp": self.mu_demp, "eo": self.mu_eo, "di": self.mu_di}[constraint]


def lambda_layout(cfg: FairnessConfig, n_groups: int) -> tuple[tuple[str, int], ...]:
    """Multiplier block sizes: one per constraint, or per cell in per_cell mode."""
    sizes = {
        CONSTRAINT_DEMP: n_groups if cfg.aggregation == AGG_PER_CELL else 1,
        CONSTRAINT_EO: 2 * n_groups if cfg.aggregation == AGG_PER_CELL else 1,
        CONSTRAINT_DI: 1,
    }
    return tuple((c, sizes[c]) for c in cfg.constraints)


@dataclass
class LagrangeMultipliers:
    """Flat multiplier vector with a named block layout."""

    values: np.ndarray
    layout: tuple[tuple[str, int], ...]

    def __post_init__(self):
        expected = sum(size for _, size in self.layout)
        if len(self.values) != expected:
            raise ValueError(f"multiplier vector length {len(self.values)}, layout needs {expected}")

    @classmethod
    def initial(cls, cfg: FairnessConfig, n_groups: int, value: Optional[float] = None):
        layout = lambda_layout(cfg, n_groups)
        size = sum(s for _, s in layout)
        fill = cfg.lambda_max if value is None else value
        return cls(values=np.full(size, float(fill)), layout=layout)

    def block(self, constraint: str) -> np.ndarray:
        start = 0
        for name, size in self.layout:
            if name == constraint:
                return self.values[start : start + size]
            start += size
        raise KeyError(f"constraint {constraint!r} not in layout")

    def copy(self) -> "LagrangeMultipliers":
        return LagrangeMultipliers(values=self.values.copy(), layout=self.layout)


def project_lambda(values: np.ndarray, lambda_max: float) -> np.ndarray:
    """Elementwise clamp to [0, lambda_max]."""
    return np.clip(values, 0.0, lambda_max)


def _sigmoid_prime(p: np.ndarray) -> np.ndarray:
    return p * (1.0 - p)


class _ConstraintTerms:
    """Per-batch penalties and their prediction-space gradients."""

    def __init__(
        self,
        p: np.ndarray,
        y: np.ndarray,
        a: np.ndarray,
        cfg: FairnessConfig,
        n_groups: int,
    ):
        self.p = p
        self.y = np.asarray(y, dtype=np.int64)
        self.a = np.asarray(a, dtype=np.int64)
        self.cfg = cfg
        self.n_groups = n_groups
        self.stats = metrics.group_stats(p, self.a, self.y, n_groups=n_groups)
        self.n = len(p)

    # -- gradient pieces -------------------------------------------------
    def _demp_cell_grad(self, group: int) -> np.ndarray:
        out = np.full(self.n, -1.0 / self.n)
        mask = self.a == group
        out[mask] += 1.0 / self.stats.counts[group]
        return out

    def _eo_cell_grad(self, group: int, label: int) -> np.ndarray:
        out = np.zeros(self.n)
        lbl = self.y == label
        out[lbl] -= 1.0 / self.stats.label_counts[label]
        cell = lbl & (self.a == group)
        out[cell] += 1.0 / self.stats.cell_counts[group, label]
        return out

    def _di_violation(self) -> tuple[float, Optional[np.ndarray]]:
        """(violation, d violation / dp); soft rates are per-group mean p."""
        stats = self.stats
        if not stats.group_mask.all() or stats.n_groups < 2:
            return 0.0, None  # a group is absent from this batch: skip the term
        rates = stats.mean_p
        eps = self.cfg.eps_div
        pairs = metrics.di_ratio_pairs(stats.n_groups)
        ratios = [rates[u] / (rates[v] + eps) for u, v in pairs]
        k = int(np.argmin(ratios))
        u, v = pairs[k]
        rho = ratios[k]
        violation = 1.0 - rho
        den = rates[v] + eps
        grad = np.zeros(self.n)
        grad[self.a == u] -= (1.0 / stats.counts[u]) / den
        grad[self.a == v] += rho * (1.0 / stats.counts[v]) / den
        return float(violation), grad

    def _cells(self, constraint: str):
        """Yield (loss value, grad builder) per non-empty cell of a constraint."""
        stats = self.stats
        if constraint == CONSTRAINT_DEMP:
            losses = metrics.demp_loss(stats)
            for g in range(stats.n_groups):
                if stats.group_mask[g]:
                    yield float(losses[g]), (lambda g=g: self._demp_cell_grad(g))
                else:
                    yield None, None
        elif constraint == CONSTRAINT_EO:
            # empty cells on a mini-batch are routine: skip silently here,
            # the report path still warns
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                losses = metrics.eo_loss(stats)
            for g in range(stats.n_groups):
                for label in (0, 1):
                    if stats.cell_mask[g, label]:
                        yield float(losses[g, label]), (
                            lambda g=g, label=label: self._eo_cell_grad(g, label)
                        )
                    else:
                        yield None, None
        else:
            raise AssertionError(constraint)

    # -- public ----------------------------------------------------------
    def penalties_and_grad(
        self, lam: LagrangeMultipliers
    ) -> tuple[np.ndarray, np.ndarray, dict[str, float]]:
        """Penalty vector (aligned with ``lam``), total d(loss)/dp, trace values."""
        cfg = self.cfg
        pen_vec = np.zeros_like(lam.values)
        dLdp = np.zeros(self.n)
        trace: dict[str, float] = {}
        start = 0
        for name, size in lam.layout:
            block = lam.values[start : start + size]
            pen_block = pen_vec[start : start + size]
            mu = cfg.mu(name)
            if name == CONSTRAINT_DI:
                violation, grad = self._di_violation()
                pen = max(0.0, violation - mu)
                pen_block[0] = pen
                if pen > 0.0 and grad is not None and block[0] != 0.0:
                    dLdp += block[0] * grad
                trace[name] = pen
            elif cfg.aggregation == AGG_PER_CELL:
                best = 0.0
                for i, (value, grad_of) in enumerate(self._cells(name)):
                    if value is None:
                        continue
                    pen = max(0.0, abs(value) - mu)
                    pen_block[i] = pen
                    best = max(best, pen)
                    if pen > 0.0 and block[i] != 0.0:
                        dLdp += block[i] * np.sign(value) * grad_of()
                trace[name] = best
            else:
                cells = [(v, g) for v, g in self._cells(name) if v is not None]
                values = np.array([v for v, _ in cells])
                if values.size == 0:
                    trace[name] = 0.0
                    start += size
                    continue
                if cfg.aggregation == metrics.AGG_MAX_ABS:
                    agg = float(np.abs(values).max())
                else:
                    agg = float(np.abs(values).mean())
                pen = max(0.0, agg - mu)
                pen_block[0] = pen
                trace[name] = pen
                if pen > 0.0 and block[0] != 0.0:
                    if cfg.aggregation == metrics.AGG_MAX_ABS:
                        j = int(np.abs(values).argmax())
                        value, grad_of = cells[j]
                        dLdp += block[0] * np.sign(value) * grad_of()
                    else:
                        acc = np.zeros(self.n)
                        for value, grad_of in cells:
                            if value != 0.0:
                                acc += np.sign(value) * grad_of()
                        dLdp += block[0] * (acc / len(cells))
            start += size
        return pen_vec, dLdp, trace


class LagrangianLoss:
    """Composite loss: mean cross-entropy plus multiplier-weighted penalties."""

    def __init__(
        self,
        y: np.ndarray,
        a: np.ndarray,
        lam: LagrangeMultipliers,
        cfg: FairnessConfig,
        n_groups: int,
    ):
        self.y = np.asarray(y, dtype=np.int64)
        self.a = np.asarray(a, dtype=np.int64)
        self.lam = lam
        self.cfg = cfg
        self.n_groups = n_groups
        self._base = CrossEntropyLoss(self.y)

    def components(self, p: np.ndarray, z: np.ndarray):
        """(base, penalty_vec, seeds, trace); seeds differentiate the total."""
        base, seeds = self._base.value_and_seeds(p, z)
        if not self.lam.layout:
            return base, np.zeros(0), seeds, {}
        terms = _ConstraintTerms(p, self.y, self.a, self.cfg, self.n_groups)
        pen_vec, dLdp, trace = terms.penalties_and_grad(self.lam)
        if dLdp.any():
            seeds = seeds + dLdp * _sigmoid_prime(p)
        return base, pen_vec, seeds, trace

    def value_and_seeds(self, p: np.ndarray, z: np.ndarray):
        base, pen_vec, seeds, _ = self.components(p, z)
        return base + float(self.lam.values @ pen_vec), seeds


def lagrangian_loss(
    p: np.ndarray,
    y: np.ndarray,
    a: np.ndarray,
    lam: LagrangeMultipliers,
    cfg: FairnessConfig,
    n_groups: Optional[int] = None,
) -> float:
    """Objective value from predictions alone (cross-entropy computed on p)."""
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.any(lam.values < 0) or np.any(lam.values > cfg.lambda_max):
        raise ValueError("multipliers outside [0, lambda_max]")
    base = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    if not lam.layout:
        return base
    g = n_groups if n_groups is not None else int(np.asarray(a).max()) + 1
    terms = _ConstraintTerms(p, y.astype(np.int64), a, cfg, g)
    pen_vec, _, _ = terms.penalties_and_grad(lam)
    value = base + float(lam.values @ pen_vec)
    if not np.isfinite(value):
        raise TrainingError(f"non-finite objective value {value!r}")
    return value


@dataclass
class StepRecord:
    step: int
    base_loss: float
    penalty: dict[str, float]
    lam: dict[str, float]


@dataclass
class FairTrainState:
    params: ModelParams
    lam: LagrangeMultipliers
    step: int = 0


def fair_sgd_step(
    state: FairTrainState,
    batch: tuple[np.ndarray, np.ndarray, np.ndarray],
    cfg: FairnessConfig,
    lr_theta: float,
    n_groups: int,
) -> tuple[FairTrainState, StepRecord]:
    """One simultaneous primal-descent / dual-ascent step.

    Both updates are evaluated at the pre-step (params, multipliers):
    parameters descend on the full objective, multipliers ascend on the
    penalty vector and are clamped to [0, lambda_max].
    """
    x, y, a = batch
    if len(x) == 0:
        raise ValueError("empty batch")
    p, z, acts = forward_cached(state.params, x)
    loss = LagrangianLoss(y, a, state.lam, cfg, n_groups)
    base, pen_vec, seeds, trace = loss.components(p, z)
    if not np.isfinite(base) or not np.all(np.isfinite(pen_vec)):
        raise TrainingError(f"non-finite loss at step {state.step}")
    grad = seeded_backward(state.params, acts, seeds)
    if not grad.all_finite():
        raise TrainingError(f"non-finite gradient at step {state.step}; step aborted")

    new_params = apply_update(state.params, grad, lr_theta)
    new_values = project_lambda(
        state.lam.values + cfg.eta_lambda * pen_vec, cfg.lambda_max
    )
    new_lam = LagrangeMultipliers(values=new_values, layout=state.lam.layout)

    record = StepRecord(
        step=state.step,
        base_loss=base,
        penalty={c: trace.get(c, 0.0) for c in KNOWN_CONSTRAINTS},
        lam={
            c: float(new_lam.block(c).max()) if c in cfg.constraints else 0.0
            for c in KNOWN_CONSTRAINTS
        },
    )
    return FairTrainState(params=new_params, lam=new_lam, step=state.step + 1), record


@dataclass
class TrainResult:
    params: ModelParams
    lam: LagrangeMultipliers
    trace: list[StepRecord] = field(default_factory=list)


def train_fair(
    d: ClientDataset,
    cfg: FairnessConfig,
    steps: int,
    seed: int,
    *,
    lr_theta: float = 0.01,
    batch_size: int = 64,
    hidden_dims: Sequence[int] = (100, 100, 100),
    init: Optional[ModelParams] = None,
    lam_init: Optional[float] = None,
    n_groups: Optional[int] = None,
) -> TrainResult:
    """Run the client-side fair training loop for ``steps`` batches.

    Multipliers start at lambda_max; the model starts from ``init`` or a
    seeded random init. Batches come from seeded shuffled epochs.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    g = n_groups if n_groups is not None else (int(d.groups.max()) + 1 if len(d) else 1)
    params = init.copy() if init is not None else init_model(
        [d.features.shape[1], *hidden_dims, 1], seed
    )
    state = FairTrainState(
        params=params,
        lam=LagrangeMultipliers.initial(cfg, g, value=lam_init),
        step=0,
    )
    batches = batch_iter(d, min(batch_size, len(d)), stream(seed, "fair-batches"))
    trace: list[StepRecord] = []
    for _ in range(steps):
        idx = next(batches)
        state, record = fair_sgd_step(
            state, (d.features[idx], d.labels[idx], d.groups[idx]), cfg, lr_theta, g
        )
        trace.append(record)
    return TrainResult(params=state.params, lam=state.lam, trace=trace)


def sgd_steps(
    params: ModelParams,
    d: ClientDataset,
    steps: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
) -> ModelParams:
    """Plain minibatch cross-entropy SGD; the unconstrained reference path."""
    batches = batch_iter(d, min(batch_size, len(d)), rng)
    for _ in range(steps):
        idx = next(batches)
        _, grad = backward(params, d.features[idx], CrossEntropyLoss(d.labels[idx]))
        params = apply_update(params, grad, lr)
    return params


TRACE_CSV_COLUMNS = [
    "step",
    "base_loss",
    "penalty_demp",
    "penalty_eo",
    "penalty_di",
    "lambda_demp",
    "lambda_eo",
    "lambda_di",
]


def trace_csv_rows(trace: Iterable[StepRecord]) -> list[list]:
    rows = []
    for r in trace:
        rows.append(
            [
                r.step,
                repr(r.base_loss),
                repr(r.penalty["demp"]),
                repr(r.penalty["eo"]),
                repr(r.penalty["di"]),
                repr(r.lam["demp"]),
                repr(r.lam["eo"]),
                repr(r.lam["di"]),
            ]
        )
    return rows


# -- duality-gap diagnostic ----------------------------------------------


def saddle_gap(
    loss_fn: Callable,
    theta_hat,
    lam_hat,
    lam_candidates: Sequence = (),
    theta_candidates: Sequence = (),
) -> float:
    """max over multiplier probes minus min over parameter probes.

    The current point is always included on both sides, so the estimate is
    nonnegative by construction; with no probes it is exactly zero.
    """
    upper = max(loss_fn(theta_hat, lam) for lam in [lam_hat, *lam_candidates])
    lower = min(loss_fn(theta, lam_hat) for theta in [theta_hat, *theta_candidates])
    return upper - lower


def _lambda_corners(layout, lambda_max: float, penalties: np.ndarray) -> list[np.ndarray]:
    """Multiplier probes: the exact linear-program argmax corner, plus all
    corners when the vector is small enough to enumerate."""
    size = sum(s for _, s in layout)
    corners = [np.where(penalties > 0, lambda_max, 0.0)]
    if 0 < size <= 6:
        for bits in range(2**size):
            corner = np.array(
                [lambda_max if (bits >> i) & 1 else 0.0 for i in range(size)]
            )
            corners.append(corner)
    return corners


def estimate_duality_gap(
    params: ModelParams,
    lam: LagrangeMultipliers,
    d: ClientDataset,
    cfg: FairnessConfig,
    probe_budget: int,
    seed: int = 0,
    *,
    lr_theta: float = 0.01,
    n_groups: Optional[int] = None,
) -> float:
    """Numerical saddle-point quality of a trained (params, multipliers) pair.

    Best-effort diagnostic: the multiplier side is exact (the objective is
    linear in the multipliers), the parameter side probes random
    perturbations and a short descent from the current point.
    """
    g = n_groups if n_groups is not None else (int(d.groups.max()) + 1 if len(d) else 1)

    def loss_fn(theta: ModelParams, lam_values: np.ndarray) -> float:
        p, z, _ = forward_cached(theta, d.features)
        spec = LagrangianLoss(
            d.labels, d.groups, LagrangeMultipliers(lam_values, lam.layout), cfg, g
        )
        value, _ = spec.value_and_seeds(p, z)
        return value

    if probe_budget <= 0:
        return saddle_gap(loss_fn, params, lam.values)

    p, z, _ = forward_cached(params, d.features)
    spec = LagrangianLoss(d.labels, d.groups, lam, cfg, g)
    _, pen_vec, _, _ = spec.components(p, z)
    lam_candidates = _lambda_corners(lam.layout, cfg.lambda_max, pen_vec)

    rng = stream(seed, "gap-probes")
    theta_candidates: list[ModelParams] = []
    scale = 0.01 * (1.0 + float(np.sqrt(np.mean(params.flat() ** 2))))
    for _ in range(probe_budget):
        theta_candidates.append(
            ModelParams(
                weights=[w + rng.normal(0.0, scale, size=w.shape) for w in params.weights],
                biases=[b + rng.normal(0.0, scale, size=b.shape) for b in params.biases],
            )
        )
    probe = params
    for _ in range(probe_budget):
        ph, zh, acts = forward_cached(probe, d.features)
        _, _, seeds, _ = LagrangianLoss(d.labels, d.groups, lam, cfg, g).components(ph, zh)
        probe = apply_update(probe, seeded_backward(probe, acts, seeds), lr_theta)
        theta_candidates.append(probe)

    return saddle_gap(loss_fn, params, lam.values, lam_candidates, theta_candidates)
