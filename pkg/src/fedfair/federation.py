"""Federation rounds: broadcast, local two-stage training, aggregation.

Each round, every selected client starts from a copy of the global model,
runs the fairness stage (primal-dual SGD), then the private stage (clipped,
noise-perturbed SGD on the same objective with multipliers frozen), and
reports metrics on its held-out eval split. The server combines client
results either by averaging parameters or by applying the mean parameter
delta (the default).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .data import ClientDataset, batch_iter, label_balance
from .metrics import fairness_report
from .model import (
    CrossEntropyLoss,
    Gradient,
    ModelParams,
    apply_update,
    backward,
    forward,
    forward_cached,
    init_model,
    seeded_backward,
    per_example_clipped_sum,
)
from .privacy import PrivacyConfig, PrivacyLedger, gaussian_perturb, ledger_advance
from .rngstream import derive_seed, stream
from .trainer import (
    FairnessConfig,
    LagrangeMultipliers,
    LagrangianLoss,
    StepRecord,
    TrainingError,
    train_fair,
)

logger = logging.getLogger(__name__)

AGGREGATE_PARAMS = "average_params"
AGGREGATE_DELTAS = "average_deltas"


class RunAbortedError(RuntimeError):
    """A round failed outright; carries the round index for the manifest."""

    def __init__(self, round_index: int, cause: Exception):
        super().__init__(f"round {round_index} aborted: {cause}")
        self.round_index = round_index
        self.cause = cause


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 5
    clients_per_round: Optional[int] = None  # None selects everyone
    rounds: int = 10
    fair_epochs: int = 1
    private_epochs: int = 1
    aggregation: str = AGGREGATE_DELTAS
    weighted: bool = False

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError("FederationConfig.n_clients: must be >= 1")
        m = self.clients_per_round
        if m is not None and not (1 <= m <= self.n_clients):
            raise ValueError(
                f"FederationConfig.clients_per_round: must be in [1, n_clients], got {m}"
            )
        if self.rounds < 1:
            raise ValueError("FederationConfig.rounds: must be >= 1")
        if self.fair_epochs < 0 or self.private_epochs < 0:
            raise ValueError("FederationConfig epochs must be >= 0")
        if self.fair_epochs + self.private_epochs < 1:
            raise ValueError("FederationConfig: at least one local epoch per round")
        if self.aggregation not in (AGGREGATE_PARAMS, AGGREGATE_DELTAS):
            raise ValueError(
                f"FederationConfig.aggregation: unknown mode {self.aggregation!r}"
            )

    @property
    def selected_per_round(self) -> int:
        return self.n_clients if self.clients_per_round is None else self.clients_per_round


@dataclass
class ClientBundle:
    """A client's shard split into train and eval parts."""

    train: ClientDataset
    eval_features: np.ndarray
    eval_labels: np.ndarray
    eval_groups: np.ndarray
    client_id: int


def split_client(
    shard: ClientDataset, eval_fraction: float, seed: int
) -> ClientBundle:
    """Seeded train/eval split of one shard."""
    if not (0.0 <= eval_fraction < 1.0):
        raise ValueError(f"eval_fraction must be in [0, 1), got {eval_fraction}")
    n = len(shard)
    rng = stream(seed, "evalsplit", shard.client_id)
    perm = rng.permutation(n)
    n_eval = int(round(n * eval_fraction))
    if n - n_eval < 1:
        raise ValueError(f"client {shard.client_id}: eval split leaves no training rows")
    eval_idx = np.sort(perm[:n_eval])
    train_idx = np.sort(perm[n_eval:])
    return ClientBundle(
        train=shard.subset(train_idx),
        eval_features=shard.features[eval_idx],
        eval_labels=shard.labels[eval_idx],
        eval_groups=shard.groups[eval_idx],
        client_id=shard.client_id,
    )


def broadcast(global_params: ModelParams, client_ids) -> dict[int, ModelParams]:
    """Every selected client gets its own identical copy of the global model."""
    return {cid: global_params.copy() for cid in client_ids}


def _epoch_steps(n_rows: int, batch_size: int) -> int:
    b = min(batch_size, n_rows)
    return -(-n_rows // b)  # ceil


def private_stage(
    params: ModelParams,
    lam,
    d: ClientDataset,
    fairness: FairnessConfig,
    privacy: PrivacyConfig,
    epochs: int,
    batch_size: int,
    lr: float,
    batch_rng: np.random.Generator,
    noise_rng: np.random.Generator,
    n_groups: int,
) -> tuple[ModelParams, int, float]:
    """Clipped, noise-perturbed SGD epochs on the frozen-multiplier objective.

    With privacy disabled this is plain minibatch SGD on the same
    objective. Returns (params, noisy steps taken, last mean base loss).
    """
    if epochs < 1:
        return params, 0, float("nan")
    b = min(batch_size, len(d))
    steps_per_epoch = _epoch_steps(len(d), batch_size)
    batches = batch_iter(d, b, batch_rng)
    noisy_steps = 0
    last_base = float("nan")
    for _ in range(epochs * steps_per_epoch):
        idx = next(batches)
        x, y, a = d.features[idx], d.labels[idx], d.groups[idx]
        p, z, acts = forward_cached(params, x)
        spec = LagrangianLoss(y, a, lam, fairness, n_groups)
        base, _, seeds, _ = spec.components(p, z)
        if not np.isfinite(base):
            raise TrainingError("non-finite loss in private stage")
        last_base = base
        if privacy.enabled:
            # Per-example share of the batch gradient: scale the per-row
            # logit seeds by the batch size so the 1/B average restores the
            # batch gradient when no row is clipped.
            clipped_sum, _ = per_example_clipped_sum(
                params, acts, seeds * len(idx), privacy.clip_bound
            )
            grad = gaussian_perturb(
                clipped_sum,
                privacy.noise_multiplier,
                privacy.clip_bound,
                len(idx),
                noise_rng,
            )
            noisy_steps += 1
        else:
            grad = seeded_backward(params, acts, seeds)
        if not grad.all_finite():
            raise TrainingError("non-finite gradient in private stage")
        params = apply_update(params, grad, lr)
    return params, noisy_steps, last_base


@dataclass
class ClientRoundResult:
    client_id: int
    params: ModelParams
    metrics_row: dict
    trace: list[StepRecord]
    noisy_steps: int


def client_round(
    bundle: ClientBundle,
    global_params: ModelParams,
    round_index: int,
    seed: int,
    *,
    fairness: FairnessConfig,
    privacy: PrivacyConfig,
    fed: FederationConfig,
    lr_theta: float,
    batch_size: int,
    n_groups: int,
) -> ClientRoundResult:
    """One client's local work for one round: fairness stage, private stage, eval."""
    d = bundle.train
    cid = bundle.client_id
    params = global_params.copy()
    trace: list[StepRecord] = []
    lam = None

    if fed.fair_epochs > 0:
        steps = fed.fair_epochs * _epoch_steps(len(d), batch_size)
        result = train_fair(
            d,
            fairness,
            steps,
            stream_seed(seed, "fair", cid, round_index),
            lr_theta=lr_theta,
            batch_size=batch_size,
            init=params,
            n_groups=n_groups,
        )
        params, lam, trace = result.params, result.lam, result.trace
    if lam is None:
        lam = LagrangeMultipliers.initial(fairness, n_groups)

    params, noisy_steps, train_loss = private_stage(
        params,
        lam,
        d,
        fairness,
        privacy,
        fed.private_epochs,
        batch_size,
        lr_theta,
        stream(seed, "priv-batches", cid, round_index),
        stream(seed, "noise", cid, round_index),
        n_groups,
    )

    if len(bundle.eval_labels):
        p_eval = forward(params, bundle.eval_features)
        report = fairness_report(
            p_eval, bundle.eval_groups, bundle.eval_labels, n_groups=n_groups
        )
    else:  # degenerate split: report on the training rows
        p_eval = forward(params, d.features)
        report = fairness_report(p_eval, d.groups, d.labels, n_groups=n_groups)
    if np.isnan(train_loss) and trace:
        train_loss = trace[-1].base_loss
    row = {
        "round": round_index,
        "client": cid,
        "acc_overall": report.accuracy,
        "acc_group_0": float(report.group_accuracy[0]),
        "acc_group_1": float(report.group_accuracy[1]) if n_groups > 1 else float("nan"),
        "demp_error": report.demp_error,
        "eo_error": report.eo_error,
        "di_error": report.di_error,
        "train_loss": train_loss,
    }
    return ClientRoundResult(
        client_id=cid, params=params, metrics_row=row, trace=trace, noisy_steps=noisy_steps
    )


def stream_seed(seed: int, tag: str, client: int, round_index: int) -> int:
    """Integer seed for the (tag, client, round) stream."""
    return derive_seed(seed, tag, client, round_index)


def aggregate(contributions: list, weights: Optional[np.ndarray] = None):
    """Arithmetic mean of client contributions (params or deltas).

    Identical contributions short-circuit to an exact copy, which keeps the
    broadcast/aggregate fixed point exact in both aggregation modes.
    """
    if not contributions:
        raise ValueError("nothing to aggregate")
    first = contributions[0]
    if all(_params_equal(c, first) for c in contributions[1:]):
        return first.copy() if hasattr(first, "copy") else _clone_like(first)
    if weights is None:
        w = np.full(len(contributions), 1.0 / len(contributions))
    else:
        w = np.asarray(weights, dtype=np.float64)
        if len(w) != len(contributions):
            raise ValueError("one weight per contribution")
        w = w / w.sum()
    out_weights = [
        sum(w[i] * c.weights[l] for i, c in enumerate(contributions))
        for l in range(len(first.weights))
    ]
    out_biases = [
        sum(w[i] * c.biases[l] for i, c in enumerate(contributions))
        for l in range(len(first.biases))
    ]
    if isinstance(first, ModelParams):
        return ModelParams(weights=out_weights, biases=out_biases)
    return Gradient(weights=out_weights, biases=out_biases)


def apply_aggregate(
    global_params: ModelParams,
    local_params: list[ModelParams],
    mode: str = AGGREGATE_DELTAS,
    weights: Optional[np.ndarray] = None,
) -> ModelParams:
    """Fold client results into the global model.

    average_params: the mean of the client models becomes the new global.
    average_deltas: the mean client parameter delta is added to the global.
    """
    if mode == AGGREGATE_PARAMS:
        return aggregate(local_params, weights)
    if mode != AGGREGATE_DELTAS:
        raise ValueError(f"unknown aggregation mode {mode!r}")
    deltas = [
        Gradient(
            weights=[lw - gw for lw, gw in zip(p.weights, global_params.weights)],
            biases=[lb - gb for lb, gb in zip(p.biases, global_params.biases)],
        )
        for p in local_params
    ]
    mean_delta = aggregate(deltas, weights)
    return ModelParams(
        weights=[gw + dw for gw, dw in zip(global_params.weights, mean_delta.weights)],
        biases=[gb + db for gb, db in zip(global_params.biases, mean_delta.biases)],
    )


def _params_equal(a, b) -> bool:
    return all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights)) and all(
        np.array_equal(x, y) for x, y in zip(a.biases, b.biases)
    )


def _clone_like(g: Gradient) -> Gradient:
    return Gradient(weights=[w.copy() for w in g.weights], biases=[b.copy() for b in g.biases])


@dataclass
class RunResult:
    global_params: ModelParams
    metrics_rows: list[dict] = field(default_factory=list)
    traces: dict[int, list[StepRecord]] = field(default_factory=dict)
    ledger: Optional[PrivacyLedger] = None
    privacy_by_round: list[dict] = field(default_factory=list)
    global_history: list[ModelParams] = field(default_factory=list)
    shard_sizes: list[int] = field(default_factory=list)
    shard_label_balance: list[float] = field(default_factory=list)
    backend: str = ""


def run_training(
    bundles: list[ClientBundle],
    seed: int,
    *,
    fairness: FairnessConfig,
    privacy: PrivacyConfig,
    fed: FederationConfig,
    model_dims: list[int],
    lr_theta: float,
    batch_size: int,
    n_groups: int,
) -> RunResult:
    """Run the full federated protocol; deterministic in (configs, seed)."""
    if len(bundles) != fed.n_clients:
        raise ValueError(
            f"got {len(bundles)} client bundles for n_clients={fed.n_clients}"
        )
    global_params = init_model(model_dims, seed)
    ledger = (
        PrivacyLedger(epsilon_step=privacy.epsilon_step, delta_step=privacy.delta)
        if privacy.enabled
        else None
    )
    result = RunResult(
        global_params=global_params,
        ledger=ledger,
        shard_sizes=[len(b.train) + len(b.eval_labels) for b in bundles],
        shard_label_balance=[
            label_balance(np.concatenate([b.train.labels, b.eval_labels]))
            for b in bundles
        ],
        backend=kernels.active_backend(),
    )

    for rnd in range(fed.rounds):
        if fed.selected_per_round == fed.n_clients:
            selected = list(range(fed.n_clients))
        else:
            rng = stream(seed, "select", rnd)
            selected = sorted(
                rng.choice(fed.n_clients, size=fed.selected_per_round, replace=False).tolist()
            )
        copies = broadcast(global_params, selected)

        round_results: list[ClientRoundResult] = []
        for cid in selected:
            try:
                round_results.append(
                    client_round(
                        bundles[cid],
                        copies[cid],
                        rnd,
                        seed,
                        fairness=fairness,
                        privacy=privacy,
                        fed=fed,
                        lr_theta=lr_theta,
                        batch_size=batch_size,
                        n_groups=n_groups,
                    )
                )
            except TrainingError as exc:
                logger.warning("round %d: client %d dropped: %s", rnd, cid, exc)
        if not round_results:
            raise RunAbortedError(rnd, TrainingError("every client failed"))

        weights = (
            np.array([len(bundles[r.client_id].train) for r in round_results], dtype=float)
            if fed.weighted
            else None
        )
        global_params = apply_aggregate(
            global_params, [r.params for r in round_results], fed.aggregation, weights
        )

        if ledger is not None:
            total_noisy = sum(r.noisy_steps for r in round_results)
            ledger = ledger_advance(ledger, total_noisy)
            result.privacy_by_round.append(
                {
                    "round": rnd,
                    "steps": ledger.steps,
                    "epsilon_total": ledger.epsilon_total,
                    "delta_total": ledger.delta_total,
                }
            )
        for r in round_results:
            r.metrics_row["epsilon_spent"] = ledger.epsilon_total if ledger else 0.0
            r.metrics_row["delta_spent"] = ledger.delta_total if ledger else 0.0
            result.metrics_rows.append(r.metrics_row)
            result.traces.setdefault(r.client_id, []).extend(r.trace)
        result.global_history.append(global_params)

    result.global_params = global_params
    result.ledger = ledger
    return result


def fedavg_reference(
    bundles: list[ClientBundle],
    seed: int,
    *,
    rounds: int,
    fair_epochs: int,
    private_epochs: int,
    model_dims: list[int],
    lr: float,
    batch_size: int,
    aggregation: str = AGGREGATE_DELTAS,
) -> list[ModelParams]:
    """Plain FedAvg over the same streams: the oracle for degenerate configs.

    Straight-line reimplementation (no fairness, no privacy) used to check
    that the full protocol with everything disabled collapses to it.
    Returns the global model after every round.
    """
    global_params = init_model(model_dims, seed)
    history = []
    for rnd in range(rounds):
        locals_: list[ModelParams] = []
        for bundle in bundles:
            params = global_params.copy()
            d = bundle.train
            b = min(batch_size, len(d))
            steps = _epoch_steps(len(d), batch_size)
            for tag, epochs in (("fair", fair_epochs), ("priv-batches", private_epochs)):
                if epochs < 1:
                    continue
                if tag == "fair":
                    rng = stream(
                        stream_seed(seed, "fair", bundle.client_id, rnd), "fair-batches"
                    )
                else:
                    rng = stream(seed, tag, bundle.client_id, rnd)
                batches = batch_iter(d, b, rng)
                for _ in range(epochs * steps):
                    idx = next(batches)
                    _, grad = backward(
                        params, d.features[idx], CrossEntropyLoss(d.labels[idx])
                    )
                    params = apply_update(params, grad, lr)
            locals_.append(params)
        # Aggregation written out independently of apply_aggregate on purpose.
        n_layers = len(global_params.weights)
        if aggregation == AGGREGATE_PARAMS:
            global_params = ModelParams(
                weights=[np.mean([p.weights[l] for p in locals_], axis=0) for l in range(n_layers)],
                biases=[np.mean([p.biases[l] for p in locals_], axis=0) for l in range(n_layers)],
            )
        else:
            global_params = ModelParams(
                weights=[
                    gw + np.mean([p.weights[l] - gw for p in locals_], axis=0)
                    for l, gw in enumerate(global_params.weights)
                ],
                biases=[
                    gb + np.mean([p.biases[l] - gb for p in locals_], axis=0)
                    for l, gb in enumerate(global_params.biases)
                ],
            )
        history.append(global_params)
    return history
