"""Federated training with per-client fairness constraints and local DP.

Clients train fairness-constrained predictors by primal-dual SGD, protect
their updates with per-example clipping plus Gaussian noise, and a
simulated server aggregates them round by round. Everything is
deterministic given the experiment seed.
"""

from .data import ClientDataset, DataSchema, batch_iter, encode_features, load_csv_dataset, partition_clients
from .model import Gradient, ModelParams, apply_update, backward, forward, grad_l2_norm, init_model
from .metrics import FairnessReport, GroupStats, demp_loss, di_loss, eo_loss, fairness_report, group_stats
from .privacy import PrivacyConfig, PrivacyLedger, calibrate_sigma, clip_gradient, gaussian_perturb, ledger_advance
from .trainer import (
    FairnessConfig,
    FairTrainState,
    LagrangeMultipliers,
    estimate_duality_gap,
    fair_sgd_step,
    lagrangian_loss,
    project_lambda,
    train_fair,
)
from .federation import FederationConfig, aggregate, broadcast, client_round, run_training

__version__ = "0.1.0"
