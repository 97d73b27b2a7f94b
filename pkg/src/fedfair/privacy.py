"""Gaussian-mechanism machinery for private local updates.

Per-example gradients are L2-clipped to a bound C, summed, perturbed with
zero-mean normal noise of standard deviation sigma*C per coordinate, and
averaged over the batch. The noise multiplier sigma and the per-step
privacy budget epsilon are linked through the Gaussian-mechanism
calibration

    sigma_abs = sensitivity * sqrt(2 ln(1.25/delta)) / epsilon

with sensitivity equal to C under per-example clipping. Multi-step spend
is tracked by a ledger under basic (linear) composition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Gradient


class PrivacyConfigError(ValueError):
    """Privacy parameters are missing, out of range, or inconsistent."""


def calibrate_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """Absolute noise standard deviation meeting (epsilon, delta)-DP.

    The equality case of the Gaussian-mechanism bound:
    ``sensitivity * sqrt(2 ln(1.25/delta)) / epsilon``.
    """
    if epsilon <= 0:
        raise PrivacyConfigError(f"PrivacyConfig.epsilon: must be > 0, got {epsilon}")
    if not (0.0 < delta < 1.0):
        raise PrivacyConfigError(f"PrivacyConfig.delta: must be in (0, 1), got {delta}")
    if sensitivity <= 0:
        raise PrivacyConfigError(f"sensitivity must be > 0, got {sensitivity}")
    return sensitivity * math.sqrt(2.0 * math.log(1.25 / delta)) / epsilon


def epsilon_for_sigma(sigma: float, delta: float) -> float:
    """Per-step epsilon implied by a noise multiplier (sensitivity units)."""
    if sigma <= 0:
        raise PrivacyConfigError(f"PrivacyConfig.sigma: must be > 0, got {sigma}")
    if not (0.0 < delta < 1.0):
        raise PrivacyConfigError(f"PrivacyConfig.delta: must be in (0, 1), got {delta}")
    return math.sqrt(2.0 * math.log(1.25 / delta)) / sigma


@dataclass(frozen=True)
class PrivacyConfig:
    """Clipping bound plus either a per-step budget or an explicit multiplier.

    Exactly one of ``epsilon`` / ``sigma`` may be left unset; the other is
    derived from the calibration equality. When both are given they must
    agree. ``sigma`` is the noise multiplier: per-coordinate noise standard
    deviation is ``sigma * clip_bound``.
    """

    enabled: bool = False
    epsilon: Optional[float] = None
    delta: float = 1e-5
    clip_bound: float = 1.0
    sigma: Optional[float] = None
    sensitivity: Optional[float] = None  # defaults to clip_bound

    def __post_init__(self):
        if not self.enabled:
            return
        if not (0.0 < self.delta < 1.0):
            raise PrivacyConfigError(
                f"PrivacyConfig.delta: must be in (0, 1), got {self.delta}"
            )
        if self.clip_bound <= 0:
            raise PrivacyConfigError(
                f"PrivacyConfig.clip_bound: must be > 0, got {self.clip_bound}"
            )
        if self.epsilon is None and self.sigma is None:
            raise PrivacyConfigError(
                "PrivacyConfig: one of epsilon or sigma must be given when enabled"
            )
        if self.epsilon is not None and self.epsilon <= 0:
            raise PrivacyConfigError(
                f"PrivacyConfig.epsilon: must be > 0, got {self.epsilon}"
            )
        if self.sigma is not None and self.sigma <= 0:
            raise PrivacyConfigError(f"PrivacyConfig.sigma: must be > 0, got {self.sigma}")
        if self.epsilon is not None and self.sigma is not None:
            implied = self._epsilon_from_sigma()
            if not math.isclose(implied, self.epsilon, rel_tol=1e-9):
                raise PrivacyConfigError(
                    "PrivacyConfig: epsilon and sigma are both set but inconsistent "
                    f"(sigma implies epsilon={implied!r}, got {self.epsilon!r})"
                )

    @property
    def resolved_sensitivity(self) -> float:
        return self.clip_bound if self.sensitivity is None else self.sensitivity

    @property
    def noise_multiplier(self) -> float:
        """Noise multiplier in clip-bound units."""
        if self.sigma is not None:
            return self.sigma
        return (
            calibrate_sigma(self.epsilon, self.delta, self.resolved_sensitivity)
            / self.clip_bound
        )

    def _epsilon_from_sigma(self) -> float:
        # sigma is in clip-bound units; rescale to sensitivity units first
        return epsilon_for_sigma(
            self.sigma * self.clip_bound / self.resolved_sensitivity, self.delta
        )

    @property
    def epsilon_step(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return self._epsilon_from_sigma()

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "clip_bound": self.clip_bound,
            "sigma": self.sigma,
            "sensitivity": self.sensitivity,
        }


def clip_gradient(g: Gradient, clip_bound: float) -> Gradient:
    """Scale ``g`` onto the L2 ball of radius ``clip_bound``.

    Gradients already inside the ball pass through unchanged (bitwise);
    larger ones keep their direction and land exactly on the boundary.
    """
    if clip_bound <= 0:
        raise ValueError(f"clip_bound must be > 0, got {clip_bound}")
    norm = g.norm()
    if norm <= clip_bound:
        return g
    return g.scaled(clip_bound / norm)


def gaussian_perturb(
    clipped_sum: Gradient,
    sigma: float,
    clip_bound: float,
    batch_size: int,
    rng: np.random.Generator,
) -> Gradient:
    """(clipped_sum + noise) / batch_size with per-coordinate N(0, (sigma*C)^2).

    Noise is drawn layer by layer (weights then bias) from the provided
    stream, so a fixed stream means a fixed perturbation.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    scale = sigma * clip_bound
    out_w, out_b = [], []
    for w, b in zip(clipped_sum.weights, clipped_sum.biases):
        if scale > 0:
            out_w.append((w + rng.normal(0.0, scale, size=w.shape)) / batch_size)
            out_b.append((b + rng.normal(0.0, scale, size=b.shape)) / batch_size)
        else:
            out_w.append(w / batch_size)
            out_b.append(b / batch_size)
    return Gradient(weights=out_w, biases=out_b)


@dataclass(frozen=True)
class PrivacyLedger:
    """Cumulative (epsilon, delta) under basic composition.

    Totals are step-count multiples of the per-step cost, computed by
    multiplication so that advancing by a+b steps equals advancing by a
    then by b, exactly.
    """

    epsilon_step: float
    delta_step: float
    steps: int = 0

    @property
    def epsilon_total(self) -> float:
        return self.steps * self.epsilon_step

    @property
    def delta_total(self) -> float:
        return self.steps * self.delta_step


def ledger_advance(ledger: PrivacyLedger, steps: int) -> PrivacyLedger:
    """Record ``steps`` further noisy releases."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    return PrivacyLedger(
        epsilon_step=ledger.epsilon_step,
        delta_step=ledger.delta_step,
        steps=ledger.steps + steps,
    )
