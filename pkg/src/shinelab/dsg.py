"""Degradation-suppression guidance.

The negative branch is the same backbone call with the image queries
blurred, which degrades the prediction while keeping its layout; the
combined velocity extrapolates away from it, guidance-style:
v_pos + eta * (v_pos - v_neg).  There is no negative-prompt pathway.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import AdapterParams, InterventionPlan, ModelParams, TokenSeq, predict_velocity


@dataclass(frozen=True)
class DsgConfig:
    """Guidance scale, blur strength, and the step interval it runs on."""

    eta: float = 0.5
    blur_sigma: float = 10.0
    active_range: tuple[int, int] = (14, 0)

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")
        if self.blur_sigma <= 0:
            raise ValueError(f"blur_sigma must be positive, got {self.blur_sigma}")
        hi, lo = self.active_range
        if hi < lo:
            raise ValueError(f"active_range must be (high, low), got {self.active_range}")

    def active_at(self, t: int) -> bool:
        hi, lo = self.active_range
        return lo <= t <= hi


def negative_velocity(
    params: ModelParams,
    adapter: AdapterParams | None,
    z_t: np.ndarray,
    t: int,
    text: TokenSeq,
    subject: np.ndarray | None,
    blur_sigma: float,
) -> np.ndarray:
    """Velocity of the same call with image queries blurred.

    Everything else — latent, adapter, subject conditioning, step — is
    identical to the positive branch; the intervention plan is the only
    difference.
    """
    if blur_sigma <= 0:
        raise ValueError(f"blur_sigma must be positive, got {blur_sigma}")
    plan = InterventionPlan(blur_target="Q_img", blur_sigma=blur_sigma)
    v, _ = predict_velocity(params, adapter, z_t, t, text, subject, plan)
    return v


def dsg_combine(v_pos: np.ndarray, v_neg: np.ndarray, eta: float) -> np.ndarray:
    """Guided velocity v_pos + eta * (v_pos - v_neg); eta 0 returns v_pos."""
    v_pos = np.asarray(v_pos, dtype=np.float64)
    v_neg = np.asarray(v_neg, dtype=np.float64)
    if v_pos.shape != v_neg.shape:
        raise ValueError(f"velocity shapes differ: {v_pos.shape} vs {v_neg.shape}")
    if eta == 0.0:
        return v_pos.copy()
    return v_pos + eta * (v_pos - v_neg)
