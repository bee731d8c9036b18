"""Anchor-based latent optimization.

At each high-noise step the latent is nudged so that the adapter-augmented
model's velocity on it stays close to a frozen anchor: the base model's
velocity on the latent as it stood before any optimization.  The loss is
the squared L2 gap; its gradient is taken without the velocity Jacobian
(the standard score-distillation shortcut), so one update costs one
forward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import AdapterParams, InterventionPlan, ModelParams, TokenSeq, predict_velocity

# Published learning rates are tuned to production latent scales; this
# rescale, calibrated once on seeded toy instances, maps them onto the
# toy backbone.  Effective step size is alpha * alpha_scale.
DEFAULT_ALPHA_SCALE = 2e-4


@dataclass(frozen=True)
class AnchorVelocity:
    """Base-model velocity frozen at the step's pre-optimization latent.

    The instance is immutable and its array is write-locked: recomputing
    or editing the anchor mid-loop is a contract violation and fails fast.
    """

    v_tilde: np.ndarray
    frozen: bool = True

    def __post_init__(self):
        v = np.asarray(self.v_tilde, dtype=np.float64).copy()
        v.flags.writeable = False
        object.__setattr__(self, "v_tilde", v)


@dataclass
class MsaConfig:
    """Inner-loop settings.

    lrs carries one learning rate per active step, ordered from the
    noisiest step downward; the active steps are tau + len(lrs) .. tau + 1
    (the threshold step itself is excluded).  mask is the user mask at
    latent resolution and is bound by the pipeline before the loop runs.
    """

    tau: int = 12
    lrs: tuple[float, ...] = (500.0, 750.0)
    iters: int = 10
    alpha_scale: float = DEFAULT_ALPHA_SCALE
    mask: np.ndarray | None = None

    def __post_init__(self):
        if self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if len(self.lrs) < 1:
            raise ValueError("lrs must name at least one active step")
        if any(a < 0 for a in self.lrs):
            raise ValueError("learning rates must be non-negative")

    def alpha_for_step(self, t: int) -> float:
        index = self.tau + len(self.lrs) - t
        if not 0 <= index < len(self.lrs):
            raise ValueError(f"step {t} outside the active range of this config")
        return self.lrs[index]


def compute_anchor(params: ModelParams, z_t: np.ndarray, t: int, text: TokenSeq) -> AnchorVelocity:
    """Base-model velocity at z_t, captured once per step before any update."""
    v, _ = predict_velocity(params, None, z_t, t, text, None, InterventionPlan())
    return AnchorVelocity(v)


def msa_loss(v_adapter: np.ndarray, anchor: AnchorVelocity) -> float:
    """Squared L2 distance between the adapter velocity and the anchor."""
    v_adapter = np.asarray(v_adapter, dtype=np.float64)
    if v_adapter.shape != anchor.v_tilde.shape:
        raise ValueError(
            f"velocity shape {v_adapter.shape} does not match anchor {anchor.v_tilde.shape}"
        )
    diff = v_adapter - anchor.v_tilde
    return float(np.sum(diff * diff))


def msa_gradient(v_adapter: np.ndarray, anchor: AnchorVelocity) -> np.ndarray:
    """Jacobian-omitted loss gradient: exactly 2 * (v_adapter - anchor)."""
    v_adapter = np.asarray(v_adapter, dtype=np.float64)
    if v_adapter.shape != anchor.v_tilde.shape:
        raise ValueError(
            f"velocity shape {v_adapter.shape} does not match anchor {anchor.v_tilde.shape}"
        )
    return 2.0 * (v_adapter - anchor.v_tilde)


def msa_step(z_t: np.ndarray, gradient: np.ndarray, alpha: float, mask: np.ndarray) -> np.ndarray:
    """Masked gradient step z - alpha * (mask * gradient).

    Cells where the mask is 0 are copied through untouched, bit for bit.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    gradient = np.asarray(gradient, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if gradient.shape != z_t.shape:
        raise ValueError(f"gradient shape {gradient.shape} does not match latent {z_t.shape}")
    if mask.shape != z_t.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} does not match latent grid {z_t.shape[-2:]}")
    stepped = z_t - alpha * (mask[None, :, :] * gradient)
    return np.where(mask[None, :, :] == 0.0, z_t, stepped)


def run_msa_inner_loop(
    params: ModelParams,
    adapter: AdapterParams,
    z_t: np.ndarray,
    t: int,
    text: TokenSeq,
    subject: np.ndarray,
    config: MsaConfig,
    trace: list[float] | None = None,
) -> np.ndarray:
    """Run the k-iteration latent optimization for one step.

    The anchor is computed once from the incoming latent; each iteration
    then runs one adapter forward pass, forms the Jacobian-omitted
    gradient, and applies a masked step with the step's learning rate.
    When trace is given it receives the loss before each update plus the
    final loss (k + 1 values).
    """
    if t <= config.tau:
        raise ValueError(f"inner loop requires t > tau, got t={t} with tau={config.tau}")
    if config.mask is None:
        raise ValueError("config.mask must be bound to the user mask before the loop runs")
    alpha = config.alpha_for_step(t) * config.alpha_scale
    anchor = compute_anchor(params, z_t, t, text)
    plan = InterventionPlan()
    z = np.asarray(z_t, dtype=np.float64)
    for _ in range(config.iters):
        v_adapter, _ = predict_velocity(params, adapter, z, t, text, subject, plan)
        if trace is not None:
            trace.append(msa_loss(v_adapter, anchor))
        grad = msa_gradient(v_adapter, anchor)
        z = msa_step(z, grad, alpha, config.mask)
    if trace is not None:
        v_final, _ = predict_velocity(params, adapter, z, t, text, subject, plan)
        trace.append(msa_loss(v_final, anchor))
    return z
