"""Adaptive background blending: attention-derived subject masks, the
mask switch at the threshold step, per-step latent blending, and the
IoU-based procedure for picking the most informative attention layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backbone import AttentionCapture
from .numerics import BinaryMask, binarize, dilate, iou, max_connected_component

LAYER_SELECT_MODES = ("fixed", "iou-best")


@dataclass
class AbbConfig:
    """Blending settings.

    tau is the step at and below which the user mask takes over from the
    attention mask.  step_range, when set, restricts blending to steps
    within [low, high]; the default blends at every step and lets the
    mask switch happen inside :func:`adaptive_mask`.  user_mask is bound
    by the pipeline at latent resolution.
    """

    gamma: float = 0.2
    dilation: int = 3
    tau: int = 12
    layer_select: str = "fixed"
    layer: int = -1
    step_range: tuple[int, int] | None = None
    user_mask: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.dilation < 1 or self.dilation % 2 == 0:
            raise ValueError(f"dilation kernel size must be odd, got {self.dilation}")
        if self.layer_select not in LAYER_SELECT_MODES:
            raise ValueError(f"layer_select must be one of {LAYER_SELECT_MODES}")

    def blends_at(self, t: int) -> bool:
        if self.step_range is None:
            return True
        hi, lo = self.step_range
        return lo <= t <= hi


@dataclass(frozen=True)
class LayerRanking:
    """Mean IoU per attention layer and the winning index (ties -> lowest)."""

    scores: tuple[float, ...]
    best: int

    def __post_init__(self):
        # argmax on ties must agree with the stored winner
        expected = int(np.argmax(self.scores))
        if self.best != expected:
            raise ValueError(f"best={self.best} inconsistent with scores (argmax {expected})")


def downsample_mask(mask_px: np.ndarray, factor: int) -> np.ndarray:
    """Pixel mask -> latent mask by area majority (>= half coverage -> 1)."""
    mask_px = np.asarray(mask_px, dtype=np.float64)
    h, w = mask_px.shape
    if h % factor or w % factor:
        raise ValueError(f"mask {h}x{w} not divisible by factor {factor}")
    blocks = mask_px.reshape(h // factor, factor, w // factor, factor)
    coverage = blocks.mean(axis=(1, 3))
    return (coverage >= 0.5).astype(np.float64)


def upsample_mask(mask: np.ndarray, factor: int) -> np.ndarray:
    """Nearest-neighbour upsample by an integer factor."""
    return np.kron(np.asarray(mask), np.ones((factor, factor), dtype=np.asarray(mask).dtype))


def _reduce_to_grid(
    maps: Sequence[np.ndarray], grid_hw: tuple[int, int], subject_token_indices: Sequence[int]
) -> np.ndarray:
    """Mean the chosen text-token columns and unflatten to the token grid."""
    stacked = np.mean([m[:, list(subject_token_indices)].mean(axis=1) for m in maps], axis=0)
    return stacked.reshape(grid_hw)


def _normalize_max(grid: np.ndarray) -> np.ndarray:
    peak = grid.max()
    if peak <= 0:
        return np.zeros_like(grid)
    return grid / peak


def attention_mask(
    capture: AttentionCapture,
    subject_token_indices: Sequence[int],
    gamma: float,
    dilation: int,
    layer: int,
    upsample: int = 1,
    connectivity: int = 4,
) -> BinaryMask:
    """Subject mask from one layer's captured cross-attention.

    The layer's map is reduced over the subject text tokens, max-normalized
    to [0, 1], thresholded at gamma, dilated, and pruned to its largest
    connected component.  upsample scales the token-grid result up to
    latent resolution.
    """
    if capture.layer_maps is None or not capture.layer_maps:
        raise ValueError("capture holds no cross-attention maps")
    if len(subject_token_indices) == 0:
        raise ValueError("subject token set must be nonempty")
    n_layers = len(capture.layer_maps)
    if not -n_layers <= layer < n_layers:
        raise ValueError(f"layer {layer} outside capture range of {n_layers} layers")
    scores = _reduce_to_grid([capture.layer_maps[layer]], capture.grid_hw, subject_token_indices)
    mask = binarize(_normalize_max(scores), gamma)
    mask = dilate(mask, dilation)
    mask = max_connected_component(mask, connectivity)
    if upsample > 1:
        return BinaryMask(upsample_mask(mask.cells, upsample))
    return mask


def adaptive_mask(t: int, tau: int, attn_mask: BinaryMask, user_mask: np.ndarray) -> np.ndarray:
    """Attention-derived mask while t > tau, the user mask from tau down."""
    user_mask = np.asarray(user_mask, dtype=np.float64)
    if attn_mask.shape != user_mask.shape:
        raise ValueError(f"mask shapes differ: {attn_mask.shape} vs {user_mask.shape}")
    if t > tau:
        return attn_mask.cells.astype(np.float64)
    return user_mask


def blend(z_t: np.ndarray, z_bg_t: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Convex per-cell combination mask*z + (1-mask)*z_bg.

    Cells where the mask is exactly 0 or 1 are copied from the matching
    source bit for bit, so hard-mask blends are exact.
    """
    z_t = np.asarray(z_t, dtype=np.float64)
    z_bg_t = np.asarray(z_bg_t, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if z_t.shape != z_bg_t.shape:
        raise ValueError(f"latent shapes differ: {z_t.shape} vs {z_bg_t.shape}")
    if mask.shape != z_t.shape[-2:]:
        raise ValueError(f"mask shape {mask.shape} does not match latent grid {z_t.shape[-2:]}")
    m = mask[None, :, :]
    mixed = m * z_t + (1.0 - m) * z_bg_t
    mixed = np.where(m == 0.0, z_bg_t, mixed)
    return np.where(m == 1.0, z_t, mixed)


def rank_layers_by_iou(
    captures: Sequence[Sequence[AttentionCapture]],
    ground_truth: Sequence[BinaryMask],
    gamma: float,
    subject_token_indices: Sequence[int] | None = None,
) -> LayerRanking:
    """Score every attention layer by how well its masks match references.

    captures holds one sequence of per-step captures per run, aligned
    one-to-one with ground_truth masks at token-grid resolution.  For
    each run and layer the per-step maps are averaged, max-normalized,
    binarized at gamma, and compared to the reference by IoU; scores are
    then averaged over runs and the best layer (ties -> lowest index)
    reported.
    """
    if len(captures) != len(ground_truth):
        raise ValueError(
            f"{len(captures)} capture runs vs {len(ground_truth)} ground-truth masks"
        )
    if len(captures) == 0:
        raise ValueError("need at least one run to rank layers")
    per_run: list[np.ndarray] = []
    n_layers = None
    for steps, truth in zip(captures, ground_truth):
        if not steps:
            raise ValueError("each run needs at least one capture")
        first = steps[0]
        if n_layers is None:
            n_layers = first.num_layers
        if any(s.num_layers != n_layers for s in steps):
            raise ValueError("all captures must record the same layer count")
        indices = (
            list(subject_token_indices) if subject_token_indices is not None
            else list(range(first.n_txt))
        )
        run_scores = np.empty(n_layers)
        for layer in range(n_layers):
            grid = _reduce_to_grid(
                [s.layer_maps[layer] for s in steps], first.grid_hw, indices
            )
            mask = binarize(_normalize_max(grid), gamma)
            run_scores[layer] = iou(mask, truth)
        per_run.append(run_scores)
    scores = np.mean(per_run, axis=0)
    return LayerRanking(tuple(float(s) for s in scores), int(np.argmax(scores)))
