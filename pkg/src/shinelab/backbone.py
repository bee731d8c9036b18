"""Toy transformer velocity model with joint self-attention over
concatenated text and image tokens.

The model is a stand-in for a large flow-matching backbone: a few blocks
of multi-head attention and MLPs over a joint [subject, text, image]
token sequence, with all weights generated deterministically from a seed.
It exists so that latent-space interventions (query/key/value blurring,
cross-attention capture, adapter conditioning) can be exercised and
verified exactly, not so that it generates good images.

Two properties are load-bearing for the rest of the package:

* a strength-0 adapter reproduces the base model bit for bit — the
  adapter's projection deltas and its subject tokens are only admitted
  for strength > 0, and subject keys carry a log(strength) attention
  bias so their influence vanishes continuously as strength -> 0;
* the velocity includes a direct input pathway (``_INPUT_SKIP * z``), so
  its Jacobian has a positive-definite component and latent-space descent
  heuristics behave the way they do on real velocity fields.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .numerics import convolve1d, gaussian_kernel_1d, softmax_rows

GROUP_TXT = "txt"
GROUP_IMG = "img"
GROUP_SUBJ = "subj"

BLUR_TARGETS = ("Q_txt", "K_txt", "V_txt", "Q_img", "K_img", "V_img")
BLUR_AXES = ("token-1d", "spatial-2d")

# The velocity is _INPUT_SKIP * z plus a scaled transformer readout.  The
# readout scale keeps the transformer's Jacobian well below the identity
# part, so the velocity field is identity-dominated the way real flow
# velocities are at high noise; latent-gradient heuristics rely on this.
_INPUT_SKIP = 1.0
_OUTPUT_SCALE = 0.25
_TIME_SCALE = 0.3


@dataclass(frozen=True)
class ModelParams:
    """Frozen base-model description; all weights derive from the seed."""

    seed: int = 0
    layers: int = 4
    dim: int = 32
    heads: int = 4
    patch: int = 2

    def __post_init__(self):
        if self.layers < 1 or self.dim < 1 or self.heads < 1 or self.patch < 1:
            raise ValueError("layers, dim, heads and patch must all be positive")
        if self.dim % self.heads != 0:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")


@dataclass(frozen=True)
class AdapterParams:
    """Abstract subject-conditioning adapter on top of a frozen base model.

    strength scales both the additive projection deltas and the attention
    logit bias of the prepended subject tokens; strength 0 reduces to the
    base model exactly.
    """

    seed: int = 1
    strength: float = 1.0
    subject_tokens: int = 4

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError(f"strength must be >= 0, got {self.strength}")
        side = math.isqrt(self.subject_tokens)
        if side * side != self.subject_tokens or self.subject_tokens < 1:
            raise ValueError(f"subject_tokens must be a positive square, got {self.subject_tokens}")


@dataclass
class TokenSeq:
    """Token matrix plus per-token group labels (txt / img / subj).

    Image tokens, when present, form one contiguous block that maps back
    to a grid_hw token grid.
    """

    tokens: np.ndarray
    labels: tuple[str, ...]
    grid_hw: tuple[int, int] | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.float64)
        if self.tokens.ndim != 2 or len(self.labels) != self.tokens.shape[0]:
            raise ValueError("tokens must be N x d with one label per row")
        img_idx = [i for i, g in enumerate(self.labels) if g == GROUP_IMG]
        if img_idx:
            if img_idx != list(range(img_idx[0], img_idx[-1] + 1)):
                raise ValueError("image tokens must form one contiguous block")
            if self.grid_hw is None or self.grid_hw[0] * self.grid_hw[1] != len(img_idx):
                raise ValueError("grid_hw must match the image-token count")

    def group_slice(self, group: str) -> slice:
        idx = [i for i, g in enumerate(self.labels) if g == group]
        if not idx:
            return slice(0, 0)
        return slice(idx[0], idx[-1] + 1)


@dataclass(frozen=True)
class InterventionPlan:
    """What to perturb or record during one backbone call."""

    blur_target: str | None = None
    blur_sigma: float = 0.0
    blur_axis: str = "token-1d"
    capture_cross_attn: bool = False
    capture_qkv: bool = False

    def __post_init__(self):
        if self.blur_target is not None:
            if self.blur_target not in BLUR_TARGETS:
                raise ValueError(f"blur_target must be one of {BLUR_TARGETS}, got {self.blur_target!r}")
            if self.blur_sigma <= 0:
                raise ValueError("blur_sigma must be positive when a blur target is set")
        if self.blur_axis not in BLUR_AXES:
            raise ValueError(f"blur_axis must be one of {BLUR_AXES}, got {self.blur_axis!r}")


@dataclass
class AttentionCapture:
    """Per-layer attention records from one backbone call.

    layer_maps holds the image-query -> text-key block of each layer's
    joint attention, averaged over heads and renormalized so every row is
    a distribution over text tokens.  qkv holds post-intervention
    (Q, K, V) snapshots when requested.
    """

    grid_hw: tuple[int, int]
    n_txt: int
    layer_maps: list[np.ndarray] | None = None
    qkv: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = None

    @property
    def num_layers(self) -> int:
        return len(self.layer_maps) if self.layer_maps is not None else 0


def text_tokens_from_prompt(prompt: str, dim: int, count: int = 8, seed: int = 0) -> TokenSeq:
    """Synthesize text tokens from a seeded hash of the prompt string.

    There is no language model here: the prompt only selects a
    reproducible point in token space.  By convention token 0 is the
    subject slot, the column the mask-extraction step reads by default.
    """
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    digest = hashlib.sha256(prompt.encode("utf-8")).digest()
    entropy = [seed] + [int.from_bytes(digest[i : i + 8], "little") for i in range(0, 32, 8)]
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    tokens = rng.normal(size=(count, dim))
    return TokenSeq(tokens, (GROUP_TXT,) * count)


def _blur_kernel_size(sigma: float, n: int) -> int:
    """Truncate the Gaussian at 3 sigma, capped at the longest kernel a
    length-n sequence supports."""
    size = 2 * math.ceil(3.0 * sigma) + 1
    cap = 2 * n - 1
    if cap % 2 == 0:
        cap -= 1
    return max(1, min(size, cap))


def blur_group(
    tokens: np.ndarray,
    sigma: float,
    axis: str = "token-1d",
    grid_shape: tuple[int, int] | None = None,
) -> np.ndarray:
    """Gaussian-blur a token group along the token axis or its 2D grid.

    Each feature channel is blurred independently with replicate padding.
    spatial-2d unflattens the tokens to grid_shape first and blurs both
    grid axes separably.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if axis not in BLUR_AXES:
        raise ValueError(f"axis must be one of {BLUR_AXES}, got {axis!r}")
    tokens = np.asarray(tokens, dtype=np.float64)
    if tokens.ndim != 2:
        raise ValueError(f"tokens must be N x d, got shape {tokens.shape}")
    n, d = tokens.shape
    if axis == "token-1d":
        kernel = gaussian_kernel_1d(_blur_kernel_size(sigma, n), sigma)
        return convolve1d(tokens, kernel, padding="replicate")
    if grid_shape is None or grid_shape[0] * grid_shape[1] != n:
        raise ValueError(f"grid_shape {grid_shape} inconsistent with {n} tokens")
    h, w = grid_shape
    grid = tokens.reshape(h, w, d)
    grid = convolve1d(grid, gaussian_kernel_1d(_blur_kernel_size(sigma, h), sigma))
    grid = convolve1d(
        grid.transpose(1, 0, 2), gaussian_kernel_1d(_blur_kernel_size(sigma, w), sigma)
    ).transpose(1, 0, 2)
    return grid.reshape(n, d)


def patchify(z: np.ndarray, patch: int) -> np.ndarray:
    """(C, H, W) -> (H/p * W/p, C * p * p) token matrix, raster order."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"latent must be C x H x W, got shape {z.shape}")
    c, h, w = z.shape
    if h % patch or w % patch:
        raise ValueError(f"latent {h}x{w} not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    blocks = z.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return blocks.reshape(gh * gw, c * patch * patch)


def unpatchify(tokens: np.ndarray, channels: int, patch: int, grid_hw: tuple[int, int]) -> np.ndarray:
    """Inverse of :func:`patchify`."""
    gh, gw = grid_hw
    blocks = tokens.reshape(gh, gw, channels, patch, patch).transpose(2, 0, 3, 1, 4)
    return blocks.reshape(channels, gh * patch, gw * patch)


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-6)


def _position_embedding(grid_hw: tuple[int, int], dim: int) -> np.ndarray:
    """Fixed 2D sinusoidal embedding for the image-token grid."""
    gh, gw = grid_hw
    quarter = dim // 4
    freqs = np.exp(-np.log(100.0) * np.arange(quarter) / max(quarter, 1))
    rows = np.arange(gh)[:, None] * freqs[None, :]
    cols = np.arange(gw)[:, None] * freqs[None, :]
    row_emb = np.concatenate([np.sin(rows), np.cos(rows)], axis=1)
    col_emb = np.concatenate([np.sin(cols), np.cos(cols)], axis=1)
    emb = np.zeros((gh, gw, dim))
    emb[:, :, : 2 * quarter] = row_emb[:, None, :]
    emb[:, :, 2 * quarter : 4 * quarter] = col_emb[None, :, :]
    return emb.reshape(gh * gw, dim)


def _time_embedding(t: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(1000.0) * np.arange(half) / max(half, 1))
    ang = float(t) * freqs
    emb = np.zeros(dim)
    emb[:half] = np.sin(ang)
    emb[half : 2 * half] = np.cos(ang)
    return _TIME_SCALE * emb


@lru_cache(maxsize=8)
def _base_weights(params: ModelParams, patch_dim: int):
    """All base-model weight matrices, drawn once per (params, patch_dim)."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=params.seed, spawn_key=(0xBA5E,)))
    d = params.dim
    hidden = 2 * d

    def mat(rows, cols, fan_in):
        return rng.normal(size=(rows, cols)) / np.sqrt(fan_in)

    weights = {
        "embed": mat(patch_dim, d, patch_dim),
        "readout": mat(d, patch_dim, d),
        "wq": [], "wk": [], "wv": [], "wo": [], "w1": [], "w2": [],
    }
    for _ in range(params.layers):
        weights["wq"].append(mat(d, d, d))
        weights["wk"].append(mat(d, d, d))
        weights["wv"].append(mat(d, d, d))
        weights["wo"].append(mat(d, d, d))
        weights["w1"].append(mat(d, hidden, d))
        weights["w2"].append(mat(hidden, d, hidden))
    return weights


@lru_cache(maxsize=8)
def _adapter_weights(adapter: AdapterParams, params: ModelParams, subject_channels: int):
    """Adapter deltas and the subject-latent -> conditioning-token map."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=adapter.seed, spawn_key=(0xADA7,))
    )
    d = params.dim
    delta_scale = 0.5
    deltas = {
        name: [rng.normal(size=(d, d)) * delta_scale / np.sqrt(d) for _ in range(params.layers)]
        for name in ("wq", "wk", "wv")
    }
    subject_proj = rng.normal(size=(subject_channels, d)) / np.sqrt(subject_channels)
    return deltas, subject_proj


def _subject_tokens(adapter: AdapterParams, params: ModelParams, subject: np.ndarray) -> np.ndarray:
    """Pool the subject latent to a small grid and project to token space."""
    subject = np.asarray(subject, dtype=np.float64)
    if subject.ndim != 3:
        raise ValueError(f"subject latent must be C x H x W, got shape {subject.shape}")
    c, h, w = subject.shape
    side = math.isqrt(adapter.subject_tokens)
    if h < side or w < side:
        raise ValueError(f"subject latent {h}x{w} too small for {side}x{side} pooling")
    # Block-mean pool to side x side cells (uneven remainders land in the
    # last cell of each axis).
    row_edges = np.linspace(0, h, side + 1).astype(int)
    col_edges = np.linspace(0, w, side + 1).astype(int)
    pooled = np.empty((side * side, c))
    for i in range(side):
        for j in range(side):
            cell = subject[:, row_edges[i] : row_edges[i + 1], col_edges[j] : col_edges[j + 1]]
            pooled[i * side + j] = cell.mean(axis=(1, 2))
    _, subject_proj = _adapter_weights(adapter, params, c)
    return pooled @ subject_proj


def _apply_blur(mat: np.ndarray, group: str, seq: TokenSeq, plan: InterventionPlan) -> np.ndarray:
    sl = seq.group_slice(group)
    if sl.stop == sl.start:
        return mat
    if plan.blur_axis == "spatial-2d" and group != GROUP_IMG:
        raise ValueError("spatial-2d blur only applies to the image token group")
    grid = seq.grid_hw if group == GROUP_IMG else None
    out = mat.copy()
    out[sl] = blur_group(mat[sl], plan.blur_sigma, plan.blur_axis, grid)
    return out


def predict_velocity(
    params: ModelParams,
    adapter: AdapterParams | None,
    z_t: np.ndarray,
    t: int,
    text: TokenSeq,
    subject: np.ndarray | None = None,
    plan: InterventionPlan | None = None,
) -> tuple[np.ndarray, AttentionCapture]:
    """Predict the flow velocity at z_t and optionally record attention.

    The joint sequence is [subject?, text, image]; every block computes
    one softmax over all of it (scaled by 1/sqrt(d_k)).  When an adapter
    is active its projection deltas are scaled by strength and its
    subject keys carry a log(strength) logit bias.  The call is a
    deterministic pure function of its arguments.
    """
    plan = plan or InterventionPlan()
    z_t = np.asarray(z_t, dtype=np.float64)
    if z_t.ndim != 3:
        raise ValueError(f"latent must be C x H x W, got shape {z_t.shape}")
    if not np.isfinite(z_t).all():
        raise ValueError("latent contains non-finite values")
    if (adapter is None) != (subject is None):
        raise ValueError("subject latent must be supplied exactly when an adapter is")

    c, h, w = z_t.shape
    grid_hw = (h // params.patch, w // params.patch)
    patch_dim = c * params.patch * params.patch
    weights = _base_weights(params, patch_dim)
    d = params.dim

    img = patchify(z_t, params.patch) @ weights["embed"]
    img += _position_embedding(grid_hw, d)

    active = adapter is not None and adapter.strength > 0.0
    parts = [text.tokens, img]
    labels = list(text.labels) + [GROUP_IMG] * img.shape[0]
    key_bias = np.zeros(len(labels))
    deltas = None
    if active:
        subj = _subject_tokens(adapter, params, subject)
        parts.insert(0, subj)
        labels = [GROUP_SUBJ] * subj.shape[0] + labels
        key_bias = np.concatenate([np.full(subj.shape[0], np.log(adapter.strength)), key_bias])
        deltas, _ = _adapter_weights(adapter, params, subject.shape[0])

    seq = TokenSeq(np.concatenate(parts, axis=0), tuple(labels), grid_hw)
    x = seq.tokens + _time_embedding(t, d)[None, :]

    n = x.shape[0]
    heads = params.heads
    d_k = d // heads
    branch = 1.0 / np.sqrt(2.0 * params.layers)
    img_sl = seq.group_slice(GROUP_IMG)
    txt_sl = seq.group_slice(GROUP_TXT)

    layer_maps: list[np.ndarray] | None = [] if plan.capture_cross_attn else None
    qkv_snaps: list[tuple[np.ndarray, np.ndarray, np.ndarray]] | None = (
        [] if plan.capture_qkv else None
    )

    for j in range(params.layers):
        xn = _layer_norm(x)
        wq, wk, wv = weights["wq"][j], weights["wk"][j], weights["wv"][j]
        if deltas is not None:
            wq = wq + adapter.strength * deltas["wq"][j]
            wk = wk + adapter.strength * deltas["wk"][j]
            wv = wv + adapter.strength * deltas["wv"][j]
        q, k, v = xn @ wq, xn @ wk, xn @ wv

        if plan.blur_target is not None:
            which, group_tag = plan.blur_target.split("_")
            group = GROUP_TXT if group_tag == "txt" else GROUP_IMG
            if which == "Q":
                q = _apply_blur(q, group, seq, plan)
            elif which == "K":
                k = _apply_blur(k, group, seq, plan)
            else:
                v = _apply_blur(v, group, seq, plan)
        if qkv_snaps is not None:
            qkv_snaps.append((q.copy(), k.copy(), v.copy()))

        qh = q.reshape(n, heads, d_k).transpose(1, 0, 2)
        kh = k.reshape(n, heads, d_k).transpose(1, 0, 2)
        vh = v.reshape(n, heads, d_k).transpose(1, 0, 2)
        logits = qh @ kh.transpose(0, 2, 1) / np.sqrt(d_k) + key_bias[None, None, :]
        attn = softmax_rows(logits)
        if layer_maps is not None:
            cross = attn.mean(axis=0)[img_sl, txt_sl]
            layer_maps.append(cross / cross.sum(axis=1, keepdims=True))
        out = (attn @ vh).transpose(1, 0, 2).reshape(n, d) @ weights["wo"][j]
        x = x + branch * out
        xm = _layer_norm(x)
        x = x + branch * (np.tanh(xm @ weights["w1"][j]) @ weights["w2"][j])

    img_out = _layer_norm(x[img_sl]) @ weights["readout"]
    velocity = _INPUT_SKIP * z_t + _OUTPUT_SCALE * unpatchify(img_out, c, params.patch, grid_hw)
    capture = AttentionCapture(
        grid_hw=grid_hw, n_txt=txt_sl.stop - txt_sl.start, layer_maps=layer_maps, qkv=qkv_snaps
    )
    return velocity, capture
