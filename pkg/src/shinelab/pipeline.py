"""End-to-end composition: toy latent codec, run configuration, the
denoising loop that ties the optimization / guidance / blending stages
together, and the per-run diagnostic report.

The codec is a linear stand-in for a VAE: non-overlapping patchify plus a
seeded signed permutation of the resulting channels.  A signed
permutation is orthogonal and — unlike a general rotation — inverts
exactly in floating point, which is what makes the background-
preservation guarantee bit-exact end to end.
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .abb import AbbConfig, adaptive_mask, attention_mask, blend, downsample_mask, LayerRanking
from .backbone import (
    AdapterParams,
    AttentionCapture,
    InterventionPlan,
    ModelParams,
    predict_velocity,
    text_tokens_from_prompt,
)
from .dsg import DsgConfig, dsg_combine, negative_velocity
from .msa import MsaConfig, run_msa_inner_loop
from .scheduling import NoiseSource, euler_step, forward_diffuse, make_schedule, noisy_background

DETERMINISTIC_ENV = "SHINE_LAB_DETERMINISTIC"

_INIT_STREAM = 0
_BACKGROUND_STREAM = 1


def deterministic_context():
    """Single-threaded numerics when SHINE_LAB_DETERMINISTIC=1 is set."""
    if os.environ.get(DETERMINISTIC_ENV) == "1":
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


# ---------------------------------------------------------------------------
# Toy latent codec


@lru_cache(maxsize=8)
def _codec_mix(channels: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xC0DEC,)))
    perm = rng.permutation(channels)
    signs = np.where(rng.random(channels) < 0.5, -1.0, 1.0)
    return perm, signs


def encode(image: np.ndarray, patch: int = 2, seed: int = 7) -> np.ndarray:
    """Pixel grid -> latent: patchify, then a signed channel permutation."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3:
        raise ValueError(f"image must be (C, H, W), got shape {image.shape}")
    c, h, w = image.shape
    if h % patch or w % patch:
        raise ValueError(f"image {h}x{w} not divisible by codec patch {patch}")
    gh, gw = h // patch, w // patch
    stacked = (
        image.reshape(c, gh, patch, gw, patch)
        .transpose(0, 2, 4, 1, 3)
        .reshape(c * patch * patch, gh, gw)
    )
    perm, signs = _codec_mix(c * patch * patch, seed)
    return signs[:, None, None] * stacked[perm]


def decode(z: np.ndarray, patch: int = 2, seed: int = 7, channels: int = 3) -> np.ndarray:
    """Exact inverse of :func:`encode`."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"latent must be (C, H, W), got shape {z.shape}")
    cl, gh, gw = z.shape
    if cl != channels * patch * patch:
        raise ValueError(f"latent has {cl} channels, expected {channels * patch * patch}")
    perm, signs = _codec_mix(cl, seed)
    stacked = np.empty_like(z)
    stacked[perm] = signs[:, None, None] * z
    return (
        stacked.reshape(channels, patch, patch, gh, gw)
        .transpose(0, 3, 1, 4, 2)
        .reshape(channels, gh * patch, gw * patch)
    )


# ---------------------------------------------------------------------------
# Inputs, configuration, report


@dataclass
class CompositionInputs:
    """Pixel-space inputs to one composition run.

    background, init and user_mask share pixel dimensions; the subject
    image is independent.  init is the externally inpainted version of
    the background with a rough subject already painted in.
    """

    background: np.ndarray
    init: np.ndarray
    subject: np.ndarray
    user_mask: np.ndarray
    prompt: str

    def __post_init__(self):
        self.background = np.asarray(self.background, dtype=np.float64)
        self.init = np.asarray(self.init, dtype=np.float64)
        self.subject = np.asarray(self.subject, dtype=np.float64)
        self.user_mask = np.asarray(self.user_mask, dtype=np.float64)
        if self.background.shape != self.init.shape:
            raise ValueError(
                f"background {self.background.shape} and init {self.init.shape} shapes differ"
            )
        if self.user_mask.shape != self.background.shape[-2:]:
            raise ValueError(
                f"mask {self.user_mask.shape} does not match image {self.background.shape[-2:]}"
            )


@dataclass
class CompositionConfig:
    steps: int = 20
    start_step: int = 14
    msa: MsaConfig = field(default_factory=MsaConfig)
    dsg: DsgConfig = field(default_factory=DsgConfig)
    abb: AbbConfig = field(default_factory=AbbConfig)
    model: ModelParams = field(default_factory=ModelParams)
    adapter: AdapterParams = field(default_factory=AdapterParams)
    codec_patch: int = 2
    codec_seed: int = 7
    noise_seed: int = 0
    bg_noise_seed: int | None = None
    text_seed: int = 0
    text_tokens: int = 8
    subject_token_indices: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not 0 < self.start_step < self.steps:
            raise ValueError(
                f"start_step must lie in (0, steps), got {self.start_step} of {self.steps}"
            )
        if self.msa.tau != self.abb.tau:
            raise ValueError(
                f"one threshold is shared; msa.tau={self.msa.tau} != abb.tau={self.abb.tau}"
            )
        if not self.subject_token_indices:
            raise ValueError("subject_token_indices must be nonempty")
        if any(not 0 <= i < self.text_tokens for i in self.subject_token_indices):
            raise ValueError("subject_token_indices outside the text token range")

    @property
    def effective_bg_seed(self) -> int:
        return self.noise_seed if self.bg_noise_seed is None else self.bg_noise_seed


@dataclass
class StepRecord:
    t: int
    sigma: float
    sigma_prev: float | None
    mask: str | None
    msa_losses: list[float] | None = None
    dsg_delta: float | None = None

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class RunReport:
    sigmas: list[float]
    steps: list[StepRecord]
    final_latent_sha256: str

    def to_dict(self) -> dict:
        return {
            "sigmas": self.sigmas,
            "steps": [s.to_dict() for s in self.steps],
            "final_latent_sha256": self.final_latent_sha256,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def latent_checksum(z: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(z, dtype="<f8").tobytes()).hexdigest()


# ---------------------------------------------------------------------------
# The composition loop


def compose(
    inputs: CompositionInputs,
    config: CompositionConfig,
    capture_sink: list[tuple[int, AttentionCapture]] | None = None,
    layer_ranking: LayerRanking | None = None,
    latent_sink: list[tuple[int, np.ndarray]] | None = None,
) -> tuple[np.ndarray, RunReport]:
    """Run the full composition loop and decode the result.

    Per executed step t1 .. 1: the latent optimization runs while
    t > tau, one captured forward pass supplies the velocity and the
    cross-attention maps, guidance extrapolates away from the blurred-
    query branch, an Euler step advances the latent, and the result is
    blended against a freshly re-noised background under the adaptive
    mask.  Step 0 only closes the report; the loop has already produced
    z_0.  Deterministic given inputs and config.

    capture_sink and latent_sink are diagnostic taps: they receive the
    per-step attention captures and post-blend latents respectively.
    """
    with deterministic_context():
        return _compose_inner(inputs, config, capture_sink, layer_ranking, latent_sink)


def _compose_inner(inputs, config, capture_sink, layer_ranking, latent_sink):
    codec_patch, codec_seed = config.codec_patch, config.codec_seed
    token_px = codec_patch * config.model.patch
    h_px, w_px = inputs.background.shape[-2:]
    if h_px % token_px or w_px % token_px:
        raise ValueError(f"image {h_px}x{w_px} not divisible by token cell size {token_px}")

    z_bg = encode(inputs.background, codec_patch, codec_seed)
    z_init = encode(inputs.init, codec_patch, codec_seed)
    z_subj = encode(inputs.subject, codec_patch, codec_seed)
    latent_mask = downsample_mask(inputs.user_mask, codec_patch)

    msa_cfg = dataclasses.replace(config.msa, mask=latent_mask)
    abb_cfg = dataclasses.replace(config.abb, user_mask=latent_mask)
    if abb_cfg.layer_select == "iou-best":
        if layer_ranking is None:
            raise ValueError("layer_select 'iou-best' needs a precomputed LayerRanking")
        layer = layer_ranking.best
    else:
        layer = abb_cfg.layer

    schedule = make_schedule(config.steps)
    t1 = config.start_step
    noise_init = NoiseSource(config.noise_seed, stream_id=_INIT_STREAM)
    noise_bg = NoiseSource(config.effective_bg_seed, stream_id=_BACKGROUND_STREAM)
    text = text_tokens_from_prompt(
        inputs.prompt, config.model.dim, config.text_tokens, config.text_seed
    )

    z = forward_diffuse(z_init, schedule.sigma(t1), noise_init)
    records: list[StepRecord] = []

    try:
        for t in range(t1, 0, -1):
            sigma_t = schedule.sigma(t)
            sigma_prev = schedule.sigma(t - 1)

            msa_trace: list[float] | None = None
            if t > msa_cfg.tau:
                msa_trace = []
                z = run_msa_inner_loop(
                    config.model, config.adapter, z, t, text, z_subj, msa_cfg, trace=msa_trace
                )

            plan = InterventionPlan(capture_cross_attn=True)
            v_pos, capture = predict_velocity(
                config.model, config.adapter, z, t, text, z_subj, plan
            )
            if capture_sink is not None:
                capture_sink.append((t, capture))

            dsg_delta = None
            if config.dsg.active_at(t) and config.dsg.eta > 0:
                v_neg = negative_velocity(
                    config.model, config.adapter, z, t, text, z_subj, config.dsg.blur_sigma
                )
                dsg_delta = float(np.linalg.norm(v_pos - v_neg))
                v_use = dsg_combine(v_pos, v_neg, config.dsg.eta)
            else:
                v_use = v_pos

            z_next = euler_step(z, v_use, sigma_t, sigma_prev)
            z_bg_prev = noisy_background(z_bg, sigma_prev, noise_bg)

            if abb_cfg.blends_at(t):
                attn = attention_mask(
                    capture,
                    config.subject_token_indices,
                    abb_cfg.gamma,
                    abb_cfg.dilation,
                    layer,
                    upsample=config.model.patch,
                )
                mask_used = adaptive_mask(t, abb_cfg.tau, attn, latent_mask)
                mask_id = "attn" if t > abb_cfg.tau else "user"
                z = blend(z_next, z_bg_prev, mask_used)
            else:
                z = z_next
                mask_id = None

            if latent_sink is not None:
                latent_sink.append((t, z.copy()))
            records.append(
                StepRecord(t, sigma_t, sigma_prev, mask_id, msa_trace, dsg_delta)
            )
    except Exception as err:
        raise RuntimeError(f"composition failed at step t={t}") from err

    records.append(StepRecord(0, schedule.sigma(0), None, None))
    report = RunReport(
        sigmas=[schedule.sigma(t) for t in range(t1, -1, -1)],
        steps=records,
        final_latent_sha256=latent_checksum(z),
    )
    return decode(z, codec_patch, codec_seed), report


# ---------------------------------------------------------------------------
# Flat config text schema

_CONFIG_KEYS = (
    "steps",
    "start_step",
    "tau",
    "msa_lrs",
    "msa_iters",
    "msa_alpha_scale",
    "dsg_eta",
    "dsg_blur_sigma",
    "dsg_range",
    "abb_gamma",
    "abb_dilation",
    "abb_layer",
    "abb_layer_select",
    "abb_range",
    "model_seed",
    "model_layers",
    "model_dim",
    "model_heads",
    "model_patch",
    "adapter_seed",
    "adapter_strength",
    "adapter_tokens",
    "codec_patch",
    "codec_seed",
    "noise_seed",
    "bg_noise_seed",
    "text_seed",
    "text_tokens",
    "subject_token_indices",
)


def _parse_int_pair(value: str) -> tuple[int, int]:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated integers, got {value!r}")
    return int(parts[0]), int(parts[1])


def config_from_mapping(raw: dict[str, str]) -> CompositionConfig:
    """Materialize a CompositionConfig from flat config-file values.

    Any key outside the schema is an error; values omitted keep their
    defaults.
    """
    unknown = sorted(set(raw) - set(_CONFIG_KEYS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    base = CompositionConfig()

    def get(key, cast, default):
        return cast(raw[key]) if key in raw and raw[key] != "" else default

    tau = get("tau", int, base.msa.tau)
    msa = MsaConfig(
        tau=tau,
        lrs=get("msa_lrs", lambda v: tuple(float(x) for x in v.split(",")), base.msa.lrs),
        iters=get("msa_iters", int, base.msa.iters),
        alpha_scale=get("msa_alpha_scale", float, base.msa.alpha_scale),
    )
    dsg = DsgConfig(
        eta=get("dsg_eta", float, base.dsg.eta),
        blur_sigma=get("dsg_blur_sigma", float, base.dsg.blur_sigma),
        active_range=get("dsg_range", _parse_int_pair, base.dsg.active_range),
    )
    abb = AbbConfig(
        gamma=get("abb_gamma", float, base.abb.gamma),
        dilation=get("abb_dilation", int, base.abb.dilation),
        tau=tau,
        layer_select=get("abb_layer_select", str, base.abb.layer_select),
        layer=get("abb_layer", int, base.abb.layer),
        step_range=get("abb_range", _parse_int_pair, base.abb.step_range),
    )
    model = ModelParams(
        seed=get("model_seed", int, base.model.seed),
        layers=get("model_layers", int, base.model.layers),
        dim=get("model_dim", int, base.model.dim),
        heads=get("model_heads", int, base.model.heads),
        patch=get("model_patch", int, base.model.patch),
    )
    adapter = AdapterParams(
        seed=get("adapter_seed", int, base.adapter.seed),
        strength=get("adapter_strength", float, base.adapter.strength),
        subject_tokens=get("adapter_tokens", int, base.adapter.subject_tokens),
    )
    return CompositionConfig(
        steps=get("steps", int, base.steps),
        start_step=get("start_step", int, base.start_step),
        msa=msa,
        dsg=dsg,
        abb=abb,
        model=model,
        adapter=adapter,
        codec_patch=get("codec_patch", int, base.codec_patch),
        codec_seed=get("codec_seed", int, base.codec_seed),
        noise_seed=get("noise_seed", int, base.noise_seed),
        bg_noise_seed=get("bg_noise_seed", int, None),
        text_seed=get("text_seed", int, base.text_seed),
        text_tokens=get("text_tokens", int, base.text_tokens),
        subject_token_indices=get(
            "subject_token_indices",
            lambda v: tuple(int(x) for x in v.split(",")),
            base.subject_token_indices,
        ),
    )


def config_to_mapping(config: CompositionConfig) -> dict[str, str]:
    """Flatten a config back to config-file values (inverse of parsing)."""
    pairs = {
        "steps": str(config.steps),
        "start_step": str(config.start_step),
        "tau": str(config.msa.tau),
        "msa_lrs": ",".join(repr(a) for a in config.msa.lrs),
        "msa_iters": str(config.msa.iters),
        "msa_alpha_scale": repr(config.msa.alpha_scale),
        "dsg_eta": repr(config.dsg.eta),
        "dsg_blur_sigma": repr(config.dsg.blur_sigma),
        "dsg_range": f"{config.dsg.active_range[0]},{config.dsg.active_range[1]}",
        "abb_gamma": repr(config.abb.gamma),
        "abb_dilation": str(config.abb.dilation),
        "abb_layer": str(config.abb.layer),
        "abb_layer_select": config.abb.layer_select,
        "model_seed": str(config.model.seed),
        "model_layers": str(config.model.layers),
        "model_dim": str(config.model.dim),
        "model_heads": str(config.model.heads),
        "model_patch": str(config.model.patch),
        "adapter_seed": str(config.adapter.seed),
        "adapter_strength": repr(config.adapter.strength),
        "adapter_tokens": str(config.adapter.subject_tokens),
        "codec_patch": str(config.codec_patch),
        "codec_seed": str(config.codec_seed),
        "noise_seed": str(config.noise_seed),
        "text_seed": str(config.text_seed),
        "text_tokens": str(config.text_tokens),
        "subject_token_indices": ",".join(str(i) for i in config.subject_token_indices),
    }
    if config.abb.step_range is not None:
        pairs["abb_range"] = f"{config.abb.step_range[0]},{config.abb.step_range[1]}"
    if config.bg_noise_seed is not None:
        pairs["bg_noise_seed"] = str(config.bg_noise_seed)
    return pairs
