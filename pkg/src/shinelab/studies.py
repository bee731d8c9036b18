"""Verification studies: the blur-equivalence residual sweep, the
blur-target perturbation study, and shared toy-instance construction.

These back both the command-line reports and the acceptance tests.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .assets import synthesize
from .backbone import (
    BLUR_TARGETS,
    AdapterParams,
    InterventionPlan,
    ModelParams,
    TokenSeq,
    predict_velocity,
    text_tokens_from_prompt,
)
from .numerics import attn_blur_equivalence_residual, gaussian_kernel_1d, key_blur_residual
from .pipeline import encode
from .scheduling import NoiseSource, forward_diffuse

QUERY_RESIDUAL_BOUND = 1e-10
KEY_RESIDUAL_FLOOR = 1e-3
KEY_EXCEED_FRACTION = 0.95

SWEEP_LENGTHS = (8, 16, 32, 64)
SWEEP_DIMS = (4, 8, 16)
SWEEP_SIZES = (3, 5, 7, 9)
SWEEP_SIGMAS = (0.5, 1.0, 2.0, 10.0)


@dataclass(frozen=True)
class EquivalenceReport:
    pairs: int
    max_query_residual: float
    key_exceed_fraction: float
    elapsed_s: float

    @property
    def ok(self) -> bool:
        return (
            self.max_query_residual <= QUERY_RESIDUAL_BOUND
            and self.key_exceed_fraction >= KEY_EXCEED_FRACTION
        )


def run_equivalence_suite(pairs: int = 200, seed: int = 0) -> EquivalenceReport:
    """Random (Q, K) sweep over lengths, widths, kernels and paddings.

    Checks that blurring Q matches blurring the weight matrix to float
    precision while blurring K visibly does not.
    """
    rng = np.random.default_rng(seed)
    start = time.perf_counter()
    max_query = 0.0
    key_exceed = 0
    for i in range(pairs):
        n = SWEEP_LENGTHS[i % len(SWEEP_LENGTHS)]
        d = SWEEP_DIMS[(i // len(SWEEP_LENGTHS)) % len(SWEEP_DIMS)]
        size = SWEEP_SIZES[i % len(SWEEP_SIZES)]
        sigma = SWEEP_SIGMAS[(i // len(SWEEP_SIZES)) % len(SWEEP_SIGMAS)]
        padding = "replicate" if i % 2 == 0 else "zero"
        kernel = gaussian_kernel_1d(size, sigma)
        q = rng.normal(size=(n, d))
        k = rng.normal(size=(n, d))
        max_query = max(max_query, attn_blur_equivalence_residual(q, k, kernel, padding))
        if key_blur_residual(q, k, kernel, padding) > KEY_RESIDUAL_FLOOR:
            key_exceed += 1
    return EquivalenceReport(
        pairs=pairs,
        max_query_residual=max_query,
        key_exceed_fraction=key_exceed / pairs,
        elapsed_s=time.perf_counter() - start,
    )


@dataclass
class ToyInstance:
    """One seeded scene lifted to latent space, ready for backbone calls."""

    params: ModelParams
    adapter: AdapterParams
    z_t: np.ndarray
    t: int
    text: TokenSeq
    subject: np.ndarray
    mask: np.ndarray


def make_toy_instance(seed: int, t: int = 14, steps: int = 20, size: int = 32) -> ToyInstance:
    """Deterministic instance: synthesized scene, encoded, noised to step t."""
    from .abb import downsample_mask
    from .scheduling import make_schedule

    bundle = synthesize(seed, size)
    params = ModelParams(seed=seed)
    adapter = AdapterParams(seed=seed + 1)
    z_init = encode(bundle.init)
    subject = encode(bundle.subject)
    schedule = make_schedule(steps)
    z_t = forward_diffuse(z_init, schedule.sigma(t), NoiseSource(seed))
    text = text_tokens_from_prompt(bundle.prompt, params.dim)
    mask = downsample_mask(bundle.user_mask, 2)
    return ToyInstance(params, adapter, z_t, t, text, subject, mask)


def perturb_study(seed: int, blur_sigma: float = 10.0) -> list[tuple[str, float]]:
    """L2 output change from blurring each Q/K/V group, one row per target."""
    inst = make_toy_instance(seed)
    v_base, _ = predict_velocity(
        inst.params, inst.adapter, inst.z_t, inst.t, inst.text, inst.subject
    )
    rows = []
    for target in BLUR_TARGETS:
        plan = InterventionPlan(blur_target=target, blur_sigma=blur_sigma)
        v, _ = predict_velocity(
            inst.params, inst.adapter, inst.z_t, inst.t, inst.text, inst.subject, plan
        )
        rows.append((target, float(np.linalg.norm(v - v_base))))
    return rows
