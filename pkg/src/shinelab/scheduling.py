"""Flow-matching noise schedule, one-step forward diffusion, and Euler
reverse steps.

The schedule is a strictly decreasing sigma sequence ending at exactly 0.
The default is linear (sigma_t = t / total_steps); anything strictly
decreasing with a zero tail can be plugged in instead.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SigmaSchedule:
    """Noise levels listed from the noisiest step down to sigma_0 = 0."""

    sigmas: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.sigmas, dtype=np.float64)
        if s.ndim != 1 or s.size < 2:
            raise ValueError("schedule needs at least two sigma values")
        if not np.all(np.diff(s) < 0):
            raise ValueError("sigmas must be strictly decreasing")
        if s[-1] != 0.0:
            raise ValueError(f"final sigma must be exactly 0, got {s[-1]!r}")
        if s[0] > 1.0:
            raise ValueError(f"initial sigma must be <= 1, got {s[0]!r}")
        object.__setattr__(self, "sigmas", s)

    @property
    def total_steps(self) -> int:
        return self.sigmas.size

    def sigma(self, t: int) -> float:
        """Noise level at step index t, where t runs total_steps-1 .. 0."""
        if not 0 <= t < self.total_steps:
            raise ValueError(f"step index {t} outside schedule of {self.total_steps} steps")
        return float(self.sigmas[self.total_steps - 1 - t])


def make_schedule(total_steps: int) -> SigmaSchedule:
    """Linear schedule sigma_t = t / total_steps for t = total_steps-1 .. 0."""
    if total_steps < 2:
        raise ValueError(f"total_steps must be >= 2, got {total_steps}")
    t = np.arange(total_steps - 1, -1, -1, dtype=np.float64)
    return SigmaSchedule(t / total_steps)


@dataclass
class NoiseSource:
    """Reproducible Gaussian noise stream.

    Each draw is a pure function of (seed, stream_id, draw_index): the
    triple seeds a fresh generator, so replaying a stream reproduces its
    samples bit for bit regardless of the shapes drawn in between.
    Single-owner mutable state; do not share across concurrent callers.
    """

    seed: int
    stream_id: int = 0
    draw_index: int = field(default=0, compare=False)

    def normal(self, shape) -> np.ndarray:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id, self.draw_index))
        self.draw_index += 1
        return np.random.default_rng(seq).normal(size=shape)


def forward_diffuse(z_init: np.ndarray, sigma_t: float, noise: NoiseSource) -> np.ndarray:
    """One-step forward diffusion: (1 - sigma) * z_init + sigma * eps."""
    if not 0.0 <= sigma_t <= 1.0:
        raise ValueError(f"sigma_t must lie in [0, 1], got {sigma_t}")
    z_init = np.asarray(z_init, dtype=np.float64)
    if sigma_t == 0.0:
        return z_init.copy()
    eps = noise.normal(z_init.shape)
    if sigma_t == 1.0:
        return eps
    return (1.0 - sigma_t) * z_init + sigma_t * eps


def euler_step(z_t: np.ndarray, v: np.ndarray, sigma_t: float, sigma_prev: float) -> np.ndarray:
    """One reverse Euler step: z + (sigma_prev - sigma_t) * v."""
    if sigma_prev >= sigma_t:
        raise ValueError(f"sigma_prev ({sigma_prev}) must be below sigma_t ({sigma_t})")
    z_t = np.asarray(z_t, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if z_t.shape != v.shape:
        raise ValueError(f"latent and velocity shapes differ: {z_t.shape} vs {v.shape}")
    return z_t + (sigma_prev - sigma_t) * v


def noisy_background(z_bg: np.ndarray, sigma_prev: float, noise: NoiseSource) -> np.ndarray:
    """Background re-noised to sigma_prev with a fresh draw per call."""
    return forward_diffuse(z_bg, sigma_prev, noise)
