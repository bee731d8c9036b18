"""Seeded synthesis of toy inputs: a smooth background, a simple subject,
an insertion mask aligned to the token grid, and a plausible inpainted
initialization (the blurred subject pasted into the masked region).

These stand in for the upstream captioning / inpainting stage, which is
an external input to the composition loop.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .formats import format_config_text, write_pgm, write_ppm
from .numerics import convolve2d, gaussian_kernel_2d
from .pipeline import CompositionConfig, CompositionInputs, config_to_mapping

TOKEN_CELL_PX = 4  # codec patch 2 x model patch 2


@dataclass(frozen=True)
class AssetBundle:
    background: np.ndarray
    init: np.ndarray
    subject: np.ndarray
    user_mask: np.ndarray
    prompt: str

    def inputs(self) -> CompositionInputs:
        return CompositionInputs(
            self.background, self.init, self.subject, self.user_mask, self.prompt
        )


def _smooth_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    """Low-frequency scalar field in roughly [-1, 1]."""
    ys = np.linspace(0, 2 * np.pi, h)[:, None]
    xs = np.linspace(0, 2 * np.pi, w)[None, :]
    field = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(0.3, 1.5, size=2)
        py, px = rng.uniform(0, 2 * np.pi, size=2)
        field += rng.uniform(0.3, 1.0) * np.sin(fy * ys + py) * np.cos(fx * xs + px)
    return field / 3.0


def synthesize(seed: int, size: int = 32, subject_size: int = 16) -> AssetBundle:
    """Build one deterministic toy scene.

    The mask rectangle is aligned to the token cell grid so that latent-
    and pixel-space readings of "outside the mask" coincide exactly.
    """
    if size % TOKEN_CELL_PX or subject_size % TOKEN_CELL_PX:
        raise ValueError(f"sizes must be multiples of {TOKEN_CELL_PX}, got {size}/{subject_size}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(0xA55E7,)))

    background = np.stack(
        [0.5 + 0.35 * _smooth_field(rng, size, size) for _ in range(3)]
    ).clip(0.0, 1.0)

    # Subject: a filled disk of a seeded color on a dim backdrop.
    subject = np.full((3, subject_size, subject_size), 0.15)
    color = rng.uniform(0.4, 1.0, size=3)
    yy, xx = np.mgrid[0:subject_size, 0:subject_size]
    center = (subject_size - 1) / 2.0
    disk = (yy - center) ** 2 + (xx - center) ** 2 <= (subject_size * 0.35) ** 2
    subject[:, disk] = color[:, None]

    # Mask: a token-aligned rectangle somewhere in the middle region.
    cells = size // TOKEN_CELL_PX
    rect_cells = max(2, cells // 2)
    max_origin = cells - rect_cells
    oy, ox = rng.integers(1, max(max_origin, 2), size=2)
    oy, ox = min(oy, max_origin), min(ox, max_origin)
    user_mask = np.zeros((size, size))
    y0, x0 = oy * TOKEN_CELL_PX, ox * TOKEN_CELL_PX
    y1, x1 = y0 + rect_cells * TOKEN_CELL_PX, x0 + rect_cells * TOKEN_CELL_PX
    user_mask[y0:y1, x0:x1] = 1.0

    # Init: background with the blurred subject pasted into the rectangle.
    init = background.copy()
    region_h, region_w = y1 - y0, x1 - x0
    ys = np.clip((np.arange(region_h) * subject_size) // region_h, 0, subject_size - 1)
    xs = np.clip((np.arange(region_w) * subject_size) // region_w, 0, subject_size - 1)
    patch = subject[:, ys[:, None], xs[None, :]]
    kernel = gaussian_kernel_2d(5, 1.5)
    blurred = np.stack([convolve2d(c, kernel) for c in patch])
    init[:, y0:y1, x0:x1] = blurred.clip(0.0, 1.0)

    return AssetBundle(background, init, subject, user_mask, f"toy subject scene {seed}")


def write_assets(out_dir: str | os.PathLike, seed: int, size: int = 32) -> dict[str, str]:
    """Write one scene plus a default config to out_dir; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    bundle = synthesize(seed, size)
    paths = {
        "bg": os.path.join(out_dir, "bg.ppm"),
        "init": os.path.join(out_dir, "init.ppm"),
        "subject": os.path.join(out_dir, "subject.ppm"),
        "mask": os.path.join(out_dir, "mask.pgm"),
        "config": os.path.join(out_dir, "compose.cfg"),
        "prompt": os.path.join(out_dir, "prompt.txt"),
    }
    write_ppm(paths["bg"], bundle.background)
    write_ppm(paths["init"], bundle.init)
    write_ppm(paths["subject"], bundle.subject)
    write_pgm(paths["mask"], bundle.user_mask)
    config = CompositionConfig(noise_seed=seed)
    with open(paths["config"], "w", encoding="utf-8") as f:
        f.write(format_config_text(config_to_mapping(config), header=f"toy scene seed {seed}"))
    with open(paths["prompt"], "w", encoding="utf-8") as f:
        f.write(bundle.prompt + "\n")
    return paths
