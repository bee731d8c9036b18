"""Shared pure math: Gaussian kernels, small convolutions, Toeplitz blur
operators, row softmax, and binary-mask morphology.

Everything here is a pure function of its arguments and safe to call
concurrently.  Convolutions are direct (no FFT); the grids involved are
tiny and exactness matters more than speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

PADDINGS = ("zero", "replicate")

_STRUCTURE_4 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=np.uint8)
_STRUCTURE_8 = np.ones((3, 3), dtype=np.uint8)


@dataclass(frozen=True)
class Kernel1D:
    """Odd-length, symmetric, non-negative filter normalized to sum 1."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or w.size % 2 == 0 or w.size < 1:
            raise ValueError(f"kernel length must be odd and positive, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("kernel weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel weights must sum to 1, got {w.sum()!r}")
        if not np.allclose(w, w[::-1], rtol=0, atol=1e-12):
            raise ValueError("kernel must be symmetric about its center")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def half(self) -> int:
        return self.weights.size // 2


@dataclass(frozen=True)
class Kernel2D:
    """Separable 2D filter: the outer product of a Kernel1D with itself."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
            raise ValueError(f"2D kernel must be square with odd side, got shape {w.shape}")
        if np.any(w < 0):
            raise ValueError("kernel weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"kernel weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_1d(cls, kernel: Kernel1D) -> "Kernel2D":
        return cls(np.outer(kernel.weights, kernel.weights))

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class ToeplitzBlur:
    """Dense matrix form of a 1D blur: ``matrix @ x`` convolves x.

    Constant along diagonals away from the boundary; with replicate
    padding every row sums to 1, with zero padding boundary rows lose
    the mass that falls off the edge.
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"blur matrix must be square, got shape {m.shape}")
        object.__setattr__(self, "matrix", m)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x


@dataclass(frozen=True)
class BinaryMask:
    """H×W grid with every cell exactly 0 or 1."""

    cells: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.cells)
        if c.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {c.shape}")
        if not np.isin(c, (0, 1)).all():
            raise ValueError("mask cells must all be exactly 0 or 1")
        object.__setattr__(self, "cells", c.astype(np.uint8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def count(self) -> int:
        return int(self.cells.sum())


def _check_padding(padding: str) -> None:
    if padding not in PADDINGS:
        raise ValueError(f"padding must be one of {PADDINGS}, got {padding!r}")


def gaussian_kernel_1d(size: int, sigma: float) -> Kernel1D:
    """Discrete Gaussian sampled at integer offsets, renormalized to sum 1."""
    if size < 1 or size % 2 == 0:
        raise ValueError(f"size must be an odd positive integer, got {size}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    offsets = np.arange(size, dtype=np.float64) - size // 2
    w = np.exp(-0.5 * (offsets / sigma) ** 2)
    return Kernel1D(w / w.sum())


def gaussian_kernel_2d(size: int, sigma: float) -> Kernel2D:
    return Kernel2D.from_1d(gaussian_kernel_1d(size, sigma))


def _pad_1d(x: np.ndarray, half: int, padding: str) -> np.ndarray:
    if half == 0:
        return x
    mode = "constant" if padding == "zero" else "edge"
    pad = [(half, half)] + [(0, 0)] * (x.ndim - 1)
    return np.pad(x, pad, mode=mode)


def convolve1d(x: np.ndarray, kernel: Kernel1D, padding: str = "replicate") -> np.ndarray:
    """Convolve along axis 0; trailing axes are treated as channels."""
    _check_padding(padding)
    x = np.asarray(x, dtype=np.float64)
    h = kernel.half
    padded = _pad_1d(x, h, padding)
    out = np.zeros_like(x)
    n = x.shape[0]
    for tap, w in enumerate(kernel.weights):
        out += w * padded[tap : tap + n]
    return out


def convolve2d(x: np.ndarray, kernel: Kernel2D, padding: str = "replicate") -> np.ndarray:
    """Same-shape 2D convolution of an H×W grid with a square kernel."""
    _check_padding(padding)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"input must be 2D, got shape {x.shape}")
    if kernel.size > 2 * min(x.shape) + 1:
        raise ValueError(
            f"kernel of size {kernel.size} too large for {x.shape[0]}x{x.shape[1]} input"
        )
    h = kernel.size // 2
    mode = "constant" if padding == "zero" else "edge"
    padded = np.pad(x, h, mode=mode)
    out = np.zeros_like(x)
    rows, cols = x.shape
    for i in range(kernel.size):
        for j in range(kernel.size):
            out += kernel.weights[i, j] * padded[i : i + rows, j : j + cols]
    return out


def toeplitz_from_kernel(kernel: Kernel1D, n: int, padding: str = "replicate") -> ToeplitzBlur:
    """Build B with B @ x == convolve1d(x, kernel, padding) for length-n x."""
    _check_padding(padding)
    if n < 1:
        raise ValueError(f"sequence length must be positive, got {n}")
    if kernel.size > 2 * n - 1:
        raise ValueError(f"kernel of size {kernel.size} too long for sequences of length {n}")
    h = kernel.half
    b = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for k in range(-h, h + 1):
            j = i + k
            if 0 <= j < n:
                b[i, j] += kernel.weights[h + k]
            elif padding == "replicate":
                b[i, min(max(j, 0), n - 1)] += kernel.weights[h + k]
    return ToeplitzBlur(b)


def attn_blur_equivalence_residual(
    Q: np.ndarray, K: np.ndarray, kernel: Kernel1D, padding: str = "replicate"
) -> float:
    """Max-abs gap between blurring the weight matrix Q Kᵀ row-wise and
    blurring Q first: ‖B(QKᵀ) − (BQ)Kᵀ‖∞.  Zero up to float error for any
    linear blur B, since both sides are the same associativity-rearranged
    product.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if Q.shape != K.shape:
        raise ValueError(f"Q and K must have the same shape, got {Q.shape} vs {K.shape}")
    b = toeplitz_from_kernel(kernel, Q.shape[0], padding).matrix
    lhs = b @ (Q @ K.T)
    rhs = (b @ Q) @ K.T
    return float(np.abs(lhs - rhs).max())


def key_blur_residual(
    Q: np.ndarray, K: np.ndarray, kernel: Kernel1D, padding: str = "replicate"
) -> float:
    """Gap ‖B(QKᵀ) − Q(BK)ᵀ‖∞ when the blur is applied to K instead of Q.

    Nonzero on generic inputs: Q(BK)ᵀ = (QKᵀ)Bᵀ, and right-multiplication
    by Bᵀ is not the same operator as left-multiplication by B.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if Q.shape != K.shape:
        raise ValueError(f"Q and K must have the same shape, got {Q.shape} vs {K.shape}")
    b = toeplitz_from_kernel(kernel, Q.shape[0], padding).matrix
    lhs = b @ (Q @ K.T)
    rhs = Q @ (b @ K).T
    return float(np.abs(lhs - rhs).max())


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax; each output row is a probability distribution."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(logits).all():
        raise ValueError("softmax input must be finite")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def binarize(values: np.ndarray, gamma: float) -> BinaryMask:
    """Threshold a [0,1] map at gamma.  Out-of-range values are clamped
    first; upstream maps are normalized so this is only a safety net.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    return BinaryMask((v >= gamma).astype(np.uint8))


def dilate(mask: BinaryMask, kernel_size: int) -> BinaryMask:
    """Morphological dilation with a kernel_size × kernel_size square."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValueError(f"kernel_size must be odd and positive, got {kernel_size}")
    if kernel_size == 1:
        return BinaryMask(mask.cells.copy())
    h = kernel_size // 2
    padded = np.pad(mask.cells.astype(bool), h, mode="constant", constant_values=False)
    rows, cols = mask.shape
    out = np.zeros((rows, cols), dtype=bool)
    for i in range(kernel_size):
        for j in range(kernel_size):
            out |= padded[i : i + rows, j : j + cols]
    return BinaryMask(out.astype(np.uint8))


def max_connected_component(mask: BinaryMask, connectivity: int = 4) -> BinaryMask:
    """Keep only the largest connected component of on-cells.

    Ties go to the component whose first cell appears earliest in raster
    scan order.  An empty mask stays empty.
    """
    if connectivity not in (4, 8):
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    structure = _STRUCTURE_4 if connectivity == 4 else _STRUCTURE_8
    labels, num = ndimage.label(mask.cells, structure=structure)
    if num == 0:
        return BinaryMask(np.zeros(mask.shape, dtype=np.uint8))
    sizes = np.bincount(labels.ravel())[1:]
    # ndimage.label assigns labels in scan order, so argmax on a tie picks
    # the component seen first.
    best = int(np.argmax(sizes)) + 1
    return BinaryMask((labels == best).astype(np.uint8))


def iou(a: BinaryMask, b: BinaryMask) -> float:
    """Intersection over union; two empty masks count as a perfect match."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    inter = int(np.logical_and(a.cells, b.cells).sum())
    union = int(np.logical_or(a.cells, b.cells).sum())
    if union == 0:
        return 1.0
    return inter / union
