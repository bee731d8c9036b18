"""Bit-exact file formats: portable pixmaps (P6) and graymaps (P5),
raw latent dumps, and the flat key=value config text.

Images are exchanged as float arrays in [0, 1], channel-first for color;
files are binary PNM with maxval 255.  Latent dumps are an ASCII header
``LAT <C> <H> <W>`` followed by little-endian float32 data in C-then-row-
major order.
"""

from __future__ import annotations

import io
import os

import numpy as np

PathLike = str | os.PathLike


def _read_pnm_tokens(f: io.BufferedReader, count: int) -> list[int]:
    """Read whitespace/comment-delimited ASCII integers from a PNM header."""
    tokens: list[int] = []
    while len(tokens) < count:
        ch = f.read(1)
        if not ch:
            raise ValueError("truncated PNM header")
        if ch.isspace():
            continue
        if ch == b"#":
            while ch and ch != b"\n":
                ch = f.read(1)
            continue
        digits = ch
        while True:
            ch = f.read(1)
            if not ch or ch.isspace():
                break
            if not ch.isdigit():
                raise ValueError(f"malformed PNM header near {ch!r}")
            digits += ch
        tokens.append(int(digits))
    return tokens


def _read_pnm(path: PathLike, magic: bytes, channels: int) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(2) != magic:
            raise ValueError(f"{path}: not a {magic.decode()} file")
        width, height, maxval = _read_pnm_tokens(f, 3)
        if maxval != 255:
            raise ValueError(f"{path}: only maxval 255 is supported, got {maxval}")
        data = f.read(width * height * channels)
    if len(data) != width * height * channels:
        raise ValueError(f"{path}: truncated pixel data")
    raw = np.frombuffer(data, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 1:
        return raw.reshape(height, width)
    return raw.reshape(height, width, channels).transpose(2, 0, 1)


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def read_ppm(path: PathLike) -> np.ndarray:
    """Binary P6 -> (3, H, W) float array in [0, 1]."""
    return _read_pnm(path, b"P6", 3)


def write_ppm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[0] != 3:
        raise ValueError(f"color image must be (3, H, W), got shape {image.shape}")
    _, h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P6 {w} {h} 255\n".encode("ascii"))
        f.write(_quantize(image).transpose(1, 2, 0).tobytes())


def read_pgm(path: PathLike) -> np.ndarray:
    """Binary P5 -> (H, W) float array in [0, 1]."""
    return _read_pnm(path, b"P5", 1)


def write_pgm(path: PathLike, image: np.ndarray) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError(f"gray image must be (H, W), got shape {image.shape}")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(f"P5 {w} {h} 255\n".encode("ascii"))
        f.write(_quantize(image).tobytes())


def write_latent(path: PathLike, z: np.ndarray) -> None:
    """Dump a latent as ``LAT <C> <H> <W>`` plus little-endian float32."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ValueError(f"latent must be C x H x W, got shape {z.shape}")
    c, h, w = z.shape
    with open(path, "wb") as f:
        f.write(f"LAT {c} {h} {w}\n".encode("ascii"))
        f.write(np.ascontiguousarray(z, dtype="<f4").tobytes())


def read_latent(path: PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().decode("ascii", errors="replace").split()
        if len(header) != 4 or header[0] != "LAT":
            raise ValueError(f"{path}: bad latent header {header!r}")
        c, h, w = (int(x) for x in header[1:])
        data = f.read(4 * c * h * w)
    if len(data) != 4 * c * h * w:
        raise ValueError(f"{path}: truncated latent data")
    return np.frombuffer(data, dtype="<f4").astype(np.float64).reshape(c, h, w)


def parse_config_text(text: str) -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment.

    Returns raw string values; schema validation (including unknown-key
    rejection) happens where the config is materialized.
    """
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    return values


def format_config_text(values: dict[str, str], header: str | None = None) -> str:
    lines = [f"# {header}"] if header else []
    lines += [f"{key} = {value}" for key, value in values.items()]
    return "\n".join(lines) + "\n"
