"""File formats: 8-bit grayscale PNG, Middlebury ``.flo`` and a single-channel
``.flo`` variant for noise fields."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .imaging import as_flow, as_image

FLO_MAGIC = struct.pack("<f", 202021.25)  # b"PIEH"
NOISE_MAGIC = b"PIE1"
HEADER = struct.Struct("<4sii")


class PngFormatError(ValueError):
    pass


class FloFormatError(ValueError):
    """Base class for malformed flow/noise containers."""


class FloMagicError(FloFormatError):
    pass


class FloTruncatedError(FloFormatError):
    pass


class FloNonFiniteError(FloFormatError):
    pass


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode != "L":
            raise PngFormatError(f"{path}: expected 8-bit grayscale PNG, got mode {im.mode!r}")
        pixels = np.asarray(im, dtype=np.uint8)
    return pixels.astype(np.float64) * (2.0 / 255.0) - 1.0


def to_uint8(img) -> np.ndarray:
    img = as_image(img, clamp=False)
    return np.clip(np.round((img + 1.0) / 2.0 * 255.0), 0, 255).astype(np.uint8)


def write_png(img, path) -> None:
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PNG")


def encode_flo(flow) -> bytes:
    flow = as_flow(flow)
    h, w = flow.shape[:2]
    return HEADER.pack(FLO_MAGIC, w, h) + flow.astype("<f4").tobytes()


def _decode(buf: bytes, magic: bytes, channels: int, what: str) -> np.ndarray:
    if len(buf) < HEADER.size:
        raise FloTruncatedError(f"{what}: {len(buf)} bytes is shorter than the header")
    got, w, h = HEADER.unpack_from(buf)
    if got != magic:
        raise FloMagicError(f"{what}: bad magic {got!r}")
    if w <= 0 or h <= 0:
        raise FloFormatError(f"{what}: invalid size {w}x{h}")
    need = HEADER.size + 4 * w * h * channels
    if len(buf) < need:
        raise FloTruncatedError(f"{what}: payload has {len(buf) - HEADER.size} bytes, need {need - HEADER.size}")
    if len(buf) > need:
        raise FloFormatError(f"{what}: {len(buf) - need} trailing bytes")
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER.size).astype(np.float32)
    if not np.all(np.isfinite(data)):
        raise FloNonFiniteError(f"{what}: payload holds NaN/Inf values")
    shape = (h, w, channels) if channels > 1 else (h, w)
    return data.reshape(shape)


def decode_flo(buf: bytes) -> np.ndarray:
    return _decode(buf, FLO_MAGIC, 2, "flo")


def write_flo(flow, path) -> None:
    Path(path).write_bytes(encode_flo(flow))


def read_flo(path) -> np.ndarray:
    return decode_flo(Path(path).read_bytes())


def encode_noise(noise) -> bytes:
    noise = np.asarray(noise)
    if noise.ndim != 2:
        raise ValueError(f"noise field must be 2-D, got shape {noise.shape}")
    if not np.all(np.isfinite(noise)):
        raise FloNonFiniteError("noise field holds NaN/Inf values")
    h, w = noise.shape
    return HEADER.pack(NOISE_MAGIC, w, h) + noise.astype("<f4").tobytes()


def write_noise(noise, path) -> None:
    """Store a noise field as single-channel float32 (values are rounded to float32)."""
    Path(path).write_bytes(encode_noise(noise))


def read_noise(path) -> np.ndarray:
    return _decode(Path(path).read_bytes(), NOISE_MAGIC, 1, "noise")
