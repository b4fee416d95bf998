"""Core image type, PNG codec, color transforms, patch extraction, distances.

Images are (H, W, 3) numpy arrays wrapped in a thin dataclass: uint8 for 8-bit
sRGB frames on disk, float64 in [0, 1] for all computation. The only on-disk
raster format is 8-bit RGB PNG.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from PIL import Image as PILImage

SRGB = "sRGB"
LUMA_CHROMA = "LumaChroma"

# BT.601 full-range luma weights.
_KR, _KG, _KB = 0.299, 0.587, 0.114


class ImageError(ValueError):
    """Base class for image codec and shape errors."""


class ImageReadError(ImageError):
    """File missing, truncated, or not a PNG."""


class UnsupportedBitDepthError(ImageError):
    """PNG bit depth other than 8."""


class UnsupportedColorTypeError(ImageError):
    """PNG color type other than truecolor / truecolor+alpha."""


class ShapeMismatchError(ImageError):
    """Operands have different dimensions."""


@dataclass
class Image:
    """A 3-channel raster: uint8 in [0,255] or float64 in [0,1]."""

    data: np.ndarray
    color_space: str = SRGB

    def __post_init__(self):
        if self.data.ndim != 3 or self.data.shape[2] != 3:
            raise ImageError(f"expected (H, W, 3) data, got shape {self.data.shape}")
        if self.data.dtype not in (np.uint8, np.float64):
            raise ImageError(f"expected uint8 or float64 data, got {self.data.dtype}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def is_float(self) -> bool:
        return self.data.dtype == np.float64

    def to_float(self) -> "Image":
        """Unit-float copy; uint8 samples map to v/255."""
        if self.is_float:
            return Image(self.data.copy(), self.color_space)
        return Image(self.data.astype(np.float64) / 255.0, self.color_space)

    def to_uint8(self) -> "Image":
        """8-bit copy; float samples map to round(v*255) clamped to [0,255]."""
        if not self.is_float:
            return Image(self.data.copy(), self.color_space)
        q = np.clip(np.rint(self.data * 255.0), 0.0, 255.0).astype(np.uint8)
        return Image(q, self.color_space)


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping patch tiling; remainder rows/cols are dropped."""

    patch_size: int = 14
    grid_h: int = 1
    grid_w: int = 1

    @classmethod
    def for_image(cls, img: Image, patch_size: int = 14) -> "PatchGrid":
        if patch_size > min(img.height, img.width):
            raise ImageError(
                f"patch_size {patch_size} exceeds image {img.width}x{img.height}"
            )
        return cls(patch_size, img.height // patch_size, img.width // patch_size)

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w


def _read_ihdr(path) -> tuple[int, int, int, int]:
    """Return (width, height, bit_depth, color_type) from the PNG header."""
    try:
        with open(path, "rb") as fh:
            head = fh.read(33)
    except OSError as exc:
        raise ImageReadError(f"cannot read {path}: {exc}") from exc
    if len(head) < 33 or head[:8] != b"\x89PNG\r\n\x1a\n":
        raise ImageReadError(f"{path} is not a PNG file")
    if head[12:16] != b"IHDR":
        raise ImageReadError(f"{path}: missing IHDR chunk")
    width, height = struct.unpack(">II", head[16:24])
    bit_depth, color_type = head[24], head[25]
    return width, height, bit_depth, color_type


def load_image(path) -> Image:
    """Decode an 8-bit RGB/RGBA PNG to an sRGB uint8 Image (alpha dropped)."""
    _, _, bit_depth, color_type = _read_ihdr(path)
    if bit_depth != 8:
        raise UnsupportedBitDepthError(f"{path}: unsupported bit depth {bit_depth}")
    if color_type not in (2, 6):
        raise UnsupportedColorTypeError(f"{path}: unsupported color type {color_type}")
    try:
        with PILImage.open(path) as im:
            arr = np.asarray(im)
    except Exception as exc:
        raise ImageReadError(f"cannot decode {path}: {exc}") from exc
    if arr.ndim != 3 or arr.shape[2] not in (3, 4):
        raise ImageReadError(f"{path}: decoded to unexpected shape {arr.shape}")
    return Image(np.ascontiguousarray(arr[:, :, :3]), SRGB)


def save_image(img: Image, path) -> None:
    """Write an 8-bit RGB PNG; float inputs are quantized by round(v*255)."""
    u8 = img.to_uint8()
    try:
        PILImage.fromarray(u8.data, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise ImageError(f"cannot write {path}: {exc}") from exc


def save_gray_png(values: np.ndarray, path) -> None:
    """Write a single-channel 8-bit gray PNG from uint8 or unit-float values."""
    if values.dtype != np.uint8:
        values = np.clip(np.rint(values * 255.0), 0.0, 255.0).astype(np.uint8)
    PILImage.fromarray(values, mode="L").save(path, format="PNG")


def luma(img: Image) -> np.ndarray:
    """BT.601 full-range luma as a float64 (H, W) array in [0, 1]."""
    f = img.to_float().data if not img.is_float else img.data
    if img.color_space == LUMA_CHROMA:
        return f[:, :, 0].copy()
    return _KR * f[:, :, 0] + _KG * f[:, :, 1] + _KB * f[:, :, 2]


def to_luma_chroma(img: Image) -> Image:
    """BT.601 full-range sRGB -> (Y, Cb, Cr) with chroma offset to 0.5."""
    if img.color_space != SRGB:
        raise ImageError("to_luma_chroma expects an sRGB image")
    f = img.to_float().data
    r, g, b = f[:, :, 0], f[:, :, 1], f[:, :, 2]
    y = _KR * r + _KG * g + _KB * b
    cb = (b - y) * (0.5 / (1.0 - _KB)) + 0.5
    cr = (r - y) * (0.5 / (1.0 - _KR)) + 0.5
    return Image(np.stack([y, cb, cr], axis=2), LUMA_CHROMA)


def from_luma_chroma(img: Image) -> Image:
    """Inverse of to_luma_chroma; output clamped to [0, 1]."""
    if img.color_space != LUMA_CHROMA:
        raise ImageError("from_luma_chroma expects a LumaChroma image")
    f = img.data if img.is_float else img.to_float().data
    y, cb, cr = f[:, :, 0], f[:, :, 1], f[:, :, 2]
    r = y + (cr - 0.5) * ((1.0 - _KR) / 0.5)
    b = y + (cb - 0.5) * ((1.0 - _KB) / 0.5)
    g = (y - _KR * r - _KB * b) / _KG
    rgb = np.clip(np.stack([r, g, b], axis=2), 0.0, 1.0)
    return Image(rgb, SRGB)


def extract_patches(img: Image, grid: PatchGrid) -> list[np.ndarray]:
    """Patch views in raster order; pixels past the grid are dropped."""
    if grid.patch_size > min(img.height, img.width):
        raise ImageError("patch_size larger than image")
    if grid.grid_h != img.height // grid.patch_size or grid.grid_w != img.width // grid.patch_size:
        raise ImageError("grid does not match image dimensions")
    p = grid.patch_size
    return [
        img.data[gy * p : (gy + 1) * p, gx * p : (gx + 1) * p]
        for gy in range(grid.grid_h)
        for gx in range(grid.grid_w)
    ]


def mse(a: Image, b: Image) -> float:
    """Mean squared difference over unit-float samples."""
    if a.data.shape != b.data.shape:
        raise ShapeMismatchError(f"shape mismatch {a.data.shape} vs {b.data.shape}")
    fa = a.to_float().data
    fb = b.to_float().data
    return float(np.mean((fa - fb) ** 2))


def _resample_axis(arr: np.ndarray, new_len: int, axis: int) -> np.ndarray:
    old_len = arr.shape[axis]
    # Half-pixel-center alignment; scale 1.0 reduces to the identity exactly.
    coords = (np.arange(new_len, dtype=np.float64) + 0.5) * (old_len / new_len) - 0.5
    coords = np.clip(coords, 0.0, old_len - 1.0)
    lo = np.floor(coords).astype(np.intp)
    hi = np.minimum(lo + 1, old_len - 1)
    w = coords - lo
    a_lo = np.take(arr, lo, axis=axis)
    a_hi = np.take(arr, hi, axis=axis)
    shape = [1] * arr.ndim
    shape[axis] = new_len
    w = w.reshape(shape)
    return a_lo * (1.0 - w) + a_hi * w


def resize_bilinear(img: Image, new_w: int, new_h: int) -> Image:
    """Separable bilinear resize with half-pixel centers; same dtype as input."""
    if new_w < 1 or new_h < 1:
        raise ImageError("target dimensions must be >= 1")
    f = img.to_float().data
    out = _resample_axis(_resample_axis(f, new_h, axis=0), new_w, axis=1)
    res = Image(out, img.color_space)
    return res if img.is_float else res.to_uint8()
