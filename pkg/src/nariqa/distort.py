"""Synthetic distortion catalog: 34 types x 5 severity levels.

Parameters live in a versioned CSV shipped with the package so severity
spacing is frozen. Level 1 sits near the visibility threshold, level 5 is
strongly visible, and every per-level parameter vector is monotone in its
severity direction. Stochastic types draw from a Philox stream keyed by
(seed, type_id, level) in fixed raster order, so output is independent of
scheduling.

Full-frame application is `apply_distortion`; `apply_masked` blends the
distorted frame into the original through a feathered motion mask, leaving
pixels outside the mask support bit-exact.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .flowtroi import TroiMask
from .imagecore import Image, ShapeMismatchError, from_luma_chroma, to_luma_chroma
from .rng import stream

CATALOG_FILE = "distortion_catalog.csv"
CATALOG_VERSION = 1

DCT_BLOCK = 8
JITTER_TILE = 16
WARP_PERIOD = 32.0
UNSHARP_SIGMA = 1.5

# JPEG-style luminance quantization table, rescaled to unit-float amplitudes.
_QTABLE = (
    np.array(
        [
            [16, 11, 10, 16, 24, 40, 51, 61],
            [12, 12, 14, 19, 26, 58, 60, 55],
            [14, 13, 16, 24, 40, 57, 69, 56],
            [14, 17, 22, 29, 51, 87, 80, 62],
            [18, 22, 37, 56, 68, 109, 103, 77],
            [24, 35, 55, 64, 81, 104, 113, 92],
            [49, 64, 78, 87, 103, 121, 120, 101],
            [72, 92, 95, 98, 112, 100, 103, 99],
        ],
        dtype=np.float64,
    )
    / 255.0
)


class DistortionError(ValueError):
    pass


@dataclass(frozen=True)
class DistortionSpec:
    type_id: str
    level: int
    seed: int = 0
    params: tuple[float, ...] | None = None  # overrides the catalog row


@dataclass(frozen=True)
class CatalogEntry:
    type_id: str
    category: str
    stochastic: bool
    level_params: tuple[tuple[float, ...], ...]  # 5 vectors, level order


@lru_cache(maxsize=1)
def catalog_list() -> tuple[CatalogEntry, ...]:
    """The compiled-in catalog, stable order, validated against the impls."""
    text = resources.files("nariqa.data").joinpath(CATALOG_FILE).read_text()
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#catalog-version="):
        raise DistortionError("catalog file missing version line")
    version = int(lines[0].split("=", 1)[1])
    if version != CATALOG_VERSION:
        raise DistortionError(f"unsupported catalog version {version}")
    rows = list(csv.DictReader(lines[1:]))
    by_type: dict[str, dict] = {}
    order: list[str] = []
    for row in rows:
        tid = row["type_id"]
        if tid not in by_type:
            by_type[tid] = {
                "category": row["category"],
                "stochastic": row["stochastic"] == "1",
                "levels": {},
            }
            order.append(tid)
        params = tuple(
            float(row[k]) for k in ("p1", "p2") if row[k] not in ("", None)
        )
        by_type[tid]["levels"][int(row["level"])] = params
    entries = []
    for tid in order:
        info = by_type[tid]
        if sorted(info["levels"]) != [1, 2, 3, 4, 5]:
            raise DistortionError(f"{tid}: catalog must define levels 1..5")
        if tid not in _IMPLS:
            raise DistortionError(f"{tid}: no implementation registered")
        entries.append(
            CatalogEntry(
                tid,
                info["category"],
                info["stochastic"],
                tuple(info["levels"][lv] for lv in (1, 2, 3, 4, 5)),
            )
        )
    return tuple(entries)


@lru_cache(maxsize=1)
def _catalog_index() -> dict[str, CatalogEntry]:
    return {e.type_id: e for e in catalog_list()}


def resolve_params(spec: DistortionSpec) -> tuple[float, ...]:
    entry = _catalog_index().get(spec.type_id)
    if entry is None:
        raise DistortionError(f"unknown distortion type {spec.type_id!r}")
    if spec.level not in (1, 2, 3, 4, 5):
        raise DistortionError(f"invalid level {spec.level}")
    if spec.params is not None:
        expected = len(entry.level_params[spec.level - 1])
        if len(spec.params) != expected:
            raise DistortionError(
                f"{spec.type_id}: expected {expected} params, got {len(spec.params)}"
            )
        return spec.params
    return entry.level_params[spec.level - 1]


# ---------------------------------------------------------------------------
# generator implementations: float64 (H, W, 3) in [0,1] -> same, pre-clamp
# ---------------------------------------------------------------------------


def _blur(f, sigma):
    out = np.empty_like(f)
    for c in range(3):
        out[:, :, c] = ndimage.gaussian_filter(f[:, :, c], sigma, mode="nearest", truncate=3.0)
    return out


def _conv2(f, kernel):
    out = np.empty_like(f)
    for c in range(3):
        out[:, :, c] = ndimage.convolve(f[:, :, c], kernel, mode="nearest")
    return out


def _gaussian_blur(f, p, rng):
    return _blur(f, p[0])


def _lens_blur(f, p, rng):
    r = int(p[0])
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    kernel = (yy**2 + xx**2 <= r * r).astype(np.float64)
    kernel /= kernel.sum()
    return _conv2(f, kernel)


def _motion_blur(f, p, rng):
    length = int(p[0])
    kernel = np.full((1, length), 1.0 / length)
    return _conv2(f, kernel)


def _chroma_transform(f, fn):
    yc = to_luma_chroma(Image(f)).data
    cb = yc[:, :, 1] - 0.5
    cr = yc[:, :, 2] - 0.5
    cb, cr = fn(cb, cr)
    yc[:, :, 1] = cb + 0.5
    yc[:, :, 2] = cr + 0.5
    return from_luma_chroma(Image(yc, "LumaChroma")).data


def _hue_rotate(f, p, rng):
    theta = np.deg2rad(p[0])
    c, s = np.cos(theta), np.sin(theta)
    return _chroma_transform(f, lambda cb, cr: (c * cb - s * cr, s * cb + c * cr))


def _saturate(f, p, rng):
    scale = p[0]
    return _chroma_transform(f, lambda cb, cr: (scale * cb, scale * cr))


def _color_quantize(f, p, rng):
    n = p[0] - 1.0
    return np.rint(f * n) / n


def _shift2d(plane, dx, dy):
    h, w = plane.shape
    pad = max(abs(int(dx)), abs(int(dy)))
    if pad == 0:
        return plane.copy()
    padded = np.pad(plane, pad, mode="edge")
    return padded[pad - dy : pad - dy + h, pad - dx : pad - dx + w]


def _chromatic_aberration(f, p, rng):
    d = int(p[0])
    out = f.copy()
    out[:, :, 0] = _shift2d(f[:, :, 0], d, 0)
    out[:, :, 2] = _shift2d(f[:, :, 2], -d, 0)
    return out


def _pad_to_multiple(plane, m):
    h, w = plane.shape
    ph = (m - h % m) % m
    pw = (m - w % m) % m
    return np.pad(plane, ((0, ph), (0, pw)), mode="edge"), h, w


def _block_dct_quantize(f, p, rng):
    qscale = p[0]
    q = _QTABLE * qscale
    out = np.empty_like(f)
    for c in range(3):
        plane, h, w = _pad_to_multiple(f[:, :, c], DCT_BLOCK)
        hh, ww = plane.shape
        blocks = plane.reshape(hh // DCT_BLOCK, DCT_BLOCK, ww // DCT_BLOCK, DCT_BLOCK)
        blocks = blocks.transpose(0, 2, 1, 3)
        coef = sfft.dctn(blocks, axes=(2, 3), norm="ortho")
        coef = np.rint(coef / q) * q
        rec = sfft.idctn(coef, axes=(2, 3), norm="ortho")
        rec = rec.transpose(0, 2, 1, 3).reshape(hh, ww)
        out[:, :, c] = rec[:h, :w]
    return out


def _block_average(f, p, rng):
    b = int(p[0])
    out = np.empty_like(f)
    for c in range(3):
        plane, h, w = _pad_to_multiple(f[:, :, c], b)
        hh, ww = plane.shape
        blocks = plane.reshape(hh // b, b, ww // b, b)
        means = blocks.mean(axis=(1, 3))
        rec = np.repeat(np.repeat(means, b, axis=0), b, axis=1)
        out[:, :, c] = rec[:h, :w]
    return out


def _bit_depth_banding(f, p, rng):
    n = 2.0 ** p[0] - 1.0
    return np.rint(f * n) / n


def _gaussian_luma(f, p, rng):
    noise = p[0] * rng.standard_normal(f.shape[:2])
    yc = to_luma_chroma(Image(f)).data
    yc[:, :, 0] = yc[:, :, 0] + noise
    return from_luma_chroma(Image(yc, "LumaChroma")).data


def _gaussian_color(f, p, rng):
    return f + p[0] * rng.standard_normal(f.shape)


def _impulse(f, p, rng):
    frac = p[0]
    u = rng.random(f.shape[:2])
    out = f.copy()
    out[u < frac / 2] = 0.0
    out[u > 1.0 - frac / 2] = 1.0
    return out


def _speckle(f, p, rng):
    n = rng.standard_normal(f.shape[:2])
    return f * (1.0 + p[0] * n[:, :, None])


def _poisson_like(f, p, rng):
    lam = p[0]
    n = rng.standard_normal(f.shape)
    return f + np.sqrt(np.maximum(f, 0.0) / lam) * n


def _over_box_smooth(f, p, rng):
    k = int(p[0])
    out = np.empty_like(f)
    for c in range(3):
        out[:, :, c] = ndimage.uniform_filter(f[:, :, c], size=k, mode="nearest")
    return out


def _over_median_smooth(f, p, rng):
    k = int(p[0])
    out = np.empty_like(f)
    for c in range(3):
        out[:, :, c] = ndimage.median_filter(f[:, :, c], size=k, mode="nearest")
    return out


def _brighten(f, p, rng):
    return f + p[0]


def _darken(f, p, rng):
    return f - p[0]


def _vignette(f, p, rng):
    h, w = f.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.mgrid[0:h, 0:w]
    d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (cy * cy + cx * cx)
    return f * (1.0 - p[0] * d2)[:, :, None]


def _illumination_gradient(f, p, rng):
    w = f.shape[1]
    ramp = p[0] * (2.0 * np.arange(w) / (w - 1) - 1.0)
    return f + ramp[None, :, None]


def _nearest_indices(n_out, n_in):
    idx = np.floor((np.arange(n_out) + 0.5) * (n_in / n_out)).astype(np.intp)
    return np.clip(idx, 0, n_in - 1)


def _nearest_down_up(f, p, rng):
    factor = p[0]
    h, w = f.shape[:2]
    nh = max(1, int(round(h / factor)))
    nw = max(1, int(round(w / factor)))
    small = f[_nearest_indices(nh, h)][:, _nearest_indices(nw, w)]
    return small[_nearest_indices(h, nh)][:, _nearest_indices(w, nw)]


def _bilinear_down_up(f, p, rng):
    from .imagecore import resize_bilinear

    factor = p[0]
    h, w = f.shape[:2]
    nh = max(1, int(round(h / factor)))
    nw = max(1, int(round(w / factor)))
    small = resize_bilinear(Image(f), nw, nh)
    return resize_bilinear(small, w, h).data


def _unsharp_overshoot(f, p, rng):
    return f + p[0] * (f - _blur(f, UNSHARP_SIGMA))


def _highpass_boost(f, p, rng):
    lap = np.array([[0.0, -1.0, 0.0], [-1.0, 4.0, -1.0], [0.0, -1.0, 0.0]])
    return f + p[0] * _conv2(f, lap)


def _contrast(f, p, rng):
    return 0.5 + p[0] * (f - 0.5)


def _gamma(f, p, rng):
    return np.power(np.clip(f, 0.0, 1.0), p[0])


def _micro_translation(f, p, rng):
    dx, dy = int(p[0]), int(p[1])
    out = np.empty_like(f)
    for c in range(3):
        out[:, :, c] = _shift2d(f[:, :, c], dx, dy)
    return out


def _sinusoidal_warp(f, p, rng):
    amp = p[0]
    h, w = f.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    sy = yy + amp * np.cos(2.0 * np.pi * xx / WARP_PERIOD)
    sx = xx + amp * np.sin(2.0 * np.pi * yy / WARP_PERIOD)
    sy = np.clip(sy, 0, h - 1)
    sx = np.clip(sx, 0, w - 1)
    out = np.empty_like(f)
    for c in range(3):
        out[:, :, c] = ndimage.map_coordinates(f[:, :, c], [sy, sx], order=1, mode="nearest")
    return out


def _patch_jitter(f, p, rng):
    j = int(p[0])
    h, w = f.shape[:2]
    out = f.copy()
    for y0 in range(0, h, JITTER_TILE):
        for x0 in range(0, w, JITTER_TILE):
            dy = int(rng.integers(-j, j + 1))
            dx = int(rng.integers(-j, j + 1))
            y1 = min(y0 + JITTER_TILE, h)
            x1 = min(x0 + JITTER_TILE, w)
            sy0 = np.clip(y0 + dy, 0, h - (y1 - y0))
            sx0 = np.clip(x0 + dx, 0, w - (x1 - x0))
            out[y0:y1, x0:x1] = f[sy0 : sy0 + (y1 - y0), sx0 : sx0 + (x1 - x0)]
    return out


def _ghosting_overlay(f, p, rng):
    weight, d = p[0], int(p[1])
    ghost = np.empty_like(f)
    for c in range(3):
        ghost[:, :, c] = _shift2d(f[:, :, c], d, d // 2)
    return (1.0 - weight) * f + weight * ghost


_IMPLS = {
    "gaussian-blur": _gaussian_blur,
    "lens-blur": _lens_blur,
    "motion-blur": _motion_blur,
    "hue-rotate": _hue_rotate,
    "saturate-up": _saturate,
    "saturate-down": _saturate,
    "color-quantize": _color_quantize,
    "chromatic-aberration": _chromatic_aberration,
    "block-dct-quantize": _block_dct_quantize,
    "block-average": _block_average,
    "bit-depth-banding": _bit_depth_banding,
    "gaussian-luma": _gaussian_luma,
    "gaussian-color": _gaussian_color,
    "impulse": _impulse,
    "speckle": _speckle,
    "poisson-like": _poisson_like,
    "over-box-smooth": _over_box_smooth,
    "over-median-smooth": _over_median_smooth,
    "brighten": _brighten,
    "darken": _darken,
    "vignette": _vignette,
    "illumination-gradient": _illumination_gradient,
    "nearest-down-up": _nearest_down_up,
    "bilinear-down-up": _bilinear_down_up,
    "unsharp-overshoot": _unsharp_overshoot,
    "highpass-boost": _highpass_boost,
    "contrast-up": _contrast,
    "contrast-down": _contrast,
    "gamma-up": _gamma,
    "gamma-down": _gamma,
    "micro-translation": _micro_translation,
    "sinusoidal-warp": _sinusoidal_warp,
    "patch-jitter": _patch_jitter,
    "ghosting-overlay": _ghosting_overlay,
}


def apply_distortion(img: Image, spec: DistortionSpec) -> Image:
    """Full-frame distorted copy; deterministic given (img, spec)."""
    if min(img.height, img.width) < 32:
        raise DistortionError("image must be at least 32x32")
    params = resolve_params(spec)
    entry = _catalog_index()[spec.type_id]
    rng = stream("distort", spec.seed, spec.type_id, spec.level) if entry.stochastic else None
    f = img.to_float().data
    out = _IMPLS[spec.type_id](f, params, rng)
    out = np.clip(out, 0.0, 1.0)
    res = Image(out, img.color_space)
    return res if img.is_float else res.to_uint8()


def apply_masked(img: Image, spec: DistortionSpec, mask: TroiMask) -> Image:
    """Blend the distorted frame through the mask's soft weights.

    Computed in unit-float and quantized once; pixels where the soft weight
    is zero are bit-exact copies of the input.
    """
    if (mask.height, mask.width) != (img.height, img.width):
        raise ShapeMismatchError("mask dimensions do not match image")
    if mask.soft is None:
        raise DistortionError("mask must be feathered before blending")
    distorted = apply_distortion(img.to_float(), spec).data
    orig = img.to_float().data
    w = mask.soft[:, :, None]
    out = w * distorted + (1.0 - w) * orig
    res = Image(out, img.color_space)
    return res if img.is_float else res.to_uint8()
