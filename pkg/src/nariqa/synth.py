"""Seeded synthetic scenes: textured backgrounds with moving patches.

These stand in for video frames wherever the pipeline needs real footage:
tests, the self-test command, and the toy end-to-end experiment. Frames are
camera-pan crops of a static world texture with a few faster-moving textured
blobs layered on top, so inter-frame motion is concentrated but nonzero
everywhere.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .imagecore import Image
from .rng import stream


def textured_field(h: int, w: int, seed_parts, scales=(1.0, 4.0, 12.0)) -> np.ndarray:
    """Multi-scale random texture in [0, 1]; matchable at every pyramid level."""
    rng = stream("texture", *seed_parts)
    acc = np.zeros((h, w), dtype=np.float64)
    for i, sigma in enumerate(scales):
        noise = rng.standard_normal((h, w))
        layer = ndimage.gaussian_filter(noise, sigma, mode="wrap")
        sd = layer.std()
        if sd > 0:
            layer /= sd
        acc += layer / (i + 1)
    lo, hi = acc.min(), acc.max()
    if hi > lo:
        acc = (acc - lo) / (hi - lo)
    return acc


def textured_rgb(h: int, w: int, seed_parts, lo: float = 0.12, hi: float = 0.88) -> np.ndarray:
    """Colored texture: shared luma structure plus per-channel chroma detail."""
    base = textured_field(h, w, (*seed_parts, "luma"))
    out = np.empty((h, w, 3), dtype=np.float64)
    for c in range(3):
        tint = textured_field(h, w, (*seed_parts, "chroma", c), scales=(6.0, 18.0))
        out[:, :, c] = 0.75 * base + 0.25 * tint
    return lo + (hi - lo) * out


def make_scene(
    scene_id: str,
    n_frames: int,
    h: int = 96,
    w: int = 96,
    seed: int = 0,
    n_blobs: int = 2,
    pan_px: int = 1,
) -> list[Image]:
    """Frame sequence: slow global pan plus `n_blobs` faster textured movers."""
    rng = stream("scene", seed, scene_id)
    margin = pan_px * n_frames + 8
    world = textured_rgb(h + 2 * margin, w + 2 * margin, ("world", seed, scene_id))

    blobs = []
    for b in range(n_blobs):
        bh = int(rng.integers(h // 5, h // 3))
        bw = int(rng.integers(w // 5, w // 3))
        tex = textured_rgb(bh, bw, ("blob", seed, scene_id, b), lo=0.1, hi=0.9)
        x0 = int(rng.integers(0, w - bw))
        y0 = int(rng.integers(0, h - bh))
        vx = int(rng.integers(2, 5)) * (1 if rng.integers(2) else -1)
        vy = int(rng.integers(0, 3)) * (1 if rng.integers(2) else -1)
        blobs.append((tex, x0, y0, vx, vy))

    frames = []
    for t in range(n_frames):
        ox = margin + pan_px * t
        oy = margin
        frame = world[oy : oy + h, ox : ox + w].copy()
        for tex, x0, y0, vx, vy in blobs:
            bh, bw = tex.shape[:2]
            # Bounce the blob off the frame edges.
            x = x0 + vx * t
            y = y0 + vy * t
            span_x = max(w - bw, 1)
            span_y = max(h - bh, 1)
            x = abs((x % (2 * span_x)) - span_x) % span_x
            y = abs((y % (2 * span_y)) - span_y) % span_y
            frame[y : y + bh, x : x + bw] = tex
        frames.append(Image(np.clip(frame, 0.0, 1.0)).to_uint8())
    return frames


def shifted_pair(h: int, w: int, dx: int, dy: int, seed: int = 0) -> tuple[Image, Image]:
    """Wrap-free translated frame pair: content moves by exactly (dx, dy).

    Uses a fine-grained random texture so every block is distinctive.
    """
    pad = max(abs(dx), abs(dy)) + 2
    rng = stream("pair", seed)
    noise = rng.random((h + 2 * pad, w + 2 * pad))
    field = ndimage.gaussian_filter(noise, 0.75, mode="wrap")
    lo, hi = field.min(), field.max()
    field = (field - lo) / (hi - lo)
    world = np.repeat(field[:, :, None], 3, axis=2)
    prev = world[pad : pad + h, pad : pad + w]
    curr = world[pad - dy : pad - dy + h, pad - dx : pad - dx + w]
    return Image(prev.copy()).to_uint8(), Image(curr.copy()).to_uint8()
