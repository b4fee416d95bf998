"""Dense block-matching optical flow and motion-region masks.

Flow is estimated with a 3-level pyramid on luma: exhaustive +/-8 search at
the coarsest level, +/-2 refinement per finer level, SAD cost, ties broken by
smaller displacement magnitude then scan order of (dy, dx), and a final 3x3
median filter per component. Displacements are integer-valued.

A motion mask selects the requested fraction of highest-magnitude pixels and
is optionally cleaned (3x3 closing, small components removed) and feathered.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imagecore import Image, ShapeMismatchError, luma

BLOCK = 8
COARSE_RADIUS = 8
REFINE_RADIUS = 2
PYRAMID_LEVELS = 3
# Worst-case |u|,|v| after upscaling and refinement at every level.
MAX_DISPLACEMENT = ((COARSE_RADIUS * 2 + REFINE_RADIUS) * 2) + REFINE_RADIUS

MIN_COMPONENT = 16

FLOW_MAGIC = b"NVFL"
FLOW_VERSION = 1


class FlowError(ValueError):
    pass


@dataclass
class FlowField:
    """Integer per-pixel displacement: curr(x, y) ~ prev(x - u, y - v)."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape:
            raise FlowError("u and v shapes differ")

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]


@dataclass
class TroiMask:
    """Binary motion mask with achieved coverage and optional soft weights."""

    bits: np.ndarray
    coverage: float
    soft: np.ndarray | None = None

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


def _downsample2(y: np.ndarray) -> np.ndarray:
    """Anti-aliased pyramid reduction; odd remainder rows/cols dropped."""
    y = ndimage.gaussian_filter(y, 1.0, mode="nearest", truncate=3.0)
    h, w = y.shape
    y = y[: h - h % 2, : w - w % 2]
    return 0.25 * (y[0::2, 0::2] + y[0::2, 1::2] + y[1::2, 0::2] + y[1::2, 1::2])


def _block_starts(n: int) -> np.ndarray:
    """Start offsets of 8px blocks; a short last block is shifted to fit."""
    starts = list(range(0, n - BLOCK + 1, BLOCK))
    if starts[-1] + BLOCK < n:
        starts.append(n - BLOCK)
    return np.asarray(starts, dtype=np.intp)


def _match_blocks(prev: np.ndarray, curr: np.ndarray, init_u, init_v, radius: int):
    """Best integer displacement per block around per-block initial guesses.

    prev is edge-replicated so every candidate window is evaluable, including
    near frame borders where content slides in from outside.
    """
    h, w = curr.shape
    ys = _block_starts(h)
    xs = _block_starts(w)
    nby, nbx = len(ys), len(xs)
    pad = radius + int(max(np.abs(init_u).max(), np.abs(init_v).max()))
    prev_p = np.pad(prev, pad, mode="edge")
    best_u = np.zeros((nby, nbx), dtype=np.int64)
    best_v = np.zeros((nby, nbx), dtype=np.int64)
    for by in range(nby):
        for bx in range(nbx):
            y0, x0 = ys[by], xs[bx]
            block = curr[y0 : y0 + BLOCK, x0 : x0 + BLOCK]
            cu = int(init_u[by, bx])
            cv = int(init_v[by, bx])
            best = None  # (cost, mag2, dv, du)
            for dv in range(cv - radius, cv + radius + 1):
                sy = y0 - dv + pad
                for du in range(cu - radius, cu + radius + 1):
                    sx = x0 - du + pad
                    cand = prev_p[sy : sy + BLOCK, sx : sx + BLOCK]
                    cost = float(np.abs(block - cand).sum())
                    key = (cost, du * du + dv * dv, dv, du)
                    if best is None or key < best:
                        best = key
            best_v[by, bx] = best[2]
            best_u[by, bx] = best[3]
    return best_u, best_v, ys, xs


def _blocks_to_pixels(bu: np.ndarray, bv: np.ndarray, h: int, w: int):
    """Expand per-block flow to per-pixel; pixel picks its covering block."""
    iy = np.minimum(np.arange(h) // BLOCK, bu.shape[0] - 1)
    ix = np.minimum(np.arange(w) // BLOCK, bu.shape[1] - 1)
    return bu[np.ix_(iy, ix)], bv[np.ix_(iy, ix)]


def _median3(x: np.ndarray) -> np.ndarray:
    """3x3 median with edge-replicated borders."""
    h, w = x.shape
    padded = np.pad(x, 1, mode="edge")
    stack = [
        padded[dy : dy + h, dx : dx + w] for dy in (0, 1, 2) for dx in (0, 1, 2)
    ]
    arr = np.stack(stack)
    arr.sort(axis=0)
    return arr[arr.shape[0] // 2]


def estimate_flow(prev: Image, curr: Image) -> FlowField:
    """Pyramidal block-matching flow between two same-size frames."""
    if (prev.height, prev.width) != (curr.height, curr.width):
        raise ShapeMismatchError("frame dimensions differ")
    if min(prev.height, prev.width) < 32:
        raise FlowError("frames must be at least 32px on each side")

    yp = [luma(prev)]
    yc = [luma(curr)]
    for _ in range(PYRAMID_LEVELS - 1):
        yp.append(_downsample2(yp[-1]))
        yc.append(_downsample2(yc[-1]))

    # Coarsest level: exhaustive search around zero.
    nby = len(_block_starts(yc[-1].shape[0]))
    nbx = len(_block_starts(yc[-1].shape[1]))
    zeros = np.zeros((nby, nbx), dtype=np.int64)
    bu, bv, _, _ = _match_blocks(yp[-1], yc[-1], zeros, zeros, COARSE_RADIUS)

    for level in range(PYRAMID_LEVELS - 2, -1, -1):
        h, w = yc[level].shape
        nby = len(_block_starts(h))
        nbx = len(_block_starts(w))
        # Upscale previous-level block flow: child block inherits 2x parent.
        par_y = np.minimum(np.arange(nby) // 2, bu.shape[0] - 1)
        par_x = np.minimum(np.arange(nbx) // 2, bu.shape[1] - 1)
        init_u = 2 * bu[np.ix_(par_y, par_x)]
        init_v = 2 * bv[np.ix_(par_y, par_x)]
        bu, bv, _, _ = _match_blocks(yp[level], yc[level], init_u, init_v, REFINE_RADIUS)

    u, v = _blocks_to_pixels(bu, bv, curr.height, curr.width)
    return FlowField(_median3(u).astype(np.int64), _median3(v).astype(np.int64))


def flow_magnitude(f: FlowField) -> np.ndarray:
    """Per-pixel sqrt(u^2 + v^2) as float64."""
    return np.sqrt(f.u.astype(np.float64) ** 2 + f.v.astype(np.float64) ** 2)


def select_top_fraction(mag: np.ndarray, coverage: float) -> np.ndarray:
    """Exactly ceil(coverage*N) highest-magnitude pixels, raster tie-break."""
    if mag.size == 0:
        raise FlowError("empty magnitude map")
    n = mag.size
    k = int(np.ceil(coverage * n))
    k = max(0, min(k, n))
    order = np.argsort(-mag.ravel(), kind="stable")
    bits = np.zeros(n, dtype=bool)
    bits[order[:k]] = True
    return bits.reshape(mag.shape)


def _cleanup(bits: np.ndarray, min_component: int) -> np.ndarray:
    """3x3 closing then removal of connected components below the floor."""
    st3 = np.ones((3, 3), dtype=bool)
    dil = ndimage.binary_dilation(bits, structure=st3, border_value=0)
    closed = ndimage.binary_erosion(dil, structure=st3, border_value=1)
    labels, n = ndimage.label(closed, structure=st3)
    if n == 0:
        return closed
    sizes = np.bincount(labels.ravel())
    small = np.flatnonzero(sizes < min_component)
    small = small[small != 0]
    if small.size:
        closed[np.isin(labels, small)] = False
    return closed


def troi_from_flow(
    mag: np.ndarray,
    coverage: float,
    cleanup: bool | None = None,
    min_component: int = MIN_COMPONENT,
) -> TroiMask:
    """Mask the requested fraction of highest-motion pixels.

    Cleanup (closing + small-component removal) is skipped automatically when
    the selection is smaller than the component-size floor, which keeps tiny
    test frames exact.
    """
    bits = select_top_fraction(mag, coverage)
    if cleanup is None:
        cleanup = int(bits.sum()) >= min_component
    if cleanup:
        bits = _cleanup(bits, min_component)
    achieved = float(bits.sum()) / bits.size
    return TroiMask(bits, achieved)


def feather_mask(m: TroiMask, sigma: float = 2.0) -> TroiMask:
    """Gaussian-feathered soft weights (truncated at 3*sigma); bits unchanged."""
    radius = int(3 * sigma)
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    kernel /= kernel.sum()
    soft = m.bits.astype(np.float64)
    # Replicate at frame borders so a mask flush with the edge is not eroded.
    soft = ndimage.convolve1d(soft, kernel, axis=0, mode="nearest")
    soft = ndimage.convolve1d(soft, kernel, axis=1, mode="nearest")
    soft = np.clip(soft, 0.0, 1.0)
    return TroiMask(m.bits, m.coverage, soft)


def write_flow(f: FlowField, path) -> None:
    """Binary dump: magic, version u16, w u32, h u32, then (u, v) as LE i16."""
    if np.abs(f.u).max(initial=0) > 32767 or np.abs(f.v).max(initial=0) > 32767:
        raise FlowError("displacement exceeds i16 range")
    inter = np.empty((f.height, f.width, 2), dtype="<i2")
    inter[:, :, 0] = f.u
    inter[:, :, 1] = f.v
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<HII", FLOW_VERSION, f.width, f.height))
        fh.write(inter.tobytes())


def read_flow(path) -> FlowField:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != FLOW_MAGIC:
            raise FlowError(f"bad magic {magic!r}")
        version, w, h = struct.unpack("<HII", fh.read(10))
        if version != FLOW_VERSION:
            raise FlowError(f"unsupported flow version {version}")
        raw = fh.read(h * w * 4)
    if len(raw) != h * w * 4:
        raise FlowError("truncated flow file")
    inter = np.frombuffer(raw, dtype="<i2").reshape(h, w, 2)
    return FlowField(inter[:, :, 0].astype(np.int64), inter[:, :, 1].astype(np.int64))
