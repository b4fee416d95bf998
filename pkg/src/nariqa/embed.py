"""Patch features, the trainable embedding head, and embedding files.

Features are handcrafted per 14x14 patch (26 channels: luma stats, chroma
means, gradient energies, a 4-bin orientation histogram, and the first 16
zigzag DCT magnitudes), standardized by fixed constants shipped with the
package so training and inference share one scaling. A small linear head
with L2 normalization maps features to unit embedding vectors; a frozen
snapshot of its initialization anchors the divergence regularizer during
training.

Externally produced embeddings plug in through the NVEB binary format.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy import fft as sfft

from .imagecore import Image, PatchGrid, to_luma_chroma
from .rng import stream

FEATURE_DIM = 26
DEFAULT_EMBED_DIM = 64
FEATURE_NORM_FILE = "feature_norm.csv"

EMBED_MAGIC = b"NVEB"
EMBED_VERSION = 1
FLAG_NORMALIZED = 1 << 0
FLAG_GRID = 1 << 1

DEGENERATE_NORM = 1e-12

FEATURE_NAMES = (
    ["luma_mean", "luma_std", "cb_mean", "cr_mean", "grad_energy_h", "grad_energy_v"]
    + [f"orient_hist_{i}" for i in range(4)]
    + [f"dct_zz_{i}" for i in range(16)]
)


class EmbedError(ValueError):
    pass


@dataclass
class PatchFeatures:
    grid_h: int
    grid_w: int
    values: np.ndarray  # (P, 26) standardized unless raw requested
    standardized: bool = True

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w


@dataclass
class Embedding:
    values: np.ndarray
    normalized: bool = True


@dataclass
class PatchEmbeddings:
    grid_h: int
    grid_w: int
    vectors: np.ndarray  # (P, D), rows unit-norm

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w


def zigzag_indices(n: int, count: int) -> list[tuple[int, int]]:
    """First `count` (row, col) positions of the JPEG zigzag scan."""
    out = []
    for s in range(2 * n - 1):
        if s % 2:  # odd diagonal: top-right to bottom-left
            rng = range(max(0, s - n + 1), min(s, n - 1) + 1)
        else:  # even diagonal: bottom-left to top-right
            rng = range(min(s, n - 1), max(0, s - n + 1) - 1, -1)
        for i in rng:
            out.append((i, s - i))
            if len(out) == count:
                return out
    return out


@lru_cache(maxsize=1)
def feature_norm() -> tuple[np.ndarray, np.ndarray]:
    """(mean, std) per feature channel, frozen in the package data file."""
    text = resources.files("nariqa.data").joinpath(FEATURE_NORM_FILE).read_text()
    rows = list(csv.DictReader(text.splitlines()))
    if len(rows) != FEATURE_DIM:
        raise EmbedError(f"feature norm file must have {FEATURE_DIM} rows")
    mu = np.array([float(r["mean"]) for r in rows])
    sd = np.array([float(r["std"]) for r in rows])
    if np.any(sd <= 0):
        raise EmbedError("feature std must be positive")
    return mu, sd


def patch_features(img: Image, grid: PatchGrid, standardize: bool = True) -> PatchFeatures:
    """Deterministic 26-dim features for every patch of the grid."""
    if grid.grid_h != img.height // grid.patch_size or grid.grid_w != img.width // grid.patch_size:
        raise EmbedError("grid does not match image")
    p = grid.patch_size
    yc = to_luma_chroma(img).data
    zz = zigzag_indices(p, 16)
    zi = np.array([i for i, _ in zz])
    zj = np.array([j for _, j in zz])

    feats = np.empty((grid.n_patches, FEATURE_DIM), dtype=np.float64)
    idx = 0
    for gy in range(grid.grid_h):
        for gx in range(grid.grid_w):
            tile = yc[gy * p : (gy + 1) * p, gx * p : (gx + 1) * p]
            y = tile[:, :, 0]
            row = feats[idx]
            row[0] = y.mean()
            row[1] = y.std()
            row[2] = tile[:, :, 1].mean()
            row[3] = tile[:, :, 2].mean()
            dx = np.diff(y, axis=1)
            dy = np.diff(y, axis=0)
            row[4] = np.mean(dx * dx)
            row[5] = np.mean(dy * dy)
            # central differences on the interior for orientation
            gx_c = 0.5 * (y[1:-1, 2:] - y[1:-1, :-2])
            gy_c = 0.5 * (y[2:, 1:-1] - y[:-2, 1:-1])
            mag = np.hypot(gx_c, gy_c)
            ang = np.mod(np.arctan2(gy_c, gx_c), np.pi)
            active = mag > DEGENERATE_NORM
            bins = np.minimum((ang[active] / (np.pi / 4)).astype(np.intp), 3)
            counts = np.bincount(bins, minlength=4)
            row[6:10] = counts
            coef = np.abs(sfft.dctn(y, norm="ortho")[zi, zj])
            coef[coef < DEGENERATE_NORM] = 0.0  # flush FFT residue
            row[10:26] = coef
            idx += 1

    if standardize:
        mu, sd = feature_norm()
        feats = (feats - mu) / sd
    return PatchFeatures(grid.grid_h, grid.grid_w, feats, standardized=standardize)


# ---------------------------------------------------------------------------
# embedding head
# ---------------------------------------------------------------------------


@dataclass
class EmbeddingHead:
    weight: np.ndarray  # (F, D)
    bias: np.ndarray  # (D,)
    frozen_weight: np.ndarray
    frozen_bias: np.ndarray

    @classmethod
    def initialize(
        cls, feature_dim: int = FEATURE_DIM, embed_dim: int = DEFAULT_EMBED_DIM, seed: int = 0
    ) -> "EmbeddingHead":
        rng = stream("head-init", seed)
        w = rng.normal(0.0, feature_dim**-0.5, size=(feature_dim, embed_dim))
        b = np.zeros(embed_dim)
        fw = w.copy()
        fb = b.copy()
        fw.flags.writeable = False
        fb.flags.writeable = False
        return cls(w, b, fw, fb)

    @property
    def feature_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.weight.shape[1]


def normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; rows below the degenerate floor map to e1."""
    norms = np.linalg.norm(z, axis=1)
    out = np.empty_like(z)
    ok = norms >= DEGENERATE_NORM
    out[ok] = z[ok] / norms[ok][:, None]
    if np.any(~ok):
        out[~ok] = 0.0
        out[~ok, 0] = 1.0
    return out, norms


def head_forward(
    feat: PatchFeatures, head: EmbeddingHead, frozen: bool = False
) -> PatchEmbeddings:
    """Per patch: y = W^T x + b, then L2 normalization."""
    if feat.values.shape[1] != head.feature_dim:
        raise EmbedError(
            f"feature dim {feat.values.shape[1]} != head dim {head.feature_dim}"
        )
    w = head.frozen_weight if frozen else head.weight
    b = head.frozen_bias if frozen else head.bias
    z = feat.values @ w + b
    vectors, _ = normalize_rows(z)
    return PatchEmbeddings(feat.grid_h, feat.grid_w, vectors)


def image_embedding(pe: PatchEmbeddings) -> Embedding:
    """Renormalized mean of the patch vectors; degenerate mean maps to e1."""
    if pe.n_patches < 1:
        raise EmbedError("empty patch grid")
    mean = pe.vectors.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < DEGENERATE_NORM:
        out = np.zeros_like(mean)
        out[0] = 1.0
        return Embedding(out)
    return Embedding(mean / norm)


# ---------------------------------------------------------------------------
# NVEB interchange format
# ---------------------------------------------------------------------------


def write_embeddings(obj: PatchEmbeddings | Embedding, path) -> None:
    if isinstance(obj, PatchEmbeddings):
        vectors = obj.vectors
        flags = FLAG_NORMALIZED | FLAG_GRID
        grid = (obj.grid_h, obj.grid_w)
        count = obj.n_patches
    else:
        vectors = obj.values.reshape(1, -1)
        flags = FLAG_NORMALIZED if obj.normalized else 0
        grid = None
        count = 1
    dim = vectors.shape[1]
    with open(path, "wb") as fh:
        fh.write(EMBED_MAGIC)
        fh.write(struct.pack("<HHII", EMBED_VERSION, flags, count, dim))
        if grid is not None:
            fh.write(struct.pack("<HH", *grid))
        fh.write(vectors.astype("<f4").tobytes())


def read_embeddings(path) -> PatchEmbeddings | Embedding:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != EMBED_MAGIC:
            raise EmbedError(f"bad magic {magic!r}")
        version, flags, count, dim = struct.unpack("<HHII", fh.read(12))
        if version != EMBED_VERSION:
            raise EmbedError(f"unsupported embedding version {version}")
        grid = None
        if flags & FLAG_GRID:
            grid = struct.unpack("<HH", fh.read(4))
            if grid[0] * grid[1] != count:
                raise EmbedError(
                    f"grid {grid[0]}x{grid[1]} inconsistent with count {count}"
                )
        raw = fh.read(count * dim * 4)
    if len(raw) != count * dim * 4:
        raise EmbedError("truncated embedding file")
    vectors = np.frombuffer(raw, dtype="<f4").reshape(count, dim).astype(np.float64)
    if grid is not None:
        return PatchEmbeddings(grid[0], grid[1], vectors)
    return Embedding(vectors[0], normalized=bool(flags & FLAG_NORMALIZED))
