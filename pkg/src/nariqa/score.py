"""Inference-time scoring: cosine quality, 2AFC choice, mismatch heatmaps.

Quality is the cosine similarity between unit-normalized image embeddings,
tagged with the reference condition (aligned target or non-aligned nearby
frame). The dense mismatch heatmap matches every patch of each image to its
nearest neighbor in the other image by cosine similarity, inverts and
normalizes the best-match similarities per direction, multiplies
non-reciprocal matches by a penalty factor beta (clamped to the direction's
pre-penalty maximum), then pools both directions for a global min-max
normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embed import Embedding, PatchEmbeddings

ALIGNED = "aligned"
NON_ALIGNED = "non_aligned"

NORM_TOLERANCE = 1e-6


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class QualityScore:
    value: float
    reference_kind: str


@dataclass(frozen=True)
class Decision:
    choice: int  # 0 | 1
    tie: bool = False


@dataclass
class MismatchHeatmap:
    processed: np.ndarray  # processed-direction grid
    reference: np.ndarray  # reference-direction grid
    beta: float
    reciprocal_processed: np.ndarray  # bool per processed patch
    reciprocal_reference: np.ndarray  # bool per reference patch


def _unit_vec(e: Embedding | np.ndarray) -> np.ndarray:
    v = e.values if isinstance(e, Embedding) else np.asarray(e, dtype=np.float64)
    norm = np.linalg.norm(v)
    if abs(norm - 1.0) > NORM_TOLERANCE:
        raise ScoreError(f"embedding is not unit-normalized (|v| = {norm})")
    return v


def quality_score(ref: Embedding, test: Embedding, kind: str = ALIGNED) -> QualityScore:
    """Cosine similarity of the unit embeddings; higher means better."""
    if kind not in (ALIGNED, NON_ALIGNED):
        raise ScoreError(f"bad reference kind {kind!r}")
    value = float(np.dot(_unit_vec(ref), _unit_vec(test)))
    return QualityScore(value, kind)


def two_afc_decide(ref: Embedding, d0: Embedding, d1: Embedding, kind: str = ALIGNED) -> Decision:
    """Prefer the candidate with higher quality; exact ties choose 0."""
    s0 = quality_score(ref, d0, kind).value
    s1 = quality_score(ref, d1, kind).value
    if s0 == s1:
        return Decision(0, tie=True)
    return Decision(0 if s0 > s1 else 1)


def _direction_mismatch(best_sim: np.ndarray, reciprocal: np.ndarray, beta: float, eps: float) -> np.ndarray:
    span = best_sim.max() - best_sim.min()
    if span <= eps:
        normalized = np.ones_like(best_sim)
    else:
        normalized = (best_sim - best_sim.min()) / span
    mismatch = 1.0 - normalized
    cap = mismatch.max()
    penalized = mismatch.copy()
    penalized[~reciprocal] = np.minimum(beta * mismatch[~reciprocal], cap)
    return penalized


def patch_mismatch_heatmap(
    reference: PatchEmbeddings,
    processed: PatchEmbeddings,
    beta: float = 1.5,
    eps: float = 1e-8,
) -> MismatchHeatmap:
    """Dense nearest-neighbor mismatch heatmap over both patch grids."""
    if reference.vectors.shape[1] != processed.vectors.shape[1]:
        raise ScoreError("patch embedding channel dims differ")
    if reference.n_patches < 1 or processed.n_patches < 1:
        raise ScoreError("empty patch grid")
    if beta <= 1.0:
        raise ScoreError("beta must exceed 1")

    sim = reference.vectors @ processed.vectors.T  # (PA, PB)

    # Best matches per direction; np.argmax breaks ties at the lowest index.
    best_for_processed = sim.max(axis=0)
    arg_for_processed = sim.argmax(axis=0)
    best_for_reference = sim.max(axis=1)
    arg_for_reference = sim.argmax(axis=1)

    recip_processed = arg_for_reference[arg_for_processed] == np.arange(processed.n_patches)
    recip_reference = arg_for_processed[arg_for_reference] == np.arange(reference.n_patches)

    m_processed = _direction_mismatch(best_for_processed, recip_processed, beta, eps)
    m_reference = _direction_mismatch(best_for_reference, recip_reference, beta, eps)

    pooled = np.concatenate([m_reference, m_processed])
    gmin = pooled.min()
    gmax = pooled.max()
    if gmax - gmin <= eps:
        m_processed = np.zeros_like(m_processed)
        m_reference = np.zeros_like(m_reference)
    else:
        denom = gmax - gmin + eps
        m_processed = (m_processed - gmin) / denom
        m_reference = (m_reference - gmin) / denom

    return MismatchHeatmap(
        processed=m_processed.reshape(processed.grid_h, processed.grid_w),
        reference=m_reference.reshape(reference.grid_h, reference.grid_w),
        beta=beta,
        reciprocal_processed=recip_processed,
        reciprocal_reference=recip_reference,
    )


def save_heatmap_png(hm: MismatchHeatmap, path) -> None:
    from .imagecore import save_gray_png

    save_gray_png(hm.processed, path)


def save_heatmap_csv(hm: MismatchHeatmap, path) -> None:
    np.savetxt(path, hm.processed, delimiter=",", fmt="%.8f")
