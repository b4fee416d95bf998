"""Triplet corpus construction, supervision filtering, and manifests.

A triplet pairs a target frame with a nearby non-aligned reference and two
distorted versions of the target that share one motion mask and distortion
type but differ in severity. Construction order (pos = lighter level) can be
re-labeled by the dual-scorer supervision filter, which drops ambiguous and
contested triplets.

Manifests are JSON Lines with a header line; score tables are CSV.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .distort import DistortionSpec, apply_masked, catalog_list
from .flowtroi import estimate_flow, feather_mask, flow_magnitude, troi_from_flow
from .imagecore import Image, ShapeMismatchError, luma
from .rng import stream

MANIFEST_FORMAT = "nariqa-manifest"
MANIFEST_VERSION = 1

SCENE_CUT_THRESHOLD = 30.0 / 255.0
K_MIN, K_MAX = 1, 15
COVERAGE_RANGE = (0.30, 0.85)
RESAMPLE_BUDGET = 20

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
GMSD_C = 0.0026


class CorpusError(ValueError):
    pass


class ManifestError(CorpusError):
    pass


@dataclass(frozen=True)
class TripletRecord:
    triplet_id: str
    scene_id: str
    target_index: int
    reference_index: int
    k: int
    distortion_pos: DistortionSpec
    distortion_neg: DistortionSpec
    troi_coverage: float
    mask_seed: int
    order_source: str = "construction"
    label: int | None = None


@dataclass
class Manifest:
    seed: int
    settings: dict
    records: list[TripletRecord] = field(default_factory=list)

    def __eq__(self, other):
        if not isinstance(other, Manifest):
            return NotImplemented
        return (
            self.seed == other.seed
            and self.settings == other.settings
            and self.records == other.records
        )


@dataclass
class BuildStats:
    emitted: int = 0
    skipped: int = 0


# ---------------------------------------------------------------------------
# scene-change guard and triplet construction
# ---------------------------------------------------------------------------


def consecutive_luma_diffs(frames: list[Image]) -> np.ndarray:
    """Mean absolute luma difference for each consecutive frame pair."""
    lumas = [luma(f) for f in frames]
    return np.array(
        [float(np.mean(np.abs(lumas[t + 1] - lumas[t]))) for t in range(len(frames) - 1)]
    )


def scene_change_guard(
    frames: list[Image], i: int, j: int, theta: float = SCENE_CUT_THRESHOLD
) -> bool:
    """True (blocked) iff a scene cut occurs between frames i and j."""
    n = len(frames)
    if not (0 <= i < n and 0 <= j < n):
        raise CorpusError(f"frame index out of range: i={i}, j={j}, n={n}")
    lo, hi = min(i, j), max(i, j)
    for t in range(lo, hi):
        if float(np.mean(np.abs(luma(frames[t + 1]) - luma(frames[t])))) > theta:
            return True
    return False


def build_triplets(
    frames: list[Image],
    scene_id: str,
    seed: int,
    per_target: int = 3,
    coverage_range: tuple[float, float] = COVERAGE_RANGE,
    theta_sc: float = SCENE_CUT_THRESHOLD,
    stats: BuildStats | None = None,
) -> Manifest:
    """Deterministic triplet manifest for one frame sequence.

    Targets are frames 1..n-1 (frame 0 has no predecessor for the motion
    mask). The reference offset k ~ U{1..15} with uniform sign is clamped
    into range and resampled when the scene-change guard blocks; a record is
    skipped after the resampling budget runs out.
    """
    n = len(frames)
    if n < 16:
        raise CorpusError("need at least 16 frames")
    diffs = consecutive_luma_diffs(frames)
    catalog = catalog_list()
    stats = stats if stats is not None else BuildStats()

    def blocked(i, j):
        lo, hi = min(i, j), max(i, j)
        return bool(np.any(diffs[lo:hi] > theta_sc))

    records = []
    for i in range(1, n):
        rng = stream(seed, "build", scene_id, i)
        for r in range(per_target):
            j = None
            for _ in range(RESAMPLE_BUDGET):
                k = int(rng.integers(K_MIN, K_MAX + 1))
                sign = 1 if rng.integers(0, 2) else -1
                cand = i + sign * k
                if not (0 <= cand < n):
                    cand = i - sign * k  # clamp to the feasible direction
                if not (0 <= cand < n):
                    continue
                if blocked(i, cand):
                    continue
                j = cand
                break
            if j is None:
                stats.skipped += 1
                continue
            entry = catalog[int(rng.integers(0, len(catalog)))]
            coverage = float(rng.uniform(*coverage_range))
            lv = rng.choice(5, size=2, replace=False) + 1
            l_p, l_n = int(lv.min()), int(lv.max())
            dseed = int(rng.integers(0, 2**63))
            mask_seed = int(rng.integers(0, 2**63))
            records.append(
                TripletRecord(
                    triplet_id=f"{scene_id}:{i}:{r}",
                    scene_id=scene_id,
                    target_index=i,
                    reference_index=j,
                    k=abs(j - i),
                    distortion_pos=DistortionSpec(entry.type_id, l_p, seed=dseed),
                    distortion_neg=DistortionSpec(entry.type_id, l_n, seed=dseed),
                    troi_coverage=coverage,
                    mask_seed=mask_seed,
                )
            )
            stats.emitted += 1
    settings = {
        "scene_id": scene_id,
        "per_target": per_target,
        "coverage_range": list(coverage_range),
        "k_range": [K_MIN, K_MAX],
        "theta_sc": theta_sc,
        "skipped": stats.skipped,
    }
    return Manifest(seed=seed, settings=settings, records=records)


def merge_manifests(manifests: list[Manifest], seed: int) -> Manifest:
    records = [r for m in manifests for r in m.records]
    ids = [r.triplet_id for r in records]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate triplet ids across manifests")
    return Manifest(seed=seed, settings={"merged": len(manifests)}, records=records)


@dataclass
class TripletImages:
    target: Image
    reference: Image
    pos: Image
    neg: Image
    mask_soft: np.ndarray


class TripletRenderer:
    """Renders records to frames, caching flow masks per (scene, target)."""

    def __init__(self, frames_by_scene: dict[str, list[Image]], feather_sigma: float = 2.0):
        self.frames_by_scene = frames_by_scene
        self.feather_sigma = feather_sigma
        self._mag_cache: dict[tuple[str, int], np.ndarray] = {}

    def _magnitude(self, scene_id: str, i: int) -> np.ndarray:
        key = (scene_id, i)
        if key not in self._mag_cache:
            frames = self.frames_by_scene[scene_id]
            flow = estimate_flow(frames[i - 1], frames[i])
            self._mag_cache[key] = flow_magnitude(flow)
        return self._mag_cache[key]

    def render(self, rec: TripletRecord) -> TripletImages:
        if rec.scene_id not in self.frames_by_scene:
            raise CorpusError(f"{rec.triplet_id}: unknown scene {rec.scene_id!r}")
        frames = self.frames_by_scene[rec.scene_id]
        if rec.target_index < 1 or rec.target_index >= len(frames):
            raise CorpusError(f"{rec.triplet_id}: unresolvable target frame")
        if not (0 <= rec.reference_index < len(frames)):
            raise CorpusError(f"{rec.triplet_id}: unresolvable reference frame")
        mag = self._magnitude(rec.scene_id, rec.target_index)
        mask = troi_from_flow(mag, rec.troi_coverage)
        mask = feather_mask(mask, self.feather_sigma)
        f_i = frames[rec.target_index]
        f_r = frames[rec.reference_index]
        pos = apply_masked(f_i, rec.distortion_pos, mask)
        neg = apply_masked(f_i, rec.distortion_neg, mask)
        return TripletImages(f_i, f_r, pos, neg, mask.soft)


def render_triplet(
    frames: list[Image], rec: TripletRecord, feather_sigma: float = 2.0
) -> TripletImages:
    return TripletRenderer({rec.scene_id: frames}, feather_sigma).render(rec)


# ---------------------------------------------------------------------------
# in-repo full-reference scorers
# ---------------------------------------------------------------------------


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    xs = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(xs**2) / (2.0 * sigma * sigma))
    return k / k.sum()


def _filter_valid(plane: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    half = len(kernel1d) // 2
    out = ndimage.correlate1d(plane, kernel1d, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel1d, axis=1, mode="nearest")
    return out[half:-half, half:-half]


def ssim(ref: Image, test: Image) -> float:
    """Single-scale SSIM on luma: 11x11 Gaussian window, K1/K2 = 0.01/0.03."""
    if (ref.height, ref.width) != (test.height, test.width):
        raise ShapeMismatchError("ssim: dimensions differ")
    if min(ref.height, ref.width) < SSIM_WINDOW:
        raise CorpusError("ssim: image smaller than the filter window")
    x = luma(ref)
    y = luma(test)
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
    mu_x = _filter_valid(x, w)
    mu_y = _filter_valid(y, w)
    xx = _filter_valid(x * x, w) - mu_x * mu_x
    yy = _filter_valid(y * y, w) - mu_y * mu_y
    xy = _filter_valid(x * y, w) - mu_x * mu_y
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def gmsd(ref: Image, test: Image) -> float:
    """Gradient-magnitude-similarity deviation on luma; lower is better."""
    if (ref.height, ref.width) != (test.height, test.width):
        raise ShapeMismatchError("gmsd: dimensions differ")
    px = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
    x = luma(ref)
    y = luma(test)

    def grad_mag(p):
        gx = ndimage.correlate(p, px, mode="nearest")
        gy = ndimage.correlate(p, px.T, mode="nearest")
        return np.sqrt(gx * gx + gy * gy)

    g1 = grad_mag(x)
    g2 = grad_mag(y)
    sim = (2.0 * g1 * g2 + GMSD_C) / (g1 * g1 + g2 * g2 + GMSD_C)
    return float(sim.std())


SCORERS = {
    "ssim": (ssim, "higher_better"),
    "gmsd": (gmsd, "lower_better"),
}


# ---------------------------------------------------------------------------
# score table and supervision filter
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreRow:
    triplet_id: str
    role: str  # pos | neg
    scorer: str
    score: float
    orientation: str  # lower_better | higher_better


class ScoreTable:
    def __init__(self, rows: list[ScoreRow] | None = None):
        self.rows: list[ScoreRow] = []
        self._index: dict[tuple[str, str, str], ScoreRow] = {}
        for row in rows or []:
            self.add(row)

    def add(self, row: ScoreRow) -> None:
        key = (row.triplet_id, row.role, row.scorer)
        if key in self._index:
            raise CorpusError(f"duplicate score row {key}")
        if row.role not in ("pos", "neg"):
            raise CorpusError(f"bad role {row.role!r}")
        if row.orientation not in ("lower_better", "higher_better"):
            raise CorpusError(f"bad orientation {row.orientation!r}")
        self._index[key] = row
        self.rows.append(row)

    def lower_better_score(self, triplet_id: str, role: str, scorer: str) -> float:
        row = self._index.get((triplet_id, role, scorer))
        if row is None:
            raise CorpusError(f"missing score for ({triplet_id}, {role}, {scorer})")
        return row.score if row.orientation == "lower_better" else -row.score

    def save(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["triplet_id", "role", "scorer", "score", "orientation"])
            for r in self.rows:
                writer.writerow([r.triplet_id, r.role, r.scorer, repr(r.score), r.orientation])

    @classmethod
    def load(cls, path) -> "ScoreTable":
        table = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                table.add(
                    ScoreRow(
                        row["triplet_id"],
                        row["role"],
                        row["scorer"],
                        float(row["score"]),
                        row["orientation"],
                    )
                )
        return table


def score_manifest(
    manifest: Manifest,
    renderer: TripletRenderer,
    scorer_ids: tuple[str, str] = ("ssim", "gmsd"),
    jobs: int = 1,
) -> ScoreTable:
    """Score rendered pos/neg frames against the aligned target."""

    def rows_for(rec: TripletRecord) -> list[ScoreRow]:
        imgs = renderer.render(rec)
        out = []
        for scorer_id in scorer_ids:
            fn, orientation = SCORERS[scorer_id]
            out.append(ScoreRow(rec.triplet_id, "pos", scorer_id, fn(imgs.target, imgs.pos), orientation))
            out.append(ScoreRow(rec.triplet_id, "neg", scorer_id, fn(imgs.target, imgs.neg), orientation))
        return out

    from .parallel import ordered_map

    table = ScoreTable()
    for rows in ordered_map(rows_for, manifest.records, jobs):
        for row in rows:
            table.add(row)
    return table


@dataclass
class FilterReport:
    kept: int = 0
    dropped_ambiguous: int = 0
    dropped_disagreement: int = 0


def supervision_filter(
    man: Manifest,
    scores: ScoreTable,
    scorers: tuple[str, str] = ("ssim", "gmsd"),
    tau: tuple[float, float] = (0.005, 0.005),
    report: FilterReport | None = None,
) -> Manifest:
    """Keep triplets both scorers rank confidently and identically.

    Scores are normalized to lower-is-better. Triplets whose pos/neg gap is
    below tau for either scorer are dropped as ambiguous; triplets the two
    scorers order oppositely are dropped as disagreements. Survivors are
    relabeled to the consensus order.
    """
    report = report if report is not None else FilterReport()
    kept = []
    for rec in man.records:
        gaps = []
        pos_better = []
        for scorer_id in scorers:
            sp = scores.lower_better_score(rec.triplet_id, "pos", scorer_id)
            sn = scores.lower_better_score(rec.triplet_id, "neg", scorer_id)
            gaps.append(abs(sp - sn))
            pos_better.append(sp < sn)
        if gaps[0] < tau[0] or gaps[1] < tau[1]:
            report.dropped_ambiguous += 1
            continue
        if pos_better[0] != pos_better[1]:
            report.dropped_disagreement += 1
            continue
        if pos_better[0]:
            new = replace(rec, order_source="supervision")
        else:
            new = replace(
                rec,
                distortion_pos=rec.distortion_neg,
                distortion_neg=rec.distortion_pos,
                order_source="supervision",
            )
        kept.append(new)
        report.kept += 1
    settings = dict(man.settings)
    settings["supervision"] = {
        "scorers": list(scorers),
        "tau": list(tau),
        "kept": report.kept,
        "dropped_ambiguous": report.dropped_ambiguous,
        "dropped_disagreement": report.dropped_disagreement,
    }
    return Manifest(seed=man.seed, settings=settings, records=kept)


# ---------------------------------------------------------------------------
# manifest files
# ---------------------------------------------------------------------------


def _spec_to_json(spec: DistortionSpec) -> dict:
    return {
        "type_id": spec.type_id,
        "level": spec.level,
        "seed": spec.seed,
        "params": list(spec.params) if spec.params is not None else None,
    }


def _spec_from_json(obj: dict) -> DistortionSpec:
    params = obj.get("params")
    return DistortionSpec(
        obj["type_id"],
        int(obj["level"]),
        int(obj.get("seed", 0)),
        tuple(params) if params is not None else None,
    )


def _record_to_json(rec: TripletRecord) -> dict:
    return {
        "triplet_id": rec.triplet_id,
        "scene_id": rec.scene_id,
        "target_index": rec.target_index,
        "reference_index": rec.reference_index,
        "k": rec.k,
        "distortion_pos": _spec_to_json(rec.distortion_pos),
        "distortion_neg": _spec_to_json(rec.distortion_neg),
        "troi_coverage": rec.troi_coverage,
        "mask_seed": rec.mask_seed,
        "order_source": rec.order_source,
        "label": rec.label,
    }


def _record_from_json(obj: dict) -> TripletRecord:
    return TripletRecord(
        triplet_id=obj["triplet_id"],
        scene_id=obj["scene_id"],
        target_index=int(obj["target_index"]),
        reference_index=int(obj["reference_index"]),
        k=int(obj["k"]),
        distortion_pos=_spec_from_json(obj["distortion_pos"]),
        distortion_neg=_spec_from_json(obj["distortion_neg"]),
        troi_coverage=float(obj["troi_coverage"]),
        mask_seed=int(obj["mask_seed"]),
        order_source=obj.get("order_source", "construction"),
        label=obj.get("label"),
    )


def write_manifest(man: Manifest, path) -> None:
    with open(path, "w") as fh:
        header = {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "seed": man.seed,
            "settings": man.settings,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in man.records:
            fh.write(json.dumps(_record_to_json(rec), sort_keys=True) + "\n")


def read_manifest(path) -> Manifest:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ManifestError("line 1: empty manifest file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"line 1: {exc}") from exc
    if header.get("format") != MANIFEST_FORMAT:
        raise ManifestError("line 1: not a manifest file")
    if header.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"line 1: unsupported version {header.get('version')}")
    records = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            raise ManifestError(f"line {lineno}: blank line")
        try:
            rec = _record_from_json(json.loads(line))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"line {lineno}: {exc}") from exc
        if rec.triplet_id in seen:
            raise ManifestError(f"line {lineno}: duplicate triplet id {rec.triplet_id}")
        seen.add(rec.triplet_id)
        records.append(rec)
    return Manifest(seed=header["seed"], settings=header["settings"], records=records)
