"""Benchmark evaluation: 2AFC accuracy, correlations, flip rate, summaries."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .score import Decision


class EvalError(ValueError):
    pass


@dataclass
class AccuracyReport:
    overall: float
    n: int
    tie_count: int
    per_scene: dict[str, float] = field(default_factory=dict)
    per_scene_n: dict[str, int] = field(default_factory=dict)


@dataclass
class EvalReport:
    accuracy: AccuracyReport | None = None
    plcc: float | None = None
    srcc: float | None = None
    flip_rate: float | None = None
    epoch_window: tuple[float, float] | None = None
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        obj = {
            "metadata": self.metadata,
            "plcc": self.plcc,
            "srcc": self.srcc,
            "flip_rate": self.flip_rate,
        }
        if self.accuracy is not None:
            obj["accuracy"] = {
                "overall": self.accuracy.overall,
                "n": self.accuracy.n,
                "tie_count": self.accuracy.tie_count,
                "per_scene": self.accuracy.per_scene,
                "per_scene_n": self.accuracy.per_scene_n,
            }
        if self.epoch_window is not None:
            obj["epoch_window"] = {
                "mean": self.epoch_window[0],
                "std": self.epoch_window[1],
            }
        return json.dumps(obj, indent=2, sort_keys=True)

    def to_text(self) -> str:
        rows = []
        if self.accuracy is not None:
            rows.append(("overall accuracy", f"{self.accuracy.overall:.4f}"))
            rows.append(("samples", str(self.accuracy.n)))
            rows.append(("ties", str(self.accuracy.tie_count)))
            for scene in sorted(self.accuracy.per_scene):
                rows.append(
                    (f"scene {scene}", f"{self.accuracy.per_scene[scene]:.4f}"
                     f"  (n={self.accuracy.per_scene_n[scene]})")
                )
        if self.plcc is not None:
            rows.append(("plcc", f"{self.plcc:+.4f}"))
        if self.srcc is not None:
            rows.append(("srcc", f"{self.srcc:+.4f}"))
        if self.flip_rate is not None:
            rows.append(("flip rate", f"{self.flip_rate:.4f}"))
        if self.epoch_window is not None:
            rows.append(("epoch-window mean", f"{self.epoch_window[0]:.4f}"))
            rows.append(("epoch-window std", f"{self.epoch_window[1]:.4f}"))
        for key in sorted(self.metadata):
            rows.append((key, str(self.metadata[key])))
        width = max(len(k) for k, _ in rows) if rows else 0
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def two_afc_accuracy(
    decisions: list[Decision],
    labels: list[int],
    scene_ids: list[str] | None = None,
) -> AccuracyReport:
    """Fraction of decisions matching labels; ties surface in tie_count."""
    if len(decisions) != len(labels):
        raise EvalError("decisions and labels differ in length")
    if not decisions:
        raise EvalError("no samples")
    if any(lb not in (0, 1) for lb in labels):
        raise EvalError("labels must be binary")
    matches = [int(d.choice == lb) for d, lb in zip(decisions, labels)]
    tie_count = sum(1 for d in decisions if d.tie)
    report = AccuracyReport(float(np.mean(matches)), len(matches), tie_count)
    if scene_ids is not None:
        if len(scene_ids) != len(decisions):
            raise EvalError("scene_ids length mismatch")
        for scene in sorted(set(scene_ids)):
            idx = [i for i, s in enumerate(scene_ids) if s == scene]
            report.per_scene[scene] = float(np.mean([matches[i] for i in idx]))
            report.per_scene_n[scene] = len(idx)
    return report


def plcc(x, y) -> float:
    """Pearson product-moment correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EvalError("inputs must be equal-length 1-d sequences")
    if len(x) < 3:
        raise EvalError("need at least 3 samples")
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float(np.dot(xc, xc))
    vy = float(np.dot(yc, yc))
    if vx == 0.0 or vy == 0.0:
        raise EvalError("degenerate variance")
    return float(np.dot(xc, yc) / np.sqrt(vx * vy))


def srcc(x, y) -> float:
    """Spearman rank correlation; ties receive average fractional ranks."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise EvalError("inputs must be equal-length 1-d sequences")
    if len(x) < 3:
        raise EvalError("need at least 3 samples")
    rx = sstats.rankdata(x, method="average")
    ry = sstats.rankdata(y, method="average")
    return plcc(rx, ry)


def flip_rate(aligned: list[Decision], non_aligned: list[Decision]) -> float:
    """Fraction of triplets whose 2AFC choice differs between conditions."""
    if len(aligned) != len(non_aligned):
        raise EvalError("decision sequences differ in length")
    if not aligned:
        raise EvalError("no samples")
    return float(np.mean([a.choice != b.choice for a, b in zip(aligned, non_aligned)]))


def epoch_window_summary(accuracies, window: int = 10) -> tuple[float, float]:
    """Mean and population std of the last `window` per-epoch accuracies."""
    acc = np.asarray(list(accuracies), dtype=np.float64)
    if len(acc) < window:
        raise EvalError(f"need at least {window} epochs, got {len(acc)}")
    tail = acc[-window:]
    return float(tail.mean()), float(tail.std())


def dmos_correlations(scores, dmos, orientation: str = "higher_better") -> tuple[float, float]:
    """(plcc, srcc) of quality scores against DMOS.

    Lower-is-better scorers are negated first so conventions match reports
    where higher-quality scores correlate negatively with DMOS.
    """
    if orientation not in ("lower_better", "higher_better"):
        raise EvalError(f"bad orientation {orientation!r}")
    s = np.asarray(scores, dtype=np.float64)
    if orientation == "lower_better":
        s = -s
    return plcc(s, dmos), srcc(s, dmos)


def read_dmos_csv(path) -> dict[str, float]:
    """CSV with header item_id,dmos."""
    import csv

    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["item_id"]] = float(row["dmos"])
    return out
