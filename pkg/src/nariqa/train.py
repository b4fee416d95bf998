"""Training objective and loop for the embedding head.

The objective combines two cosine-distance triplet hinges with a
softmax-KL regularizer against the frozen initialization head:

  * hinge 1: anchor is the target or the non-aligned reference (fair coin
    per record and epoch), positive is the lightly distorted frame,
    negative the heavily distorted one, margin 0.3;
  * hinge 2: anchor is the reference, positive the clean target, negative
    one of the distorted frames (fair coin), margin 0.1;
  * KL between softmax-normalized learned and frozen target embeddings,
    with the temperature annealed linearly from 0.01 to 1.0 over training.

Totals combine with weights 1.0 / 1.0 / 0.05. Optimization is adaptive
moments with decoupled weight decay; gradients are analytic and verified
against central finite differences by `check_gradients`.

The published triplet formula orders the operands the other way; the
standard orientation (pull the positive closer) is the default here, with
`triplet_orientation="as_printed"` available for auditing.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Manifest, TripletRecord, TripletRenderer
from .embed import (
    DEFAULT_EMBED_DIM,
    FEATURE_DIM,
    EmbeddingHead,
    Embedding,
    PatchFeatures,
    image_embedding,
    head_forward,
    patch_features,
)
from .imagecore import Image, PatchGrid
from .parallel import ordered_map
from .rng import stream

CHECKPOINT_MAGIC = b"NVCK"
CHECKPOINT_VERSION = 1

HINGE_KINK_EXCLUSION = 1e-3


class TrainError(ValueError):
    pass


@dataclass
class TrainerConfig:
    margin1: float = 0.3
    margin2: float = 0.1
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda_kl: float = 0.05
    t_start: float = 0.01
    t_end: float = 1.0
    epochs: int = 80
    batch_size: int = 16
    learning_rate: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    embed_dim: int = DEFAULT_EMBED_DIM
    patch_size: int = 14
    triplet_orientation: str = "standard"  # or "as_printed"
    checkpoint_ring: int = 10

    def __post_init__(self):
        if self.margin1 < 0 or self.margin2 < 0:
            raise TrainError("margins must be nonnegative")
        if not (0 < self.t_start <= self.t_end):
            raise TrainError("need 0 < t_start <= t_end")
        if min(self.lambda1, self.lambda2, self.lambda_kl) < 0:
            raise TrainError("loss weights must be nonnegative")
        if self.triplet_orientation not in ("standard", "as_printed"):
            raise TrainError(f"bad orientation {self.triplet_orientation!r}")

    @classmethod
    def toy(cls, **overrides) -> "TrainerConfig":
        """Fast CPU preset; paper-default losses, higher learning rate."""
        base = dict(learning_rate=1e-3, epochs=30, batch_size=16)
        base.update(overrides)
        return cls(**base)


@dataclass
class LossBreakdown:
    triplet1: float
    triplet2: float
    kl: float
    total: float
    temperature: float


@dataclass
class TrainingExample:
    """Per-record standardized patch features for the four frames."""

    triplet_id: str
    scene_id: str
    feats: dict[str, np.ndarray]  # target | reference | pos | neg -> (P, F)
    level_pos: int
    level_neg: int

    @property
    def level_gap(self) -> int:
        return abs(self.level_neg - self.level_pos)


# ---------------------------------------------------------------------------
# elementary loss operations
# ---------------------------------------------------------------------------


def _vec(x) -> np.ndarray:
    return x.values if isinstance(x, Embedding) else np.asarray(x, dtype=np.float64)


def cosine_distance(a, b) -> float:
    """1 - cos(a, b) in [0, 2]; zero vectors are a contract violation."""
    va, vb = _vec(a), _vec(b)
    na = np.linalg.norm(va)
    nb = np.linalg.norm(vb)
    if na < 1e-12 or nb < 1e-12:
        raise TrainError("cosine_distance received a zero vector")
    return float(1.0 - np.dot(va, vb) / (na * nb))


def triplet_margin_loss(anchor, positive, negative, margin: float, orientation: str = "standard") -> float:
    """Hinge on the positive-minus-negative cosine-distance gap."""
    if margin < 0:
        raise TrainError("margin must be nonnegative")
    dp = cosine_distance(anchor, positive)
    dn = cosine_distance(anchor, negative)
    gap = (dp - dn) if orientation == "standard" else (dn - dp)
    return max(0.0, gap + margin)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max()
    return shifted - np.log(np.exp(shifted).sum())


def kl_regularizer(e, e_frozen, temperature: float) -> float:
    """KL(softmax(e/T) || softmax(e_frozen/T)) with natural log."""
    if temperature <= 0:
        raise TrainError("temperature must be positive")
    ve, vf = _vec(e), _vec(e_frozen)
    if ve.shape != vf.shape:
        raise TrainError("embedding dims differ")
    lp = _log_softmax(ve / temperature)
    lq = _log_softmax(vf / temperature)
    p = np.exp(lp)
    return max(0.0, float(np.sum(p * (lp - lq))))


def temperature_schedule(epoch: int, total_epochs: int, t_start: float, t_end: float) -> float:
    """Linear anneal hitting t_start at epoch 0 and t_end at the last epoch."""
    if not 0 <= epoch < total_epochs:
        raise TrainError(f"epoch {epoch} outside [0, {total_epochs})")
    if total_epochs == 1:
        return t_end
    return t_start + (t_end - t_start) * epoch / (total_epochs - 1)


# ---------------------------------------------------------------------------
# forward/backward through the head
# ---------------------------------------------------------------------------


@dataclass
class _ImageCache:
    x: np.ndarray  # (P, F)
    z: np.ndarray  # (P, D)
    norms: np.ndarray  # (P,)
    y: np.ndarray  # (P, D) unit rows
    u: np.ndarray  # (D,) mean of rows
    u_norm: float
    e: np.ndarray  # (D,) unit


def _forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> _ImageCache:
    z = x @ w + b
    norms = np.linalg.norm(z, axis=1)
    if not np.all(np.isfinite(norms)):
        raise TrainError("non-finite patch embedding")
    if np.any(norms < 1e-12):
        raise TrainError("degenerate patch embedding during training")
    y = z / norms[:, None]
    u = y.mean(axis=0)
    u_norm = float(np.linalg.norm(u))
    if u_norm < 1e-12:
        raise TrainError("degenerate pooled embedding during training")
    return _ImageCache(x, z, norms, y, u, u_norm, u / u_norm)


def _backward(cache: _ImageCache, de: np.ndarray, dw: np.ndarray, db: np.ndarray) -> None:
    """Accumulate dL/dW, dL/db given dL/d(image embedding)."""
    du = (de - cache.e * np.dot(cache.e, de)) / cache.u_norm
    dy = np.tile(du / cache.y.shape[0], (cache.y.shape[0], 1))
    dz = (dy - cache.y * np.sum(cache.y * dy, axis=1, keepdims=True)) / cache.norms[:, None]
    dw += cache.x.T @ dz
    db += dz.sum(axis=0)


def _kl_value_grad(e: np.ndarray, f: np.ndarray, t: float) -> tuple[float, np.ndarray]:
    lp = _log_softmax(e / t)
    lq = _log_softmax(f / t)
    p = np.exp(lp)
    g = lp - lq
    kl = float(np.sum(p * g))
    grad = p * (g - kl) / t
    return max(0.0, kl), grad


ROLES = ("target", "reference", "pos", "neg")


def batch_loss_and_grads(
    batch: list[TrainingExample],
    head: EmbeddingHead,
    cfg: TrainerConfig,
    epoch: int,
) -> tuple[LossBreakdown, np.ndarray, np.ndarray]:
    """Mean loss over the batch and analytic gradients w.r.t. (W, b)."""
    if not batch:
        raise TrainError("empty batch")
    t = temperature_schedule(epoch, cfg.epochs, cfg.t_start, cfg.t_end)
    n = len(batch)
    dw = np.zeros_like(head.weight)
    db = np.zeros_like(head.bias)
    sum_t1 = sum_t2 = sum_kl = 0.0
    sign = 1.0 if cfg.triplet_orientation == "standard" else -1.0

    for ex in batch:
        try:
            caches = {role: _forward(ex.feats[role], head.weight, head.bias) for role in ROLES}
            frozen_target = _forward(ex.feats["target"], head.frozen_weight, head.frozen_bias)
        except TrainError as exc:
            raise TrainError(f"{ex.triplet_id}: {exc}") from exc
        e = {role: caches[role].e for role in ROLES}

        coins = stream(cfg.seed, "coin", ex.triplet_id, epoch)
        anchor1 = "target" if coins.integers(0, 2) == 0 else "reference"
        neg2 = "pos" if coins.integers(0, 2) == 0 else "neg"

        de = {role: np.zeros_like(e[role]) for role in ROLES}

        # hinge 1: anchor vs (pos, neg) with margin m1
        gap1 = sign * (np.dot(e[anchor1], e["neg"]) - np.dot(e[anchor1], e["pos"]))
        t1 = max(0.0, gap1 + cfg.margin1)
        if t1 > 0.0:
            coeff = sign * cfg.lambda1 / n
            de[anchor1] += coeff * (e["neg"] - e["pos"])
            de["pos"] += -coeff * e[anchor1]
            de["neg"] += coeff * e[anchor1]

        # hinge 2: reference anchors the clean target against a distorted one
        gap2 = sign * (np.dot(e["reference"], e[neg2]) - np.dot(e["reference"], e["target"]))
        t2 = max(0.0, gap2 + cfg.margin2)
        if t2 > 0.0:
            coeff = sign * cfg.lambda2 / n
            de["reference"] += coeff * (e[neg2] - e["target"])
            de["target"] += -coeff * e["reference"]
            de[neg2] += coeff * e["reference"]

        kl, kl_grad = _kl_value_grad(e["target"], frozen_target.e, t)
        de["target"] += (cfg.lambda_kl / n) * kl_grad

        for role in ROLES:
            if np.any(de[role]):
                _backward(caches[role], de[role], dw, db)

        sum_t1 += t1
        sum_t2 += t2
        sum_kl += kl

    t1m, t2m, klm = sum_t1 / n, sum_t2 / n, sum_kl / n
    total = cfg.lambda1 * t1m + cfg.lambda2 * t2m + cfg.lambda_kl * klm
    return LossBreakdown(t1m, t2m, klm, total, t), dw, db


def total_loss(batch: list[TrainingExample], head: EmbeddingHead, cfg: TrainerConfig, epoch: int) -> LossBreakdown:
    breakdown, _, _ = batch_loss_and_grads(batch, head, cfg, epoch)
    return breakdown


def hinge_gaps(ex: TrainingExample, head: EmbeddingHead, cfg: TrainerConfig, epoch: int) -> tuple[float, float]:
    """Signed hinge inputs for one record (kink proximity diagnostics)."""
    caches = {role: _forward(ex.feats[role], head.weight, head.bias) for role in ROLES}
    e = {role: caches[role].e for role in ROLES}
    coins = stream(cfg.seed, "coin", ex.triplet_id, epoch)
    anchor1 = "target" if coins.integers(0, 2) == 0 else "reference"
    neg2 = "pos" if coins.integers(0, 2) == 0 else "neg"
    sign = 1.0 if cfg.triplet_orientation == "standard" else -1.0
    gap1 = sign * (np.dot(e[anchor1], e["neg"]) - np.dot(e[anchor1], e["pos"])) + cfg.margin1
    gap2 = sign * (np.dot(e["reference"], e[neg2]) - np.dot(e["reference"], e["target"])) + cfg.margin2
    return float(gap1), float(gap2)


# ---------------------------------------------------------------------------
# optimizer and loop
# ---------------------------------------------------------------------------


@dataclass
class TrainerState:
    head: EmbeddingHead
    m_w: np.ndarray
    v_w: np.ndarray
    m_b: np.ndarray
    v_b: np.ndarray
    step: int = 0
    epoch: int = 0

    @classmethod
    def initialize(cls, cfg: TrainerConfig, feature_dim: int = FEATURE_DIM) -> "TrainerState":
        head = EmbeddingHead.initialize(feature_dim, cfg.embed_dim, cfg.seed)
        return cls(
            head,
            np.zeros_like(head.weight),
            np.zeros_like(head.weight),
            np.zeros_like(head.bias),
            np.zeros_like(head.bias),
        )


def train_step(state: TrainerState, batch: list[TrainingExample], cfg: TrainerConfig) -> LossBreakdown:
    """One analytic-gradient AdamW-style update, in place."""
    breakdown, dw, db = batch_loss_and_grads(batch, state.head, cfg, state.epoch)
    if not np.isfinite(breakdown.total) or not (np.all(np.isfinite(dw)) and np.all(np.isfinite(db))):
        raise TrainError(
            f"non-finite loss or gradient in batch [{', '.join(ex.triplet_id for ex in batch)}]"
        )
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for param, grad, m, v in (
        (state.head.weight, dw, state.m_w, state.v_w),
        (state.head.bias, db, state.m_b, state.v_b),
    ):
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * grad
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * grad * grad
        mhat = m / bias1
        vhat = v / bias2
        param -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        param -= cfg.learning_rate * cfg.weight_decay * param
    return breakdown


@dataclass
class HeadSnapshot:
    epoch: int
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class TrainResult:
    state: TrainerState
    checkpoints: list[HeadSnapshot]
    loss_log: list[dict]


def train_loop(
    examples: list[TrainingExample],
    cfg: TrainerConfig,
    out_dir=None,
) -> TrainResult:
    """Seeded shuffled epochs; one checkpoint per epoch, newest ring on disk."""
    if cfg.epochs < 1:
        raise TrainError("epochs must be >= 1")
    if not examples:
        raise TrainError("empty training set")
    feature_dim = examples[0].feats["target"].shape[1]
    state = TrainerState.initialize(cfg, feature_dim)
    checkpoints: list[HeadSnapshot] = []
    loss_log: list[dict] = []
    written: list = []

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        order = stream(cfg.seed, "shuffle", epoch).permutation(len(examples))
        for start in range(0, len(examples), cfg.batch_size):
            batch = [examples[i] for i in order[start : start + cfg.batch_size]]
            breakdown = train_step(state, batch, cfg)
            loss_log.append(
                {
                    "step": state.step,
                    "epoch": epoch,
                    "triplet1": breakdown.triplet1,
                    "triplet2": breakdown.triplet2,
                    "kl": breakdown.kl,
                    "total": breakdown.total,
                    "temperature": breakdown.temperature,
                }
            )
        snap = HeadSnapshot(epoch, state.head.weight.copy(), state.head.bias.copy())
        checkpoints.append(snap)
        if out_dir is not None:
            import os

            path = os.path.join(str(out_dir), f"checkpoint_{epoch:04d}.nvck")
            save_checkpoint(state, path)
            written.append(path)
            while len(written) > max(cfg.checkpoint_ring, 10):
                os.remove(written.pop(0))
    return TrainResult(state, checkpoints, loss_log)


def write_loss_log(loss_log: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "triplet1", "triplet2", "kl", "total", "temperature"])
        for row in loss_log:
            writer.writerow(
                [row["step"], row["epoch"], repr(row["triplet1"]), repr(row["triplet2"]),
                 repr(row["kl"]), repr(row["total"]), repr(row["temperature"])]
            )


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(state: TrainerState, path) -> None:
    head = state.head
    f, d = head.feature_dim, head.embed_dim
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HIIQI", CHECKPOINT_VERSION, f, d, state.step, state.epoch))
        for arr in (head.weight, head.bias, state.m_w, state.m_b, state.v_w, state.v_b):
            fh.write(arr.astype("<f4").tobytes())


def load_checkpoint(path, seed: int = 0) -> TrainerState:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise TrainError(f"bad checkpoint magic {magic!r}")
        version, f, d, step, epoch = struct.unpack("<HIIQI", fh.read(22))
        if version != CHECKPOINT_VERSION:
            raise TrainError(f"unsupported checkpoint version {version}")

        def read_arr(shape):
            count = int(np.prod(shape))
            raw = fh.read(count * 4)
            if len(raw) != count * 4:
                raise TrainError("truncated checkpoint")
            return np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)

        w = read_arr((f, d))
        b = read_arr((d,))
        m_w = read_arr((f, d))
        m_b = read_arr((d,))
        v_w = read_arr((f, d))
        v_b = read_arr((d,))
    base = EmbeddingHead.initialize(f, d, seed)
    head = EmbeddingHead(w, b, base.frozen_weight, base.frozen_bias)
    state = TrainerState(head, m_w, v_w, m_b, v_b, step=step, epoch=epoch)
    return state


# ---------------------------------------------------------------------------
# dataset preparation
# ---------------------------------------------------------------------------


def prepare_training_set(
    manifest: Manifest,
    frames_by_scene: dict[str, list[Image]],
    patch_size: int = 14,
    feather_sigma: float = 2.0,
    jobs: int = 1,
) -> list[TrainingExample]:
    """Render every record once and cache standardized patch features."""
    renderer = TripletRenderer(frames_by_scene, feather_sigma)

    def build(rec: TripletRecord) -> TrainingExample:
        imgs = renderer.render(rec)
        grid = PatchGrid.for_image(imgs.target, patch_size)
        feats = {
            "target": patch_features(imgs.target, grid).values,
            "reference": patch_features(imgs.reference, grid).values,
            "pos": patch_features(imgs.pos, grid).values,
            "neg": patch_features(imgs.neg, grid).values,
        }
        return TrainingExample(
            rec.triplet_id,
            rec.scene_id,
            feats,
            rec.distortion_pos.level,
            rec.distortion_neg.level,
        )

    # flow cache is shared; prime it serially per scene, then parallelize
    for rec in manifest.records:
        renderer._magnitude(rec.scene_id, rec.target_index)
    return ordered_map(build, manifest.records, jobs)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def _synthetic_batch(seed_parts, n_records: int, n_patches: int, feature_dim: int) -> list[TrainingExample]:
    rng = stream(*seed_parts)
    batch = []
    for i in range(n_records):
        feats = {role: rng.normal(size=(n_patches, feature_dim)) for role in ROLES}
        batch.append(TrainingExample(f"synthetic:{seed_parts[-1]}:{i}", "synthetic", feats, 1, 3))
    return batch


def check_gradients(
    cfg: TrainerConfig | None = None,
    seed: int = 0,
    n_batches: int = 10,
    n_params: int = 200,
    h: float = 1e-4,
    corruption_factor: float | None = None,
) -> float:
    """Max relative error of analytic vs central finite-difference gradients.

    Batches whose records sit within 1e-3 of a hinge kink are resampled.
    Comparisons are made only where |analytic| + |numeric| > 1e-8. The
    corruption hook multiplies one sampled analytic entry for mutation
    self-tests.
    """
    cfg = cfg if cfg is not None else TrainerConfig(epochs=10)
    feature_dim = 12
    per_batch = max(1, -(-n_params // n_batches))
    worst = 0.0

    for bi in range(n_batches):
        state = TrainerState.initialize(replace(cfg, seed=seed + bi), feature_dim)
        state.head.weight += 0.3 * stream("gradcheck-perturb", seed, bi).normal(
            size=state.head.weight.shape
        )
        epoch = bi % cfg.epochs
        batch = None
        for attempt in range(50):
            cand = _synthetic_batch(("gradcheck", seed, bi, attempt), 4, 3, feature_dim)
            gaps = [g for ex in cand for g in hinge_gaps(ex, state.head, cfg, epoch)]
            if all(abs(g) > HINGE_KINK_EXCLUSION for g in gaps):
                batch = cand
                break
        if batch is None:
            continue

        _, dw, db = batch_loss_and_grads(batch, state.head, cfg, epoch)
        analytic = np.concatenate([dw.ravel(), db.ravel()])
        n_total = analytic.size
        picks = stream("gradcheck-picks", seed, bi).choice(n_total, size=min(per_batch, n_total), replace=False)
        if corruption_factor is not None and bi == 0:
            analytic = analytic.copy()
            target_idx = int(picks[np.argmax(np.abs(analytic[picks]))])
            analytic[target_idx] *= corruption_factor
        for idx in picks:
            state_p = state.head
            flat_w = state_p.weight.size

            def eval_at(delta):
                w = state_p.weight.copy()
                b = state_p.bias.copy()
                if idx < flat_w:
                    w.flat[idx] += delta
                else:
                    b[idx - flat_w] += delta
                probe = EmbeddingHead(w, b, state_p.frozen_weight, state_p.frozen_bias)
                return batch_loss_and_grads(batch, probe, cfg, epoch)[0].total

            numeric = (eval_at(h) - eval_at(-h)) / (2.0 * h)
            a = float(analytic[idx])
            if abs(a) + abs(numeric) <= 1e-8:
                continue
            rel = abs(a - numeric) / (abs(a) + abs(numeric))
            worst = max(worst, rel)
    return worst
