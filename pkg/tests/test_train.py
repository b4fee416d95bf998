import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nariqa.embed import EmbeddingHead
from nariqa.rng import stream
from nariqa.train import (
    LossBreakdown,
    TrainerConfig,
    TrainerState,
    TrainError,
    TrainingExample,
    batch_loss_and_grads,
    check_gradients,
    cosine_distance,
    kl_regularizer,
    load_checkpoint,
    save_checkpoint,
    temperature_schedule,
    total_loss,
    train_loop,
    train_step,
    triplet_margin_loss,
)


def synth_example(tid, rng, n_patches=3, feature_dim=12, identical=False):
    if identical:
        x = rng.normal(size=(n_patches, feature_dim))
        feats = {role: x.copy() for role in ("target", "reference", "pos", "neg")}
    else:
        feats = {
            role: rng.normal(size=(n_patches, feature_dim))
            for role in ("target", "reference", "pos", "neg")
        }
    return TrainingExample(tid, "syn", feats, 1, 3)


def synth_batch(seed, n=4, identical=False):
    rng = np.random.default_rng(seed)
    return [synth_example(f"b{seed}:{i}", rng, identical=identical) for i in range(n)]


# ---------------------------------------------------------------------------
# elementary ops
# ---------------------------------------------------------------------------


def test_cosine_distance_cases():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    assert cosine_distance(a, a) == 0.0
    assert cosine_distance(a, b) == 1.0
    assert cosine_distance(a, -a) == 2.0
    with pytest.raises(TrainError):
        cosine_distance(a, np.zeros(2))


def test_triplet_loss_cases():
    a = np.array([1.0, 0.0])
    p = np.array([0.0, 1.0])
    assert triplet_margin_loss(a, a, a, 0.3) == pytest.approx(0.3)
    assert triplet_margin_loss(a, a, p, 0.3) == 0.0
    assert triplet_margin_loss(a, p, a, 0.3) == pytest.approx(1.3)


def test_triplet_loss_as_printed_orientation():
    a = np.array([1.0, 0.0])
    p = np.array([0.0, 1.0])
    # printed operand order rewards pushing the positive away
    assert triplet_margin_loss(a, p, a, 0.3, orientation="as_printed") == 0.0
    assert triplet_margin_loss(a, a, p, 0.3, orientation="as_printed") == pytest.approx(1.3)


def test_kl_identity_and_shift_invariance():
    e = np.array([0.3, -1.2, 0.8])
    assert kl_regularizer(e, e, 0.5) == 0.0
    assert kl_regularizer(e, e + 3.7, 0.5) == pytest.approx(0.0, abs=1e-12)
    assert kl_regularizer(e + 3.7, e, 2.0) == pytest.approx(0.0, abs=1e-12)


def test_kl_closed_form_case():
    val = kl_regularizer(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 1.0)
    assert val == pytest.approx(0.46212, abs=1e-4)
    # closed form: p1 - p2 with p = softmax([1, 0])
    p1 = np.e / (np.e + 1.0)
    assert val == pytest.approx(p1 - (1.0 - p1), abs=1e-12)


def test_kl_nonpositive_temperature():
    e = np.array([1.0, 0.0])
    with pytest.raises(TrainError):
        kl_regularizer(e, e, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kl_nonnegative_and_zero_iff_shift(seed):
    rng = np.random.default_rng(seed)
    e = rng.normal(size=6)
    f = rng.normal(size=6)
    val = kl_regularizer(e, f, 1.0)
    assert val >= 0.0
    centered = (e - f) - np.mean(e - f)
    if np.max(np.abs(centered)) > 1e-3:
        assert val > 1e-9
    shift = kl_regularizer(e, e + rng.normal(), 1.0)
    assert shift < 1e-9


def test_temperature_schedule_endpoints():
    assert temperature_schedule(0, 80, 0.01, 1.0) == pytest.approx(0.01)
    assert temperature_schedule(79, 80, 0.01, 1.0) == pytest.approx(1.0)
    assert temperature_schedule(40, 81, 0.01, 1.0) == pytest.approx(0.505)
    assert temperature_schedule(0, 1, 0.01, 1.0) == 1.0
    with pytest.raises(TrainError):
        temperature_schedule(80, 80, 0.01, 1.0)


def test_config_validation():
    with pytest.raises(TrainError):
        TrainerConfig(margin1=-0.1)
    with pytest.raises(TrainError):
        TrainerConfig(t_start=0.0)
    with pytest.raises(TrainError):
        TrainerConfig(t_start=2.0, t_end=1.0)
    with pytest.raises(TrainError):
        TrainerConfig(triplet_orientation="sideways")


# ---------------------------------------------------------------------------
# total loss
# ---------------------------------------------------------------------------


def test_total_loss_identical_embeddings():
    cfg = TrainerConfig(epochs=10, seed=0)
    state = TrainerState.initialize(cfg, feature_dim=12)
    batch = synth_batch(3, n=4, identical=True)
    breakdown = total_loss(batch, state.head, cfg, epoch=0)
    assert breakdown.triplet1 == pytest.approx(cfg.margin1, abs=1e-12)
    assert breakdown.triplet2 == pytest.approx(cfg.margin2, abs=1e-12)
    assert breakdown.kl == pytest.approx(0.0, abs=1e-12)
    assert breakdown.total == pytest.approx(0.4, abs=1e-12)


def test_total_loss_recomposition_oracle():
    cfg = TrainerConfig(epochs=10, seed=5)
    state = TrainerState.initialize(cfg, feature_dim=12)
    state.head.weight += 0.2 * np.random.default_rng(0).normal(size=state.head.weight.shape)
    batch = synth_batch(9, n=5)
    epoch = 3
    breakdown = total_loss(batch, state.head, cfg, epoch)

    # independent recomposition from the elementary ops
    from nariqa.train import _forward, temperature_schedule as tsched

    t = tsched(epoch, cfg.epochs, cfg.t_start, cfg.t_end)
    t1s, t2s, kls = [], [], []
    for ex in batch:
        e = {
            role: _forward(ex.feats[role], state.head.weight, state.head.bias).e
            for role in ("target", "reference", "pos", "neg")
        }
        ef = _forward(ex.feats["target"], state.head.frozen_weight, state.head.frozen_bias).e
        coins = stream(cfg.seed, "coin", ex.triplet_id, epoch)
        anchor1 = "target" if coins.integers(0, 2) == 0 else "reference"
        neg2 = "pos" if coins.integers(0, 2) == 0 else "neg"
        t1s.append(triplet_margin_loss(e[anchor1], e["pos"], e["neg"], cfg.margin1))
        t2s.append(triplet_margin_loss(e["reference"], e["target"], e[neg2], cfg.margin2))
        kls.append(kl_regularizer(e["target"], ef, t))
    assert breakdown.triplet1 == pytest.approx(np.mean(t1s), abs=1e-12)
    assert breakdown.triplet2 == pytest.approx(np.mean(t2s), abs=1e-12)
    assert breakdown.kl == pytest.approx(np.mean(kls), abs=1e-12)
    expected_total = (
        cfg.lambda1 * breakdown.triplet1
        + cfg.lambda2 * breakdown.triplet2
        + cfg.lambda_kl * breakdown.kl
    )
    assert breakdown.total == pytest.approx(expected_total, abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_loss_decomposition_and_nonnegativity(seed):
    cfg = TrainerConfig(epochs=10, seed=1)
    state = TrainerState.initialize(cfg, feature_dim=12)
    breakdown = total_loss(synth_batch(seed, n=3), state.head, cfg, epoch=seed % 10)
    assert breakdown.triplet1 >= 0 and breakdown.triplet2 >= 0 and breakdown.kl >= 0
    recomposed = (
        cfg.lambda1 * breakdown.triplet1
        + cfg.lambda2 * breakdown.triplet2
        + cfg.lambda_kl * breakdown.kl
    )
    assert abs(breakdown.total - recomposed) <= 1e-12


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_zero_gradient_updates_by_decay_only():
    cfg = TrainerConfig(epochs=10, lambda1=0.0, lambda2=0.0, lambda_kl=0.0, learning_rate=1e-3)
    state = TrainerState.initialize(cfg, feature_dim=12)
    w0 = state.head.weight.copy()
    train_step(state, synth_batch(2), cfg)
    expect = w0 * (1.0 - cfg.learning_rate * cfg.weight_decay)
    assert np.allclose(state.head.weight, expect, atol=0, rtol=1e-15)


def test_repeated_step_descends():
    cfg = TrainerConfig(epochs=10, learning_rate=1e-3, seed=4)
    state = TrainerState.initialize(cfg, feature_dim=12)
    batch = synth_batch(11, n=6)
    losses = [train_step(state, batch, cfg).total for _ in range(50)]
    assert losses[-1] < losses[0]
    assert np.isfinite(losses).all()


def test_training_determinism():
    cfg = TrainerConfig(epochs=3, learning_rate=1e-3, batch_size=4, seed=9)
    examples = synth_batch(21, n=10)
    r1 = train_loop(examples, cfg)
    r2 = train_loop(examples, cfg)
    assert np.array_equal(r1.state.head.weight, r2.state.head.weight)
    assert r1.loss_log == r2.loss_log


def test_nonfinite_gradient_names_record():
    cfg = TrainerConfig(epochs=10)
    state = TrainerState.initialize(cfg, feature_dim=12)
    batch = synth_batch(2)
    batch[1].feats["pos"][0, 0] = np.nan
    with pytest.raises(TrainError) as exc:
        train_step(state, batch, cfg)
    assert "b2:1" in str(exc.value)


def test_frozen_head_untouched_by_training():
    cfg = TrainerConfig(epochs=2, learning_rate=1e-2, batch_size=4, seed=3)
    examples = synth_batch(5, n=8)
    result = train_loop(examples, cfg)
    fresh = TrainerState.initialize(cfg, feature_dim=12)
    assert np.array_equal(result.state.head.frozen_weight, fresh.head.frozen_weight)
    assert np.array_equal(result.state.head.frozen_bias, fresh.head.frozen_bias)


# ---------------------------------------------------------------------------
# loop and checkpoints
# ---------------------------------------------------------------------------


def test_zero_epochs_error():
    cfg = TrainerConfig(epochs=0)
    with pytest.raises(TrainError, match="epochs must be >= 1"):
        train_loop(synth_batch(1), cfg)


def test_checkpoint_ring(tmp_path):
    cfg = TrainerConfig(epochs=12, learning_rate=1e-3, batch_size=8, seed=2)
    result = train_loop(synth_batch(7, n=8), cfg, out_dir=tmp_path)
    assert len(result.checkpoints) == 12
    files = sorted(tmp_path.glob("checkpoint_*.nvck"))
    assert len(files) == 10  # newest ring retained
    assert files[0].name == "checkpoint_0002.nvck"
    assert files[-1].name == "checkpoint_0011.nvck"


def test_checkpoint_roundtrip(tmp_path):
    cfg = TrainerConfig(epochs=2, learning_rate=1e-3, batch_size=4, seed=8)
    result = train_loop(synth_batch(13, n=6), cfg, out_dir=tmp_path)
    state = result.state
    p = tmp_path / "checkpoint_0001.nvck"
    loaded = load_checkpoint(p, seed=cfg.seed)
    assert p.read_bytes()[:4] == b"NVCK"
    assert loaded.step == state.step
    assert np.allclose(loaded.head.weight, state.head.weight, atol=1e-6)
    assert np.array_equal(loaded.head.frozen_weight, state.head.frozen_weight)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "x.nvck"
    p.write_bytes(b"NOPE" + b"\x00" * 30)
    with pytest.raises(TrainError):
        load_checkpoint(p)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


def test_gradients_match_finite_differences():
    assert check_gradients(seed=0) <= 1e-4


def test_gradient_mutation_detected():
    assert check_gradients(seed=0, corruption_factor=1.01) > 1e-3


def test_gradients_without_kl():
    cfg = TrainerConfig(epochs=10, lambda_kl=0.0)
    assert check_gradients(cfg, seed=0) <= 1e-4


def test_gradients_as_printed_orientation():
    cfg = TrainerConfig(epochs=10, triplet_orientation="as_printed")
    assert check_gradients(cfg, seed=1) <= 1e-4
