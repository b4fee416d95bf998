import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nariqa.corpus import (
    BuildStats,
    CorpusError,
    FilterReport,
    Manifest,
    ManifestError,
    ScoreRow,
    ScoreTable,
    TripletRecord,
    build_triplets,
    gmsd,
    read_manifest,
    render_triplet,
    scene_change_guard,
    ssim,
    supervision_filter,
    write_manifest,
)
from nariqa.distort import DistortionSpec, apply_distortion
from nariqa.imagecore import Image
from nariqa.synth import make_scene, textured_rgb


@pytest.fixture(scope="module")
def frames():
    return make_scene("sc", 40, h=64, w=64, seed=21)


@pytest.fixture(scope="module")
def ref_img():
    return Image(textured_rgb(96, 96, ("scorer-ref",))).to_uint8()


# ---------------------------------------------------------------------------
# scene-change guard
# ---------------------------------------------------------------------------


def test_guard_static(frames):
    assert scene_change_guard(frames, 3, 8) is False


def test_guard_detects_negative_frame(frames):
    cut = list(frames)
    cut[20] = Image(255 - cut[20].data)
    assert scene_change_guard(cut, 18, 22) is True
    assert scene_change_guard(cut, 21, 25) is False  # span after the cut


def test_guard_threshold_saturation(frames):
    cut = list(frames)
    cut[20] = Image(255 - cut[20].data)
    assert scene_change_guard(cut, 18, 22, theta=1.0) is False


def test_guard_range_check(frames):
    with pytest.raises(CorpusError):
        scene_change_guard(frames, 0, 99)


# ---------------------------------------------------------------------------
# triplet construction
# ---------------------------------------------------------------------------


def test_build_deterministic(frames):
    m1 = build_triplets(frames, "sc", seed=5)
    m2 = build_triplets(frames, "sc", seed=5)
    assert m1 == m2
    m3 = build_triplets(frames, "sc", seed=6)
    assert m1 != m3


def test_build_reference_distance_law(frames):
    man = build_triplets(frames, "sc", seed=5, per_target=4)
    assert len(man.records) > 0
    for rec in man.records:
        assert 1 <= abs(rec.reference_index - rec.target_index) <= 15
        assert rec.k == abs(rec.reference_index - rec.target_index)
        assert 0 <= rec.reference_index < len(frames)
        assert 0.30 <= rec.troi_coverage <= 0.85
        assert rec.distortion_pos.level < rec.distortion_neg.level
        assert rec.distortion_pos.type_id == rec.distortion_neg.type_id
        assert rec.distortion_pos.seed == rec.distortion_neg.seed
        assert rec.order_source == "construction"


def test_build_low_target_clamps_direction(frames):
    man = build_triplets(frames, "sc", seed=11, per_target=6)
    for rec in man.records:
        if rec.target_index == 1:
            assert rec.reference_index >= 0


def test_build_respects_scene_cut(frames):
    cut = list(frames)
    cut[20] = Image(255 - cut[20].data)
    man = build_triplets(cut, "sc", seed=5, per_target=6)
    for rec in man.records:
        lo = min(rec.target_index, rec.reference_index)
        hi = max(rec.target_index, rec.reference_index)
        # 19->20 and 20->21 are cuts; no record may straddle either
        assert not (lo <= 19 < hi) and not (lo <= 20 < hi)


def test_build_needs_16_frames(frames):
    with pytest.raises(CorpusError):
        build_triplets(frames[:10], "sc", seed=1)


def test_render_triplet_shapes(frames):
    man = build_triplets(frames, "sc", seed=5)
    imgs = render_triplet(frames, man.records[0])
    assert imgs.target.data.shape == imgs.pos.data.shape == imgs.neg.data.shape
    assert imgs.mask_soft.shape == (64, 64)
    # pos/neg differ only inside the mask support
    outside = imgs.mask_soft == 0
    assert np.array_equal(imgs.pos.data[outside], imgs.target.data[outside])
    assert np.array_equal(imgs.neg.data[outside], imgs.target.data[outside])


# ---------------------------------------------------------------------------
# scorers
# ---------------------------------------------------------------------------


def test_ssim_identity(ref_img):
    assert ssim(ref_img, ref_img) == pytest.approx(1.0, abs=1e-12)


def test_ssim_negative_image(ref_img):
    neg = Image(255 - ref_img.data)
    assert ssim(ref_img, neg) < 0.5


def test_ssim_constant_epsilon():
    a = Image(np.full((32, 32, 3), 0.5))
    b = Image(np.full((32, 32, 3), 0.5 + 1 / 255))
    assert ssim(a, b) == pytest.approx(1.0, abs=1e-3)


def test_ssim_symmetry(ref_img):
    blurred = apply_distortion(ref_img, DistortionSpec("gaussian-blur", 3))
    assert ssim(ref_img, blurred) == pytest.approx(ssim(blurred, ref_img), abs=1e-12)


def test_ssim_window_too_small():
    tiny = Image(np.zeros((8, 8, 3), dtype=np.uint8))
    with pytest.raises(CorpusError):
        ssim(tiny, tiny)


def test_gmsd_identity_and_positivity(ref_img):
    assert gmsd(ref_img, ref_img) == 0.0
    blurred = apply_distortion(ref_img, DistortionSpec("gaussian-blur", 3))
    assert gmsd(ref_img, blurred) > 0.0


def test_gmsd_blur_severity(ref_img):
    b1 = apply_distortion(ref_img, DistortionSpec("gaussian-blur", 1))
    b5 = apply_distortion(ref_img, DistortionSpec("gaussian-blur", 5))
    assert gmsd(ref_img, b5) > gmsd(ref_img, b1)


# ---------------------------------------------------------------------------
# supervision filter
# ---------------------------------------------------------------------------


def _make_record(i):
    return TripletRecord(
        triplet_id=f"t{i}",
        scene_id="s",
        target_index=1,
        reference_index=2,
        k=1,
        distortion_pos=DistortionSpec("gaussian-blur", 1),
        distortion_neg=DistortionSpec("gaussian-blur", 4),
        troi_coverage=0.5,
        mask_seed=0,
    )


def _table(triples):
    """triples: list of (pos_a, neg_a, pos_b, neg_b), scorer a lower-better,
    scorer b higher-better."""
    table = ScoreTable()
    for i, (pa, na, pb, nb) in enumerate(triples):
        table.add(ScoreRow(f"t{i}", "pos", "a", pa, "lower_better"))
        table.add(ScoreRow(f"t{i}", "neg", "a", na, "lower_better"))
        table.add(ScoreRow(f"t{i}", "pos", "b", pb, "higher_better"))
        table.add(ScoreRow(f"t{i}", "neg", "b", nb, "higher_better"))
    return table


def test_filter_drops_ambiguous():
    man = Manifest(0, {}, [_make_record(0)])
    table = _table([(0.100, 0.101, 0.9, 0.5)])  # scorer a gap 0.001 < tau
    report = FilterReport()
    out = supervision_filter(man, table, scorers=("a", "b"), report=report)
    assert out.records == [] and report.dropped_ambiguous == 1


def test_filter_drops_disagreement():
    man = Manifest(0, {}, [_make_record(0)])
    # a says pos better (0.1 < 0.2); b (higher-better) says neg better
    table = _table([(0.1, 0.2, 0.5, 0.9)])
    report = FilterReport()
    out = supervision_filter(man, table, scorers=("a", "b"), report=report)
    assert out.records == [] and report.dropped_disagreement == 1


def test_filter_keeps_and_relabels():
    man = Manifest(0, {}, [_make_record(0), _make_record(1)])
    man.records[1] = TripletRecord(**{**man.records[1].__dict__})
    # t0: both say pos better; t1: both say neg better -> swap
    table = _table([(0.1, 0.2, 0.9, 0.5), (0.2, 0.1, 0.5, 0.9)])
    out = supervision_filter(man, table, scorers=("a", "b"))
    assert len(out.records) == 2
    assert all(r.order_source == "supervision" for r in out.records)
    assert out.records[0].distortion_pos.level == 1
    assert out.records[1].distortion_pos.level == 4  # swapped


def test_filter_missing_scores():
    man = Manifest(0, {}, [_make_record(0)])
    with pytest.raises(CorpusError):
        supervision_filter(man, ScoreTable(), scorers=("a", "b"))


def _brute_force_filter(records, table, scorers, tau):
    """Independent reimplementation of the two filter rules."""
    kept = []
    for rec in records:
        sp_a = table.lower_better_score(rec.triplet_id, "pos", scorers[0])
        sn_a = table.lower_better_score(rec.triplet_id, "neg", scorers[0])
        sp_b = table.lower_better_score(rec.triplet_id, "pos", scorers[1])
        sn_b = table.lower_better_score(rec.triplet_id, "neg", scorers[1])
        if not (abs(sp_a - sn_a) >= tau[0] and abs(sp_b - sn_b) >= tau[1]):
            continue
        if (sp_a < sn_a) and (sp_b < sn_b):
            kept.append((rec.triplet_id, "pos"))
        elif (sp_a > sn_a) and (sp_b > sn_b):
            kept.append((rec.triplet_id, "neg"))
    return kept


def test_filter_matches_brute_force_oracle():
    rng = np.random.default_rng(77)
    records = [_make_record(i) for i in range(100)]
    triples = []
    for _ in range(100):
        base = rng.uniform(0.0, 0.5, size=2)
        gap = rng.choice([0.0, 0.002, 0.02, -0.02, 0.2, -0.2])
        ga = gap + rng.normal(0, 0.003)
        gb = gap + rng.normal(0, 0.003)
        triples.append((base[0], base[0] + ga, base[1], base[1] - gb))
    table = _table(triples)
    man = Manifest(0, {}, records)
    out = supervision_filter(man, table, scorers=("a", "b"))
    got = [
        (r.triplet_id, "pos" if r.distortion_pos.level == 1 else "neg")
        for r in out.records
    ]
    assert got == _brute_force_filter(records, table, ("a", "b"), (0.005, 0.005))


# ---------------------------------------------------------------------------
# manifest files
# ---------------------------------------------------------------------------


def test_manifest_roundtrip(tmp_path, frames):
    man = build_triplets(frames, "sc", seed=5)
    man.records[0] = TripletRecord(**{**man.records[0].__dict__, "label": 1})
    p = tmp_path / "m.jsonl"
    write_manifest(man, p)
    back = read_manifest(p)
    assert back == man


def test_manifest_empty_roundtrip(tmp_path):
    man = Manifest(seed=3, settings={"a": 1}, records=[])
    p = tmp_path / "empty.jsonl"
    write_manifest(man, p)
    assert p.read_text().count("\n") == 1
    assert read_manifest(p) == man


def test_manifest_truncated_line(tmp_path, frames):
    man = build_triplets(frames, "sc", seed=5)
    p = tmp_path / "m.jsonl"
    write_manifest(man, p)
    lines = p.read_text().splitlines()
    p.write_text("\n".join(lines[:-1] + [lines[-1][: len(lines[-1]) // 2]]) + "\n")
    with pytest.raises(ManifestError) as exc:
        read_manifest(p)
    assert f"line {len(lines)}" in str(exc.value)


def test_scoretable_roundtrip(tmp_path):
    table = _table([(0.1, 0.2, 0.3, 0.4), (0.5, 0.6, 0.7, 0.8)])
    p = tmp_path / "scores.csv"
    table.save(p)
    back = ScoreTable.load(p)
    assert back.rows == table.rows
    assert p.read_text().splitlines()[0] == "triplet_id,role,scorer,score,orientation"
