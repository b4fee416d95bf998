import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nariqa.flowtroi import (
    FlowError,
    FlowField,
    TroiMask,
    estimate_flow,
    feather_mask,
    flow_magnitude,
    read_flow,
    select_top_fraction,
    troi_from_flow,
    write_flow,
)
from nariqa.imagecore import Image, ShapeMismatchError
from nariqa.synth import make_scene, shifted_pair, textured_rgb


def interior(arr, margin=16):
    return arr[margin:-margin, margin:-margin]


# ---------------------------------------------------------------------------
# flow estimation
# ---------------------------------------------------------------------------


def test_zero_flow_on_identical():
    img = Image(textured_rgb(48, 64, ("z",))).to_uint8()
    f = estimate_flow(img, img)
    assert np.all(f.u == 0)
    assert np.all(f.v == 0)


@pytest.mark.parametrize("dx,dy", [(3, 0), (-5, 2), (8, 8), (7, -6)])
def test_translation_recovery(dx, dy):
    prev, curr = shifted_pair(96, 96, dx, dy, seed=7)
    f = estimate_flow(prev, curr)
    # Exclude the border band where content slid in from outside the frame.
    margin = 16 + max(abs(dx), abs(dy))
    ok = (interior(f.u, margin) == dx) & (interior(f.v, margin) == dy)
    assert ok.mean() >= 0.95


def test_flow_dimension_checks():
    a = Image(np.zeros((32, 32, 3), dtype=np.uint8))
    b = Image(np.zeros((32, 48, 3), dtype=np.uint8))
    with pytest.raises(ShapeMismatchError):
        estimate_flow(a, b)
    small = Image(np.zeros((16, 64, 3), dtype=np.uint8))
    with pytest.raises(FlowError):
        estimate_flow(small, small)


def test_flow_determinism():
    prev, curr = shifted_pair(64, 64, 2, -1, seed=3)
    f1 = estimate_flow(prev, curr)
    f2 = estimate_flow(prev, curr)
    assert np.array_equal(f1.u, f2.u) and np.array_equal(f1.v, f2.v)


# ---------------------------------------------------------------------------
# magnitude
# ---------------------------------------------------------------------------


def test_magnitude_zero_and_345():
    z = FlowField(np.zeros((4, 4), dtype=np.int64), np.zeros((4, 4), dtype=np.int64))
    assert np.all(flow_magnitude(z) == 0)
    f = FlowField(np.full((4, 4), 3, dtype=np.int64), np.full((4, 4), 4, dtype=np.int64))
    assert np.all(flow_magnitude(f) == 5.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_magnitude_elementwise(seed):
    rng = np.random.default_rng(seed)
    u = rng.integers(-9, 10, size=(5, 6))
    v = rng.integers(-9, 10, size=(5, 6))
    mag = flow_magnitude(FlowField(u, v))
    for y in range(5):
        for x in range(6):
            assert mag[y, x] == pytest.approx(np.hypot(u[y, x], v[y, x]), abs=1e-12)


# ---------------------------------------------------------------------------
# TROI selection
# ---------------------------------------------------------------------------


def test_troi_2x2():
    mag = np.array([[0.0, 1.0], [2.0, 3.0]])
    m = troi_from_flow(mag, 0.5)
    assert np.array_equal(m.bits, np.array([[False, False], [True, True]]))
    assert m.coverage == 0.5


def test_troi_all_equal_raster_tiebreak():
    mag = np.ones((10, 10))
    bits = select_top_fraction(mag, 0.5)
    expect = np.zeros(100, dtype=bool)
    expect[:50] = True
    assert np.array_equal(bits.ravel(), expect)


def test_troi_exact_count_distinct():
    rng = np.random.default_rng(0)
    mag = rng.permutation(100).astype(np.float64).reshape(10, 10)
    bits = select_top_fraction(mag, 0.85)
    assert bits.sum() == 85
    # exactly the 85 largest values
    assert mag[bits].min() > mag[~bits].max()


@settings(max_examples=30, deadline=None)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(0.30, 0.85, allow_nan=False),
)
def test_troi_precleanup_count_exact(seed, coverage):
    rng = np.random.default_rng(seed)
    mag = rng.random((17, 13))
    bits = select_top_fraction(mag, coverage)
    assert bits.sum() == int(np.ceil(coverage * mag.size))


def test_troi_postcleanup_coverage_large_frame():
    # Real flow-magnitude maps on a >=10^4 px frame: cleanup within +/-0.02.
    frames = make_scene("cov", 3, h=128, w=128, seed=5)
    mag = flow_magnitude(estimate_flow(frames[1], frames[2]))
    assert mag.size >= 10**4
    for coverage in (0.30, 0.50, 0.85):
        m = troi_from_flow(mag, coverage)
        assert abs(m.coverage - coverage) <= 0.02


def test_troi_empty_map():
    with pytest.raises(FlowError):
        troi_from_flow(np.zeros((0, 0)), 0.5)


# ---------------------------------------------------------------------------
# feathering
# ---------------------------------------------------------------------------


def test_feather_all_ones_and_zeros():
    ones = TroiMask(np.ones((20, 20), dtype=bool), 1.0)
    assert np.allclose(feather_mask(ones).soft, 1.0)
    zeros = TroiMask(np.zeros((20, 20), dtype=bool), 0.0)
    assert np.all(feather_mask(zeros).soft == 0.0)


def test_feather_single_pixel_support():
    bits = np.zeros((31, 31), dtype=bool)
    bits[15, 15] = True
    soft = feather_mask(TroiMask(bits, 0.0), sigma=2.0).soft
    assert soft.argmax() == 15 * 31 + 15
    ys, xs = np.nonzero(soft > 0)
    assert np.abs(ys - 15).max() <= 6
    assert np.abs(xs - 15).max() <= 6
    # Chebyshev ball is fully inside the support boundary.
    assert soft[15, 21] > 0 and soft[15, 22] == 0


def test_feather_interior_saturates():
    bits = np.zeros((40, 40), dtype=bool)
    bits[8:32, 8:32] = True
    soft = feather_mask(TroiMask(bits, 0.36), sigma=2.0).soft
    # >= 6px inside the mask the kernel support is fully covered.
    assert np.allclose(soft[14:26, 14:26], 1.0, atol=1e-12)
    assert np.all(soft[bits ^ True][np.nonzero(soft[bits ^ True] > 0)] <= 1.0)


# ---------------------------------------------------------------------------
# flow file format
# ---------------------------------------------------------------------------


def test_flow_roundtrip(tmp_path):
    rng = np.random.default_rng(9)
    f = FlowField(
        rng.integers(-30, 31, size=(12, 9)), rng.integers(-30, 31, size=(12, 9))
    )
    p = tmp_path / "f.nvfl"
    write_flow(f, p)
    back = read_flow(p)
    assert np.array_equal(back.u, f.u) and np.array_equal(back.v, f.v)
    assert p.read_bytes()[:4] == b"NVFL"


def test_flow_bad_magic(tmp_path):
    p = tmp_path / "bad.nvfl"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(FlowError):
        read_flow(p)
