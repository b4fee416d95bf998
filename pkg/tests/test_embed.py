import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nariqa.embed import (
    DEFAULT_EMBED_DIM,
    FEATURE_DIM,
    EmbedError,
    Embedding,
    EmbeddingHead,
    PatchEmbeddings,
    PatchFeatures,
    head_forward,
    image_embedding,
    patch_features,
    read_embeddings,
    write_embeddings,
    zigzag_indices,
)
from nariqa.imagecore import Image, PatchGrid
from nariqa.synth import textured_rgb


@pytest.fixture(scope="module")
def img():
    return Image(textured_rgb(42, 56, ("feat",))).to_uint8()


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def test_zigzag_prefix():
    got = zigzag_indices(8, 10)
    assert got == [
        (0, 0), (0, 1), (1, 0), (2, 0), (1, 1),
        (0, 2), (0, 3), (1, 2), (2, 1), (3, 0),
    ]


def test_constant_patch_features():
    img = Image(np.full((14, 14, 3), 0.5))
    grid = PatchGrid.for_image(img, 14)
    raw = patch_features(img, grid, standardize=False).values[0]
    assert raw[1] == 0.0  # luma std
    assert raw[4] == 0.0 and raw[5] == 0.0  # gradient energies
    assert np.all(raw[6:10] == 0)  # orientation histogram empty
    assert np.all(raw[11:26] == 0.0)  # AC magnitudes
    assert raw[10] > 0.0  # DC carries the mean


def test_vertical_step_edge():
    img = Image(np.zeros((14, 14, 3)))
    img.data[:, 7:, :] = 1.0  # vertical edge -> horizontal gradient
    grid = PatchGrid.for_image(img, 14)
    raw = patch_features(img, grid, standardize=False).values[0]
    assert raw[4] > raw[5]


def test_feature_determinism(img):
    grid = PatchGrid.for_image(img, 14)
    a = patch_features(img, grid).values
    b = patch_features(img, grid).values
    assert np.array_equal(a, b)


def test_histogram_sums_to_gradient_count(img):
    grid = PatchGrid.for_image(img, 14)
    raw = patch_features(img, grid, standardize=False).values
    # interior of a 14x14 patch has 12x12 central-difference sites
    assert np.all(raw[:, 6:10].sum(axis=1) <= 144)
    assert np.all(raw[:, 6:10].sum(axis=1) >= 0)
    assert np.all(raw[:, 10:26] >= 0.0)


def test_feature_shape_and_standardization(img):
    grid = PatchGrid.for_image(img, 14)
    feats = patch_features(img, grid)
    assert feats.values.shape == (grid.n_patches, FEATURE_DIM)
    assert feats.standardized
    assert np.all(np.isfinite(feats.values))


# ---------------------------------------------------------------------------
# head
# ---------------------------------------------------------------------------


def test_head_identity_like():
    head = EmbeddingHead.initialize(feature_dim=4, embed_dim=4, seed=0)
    head.weight[:] = np.eye(4)
    head.bias[:] = 0.0
    feats = PatchFeatures(1, 1, np.array([[0.0, 1.0, 0.0, 0.0]]))
    out = head_forward(feats, head)
    assert np.allclose(out.vectors[0], [0, 1, 0, 0])


def test_head_degenerate_rule():
    head = EmbeddingHead.initialize(feature_dim=4, embed_dim=4, seed=0)
    head.weight[:] = 0.0
    head.bias[:] = 0.0
    feats = PatchFeatures(1, 1, np.ones((1, 4)))
    out = head_forward(feats, head)
    assert np.array_equal(out.vectors[0], [1, 0, 0, 0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_head_output_unit_norm(seed):
    rng = np.random.default_rng(seed)
    head = EmbeddingHead.initialize(seed=seed)
    feats = PatchFeatures(2, 3, rng.normal(size=(6, FEATURE_DIM)))
    out = head_forward(feats, head)
    norms = np.linalg.norm(out.vectors, axis=1)
    assert np.all(np.abs(norms - 1.0) < 1e-6)


def test_head_dim_mismatch():
    head = EmbeddingHead.initialize(feature_dim=8, embed_dim=4)
    feats = PatchFeatures(1, 1, np.ones((1, 5)))
    with pytest.raises(EmbedError):
        head_forward(feats, head)


def test_frozen_copy_immutable():
    head = EmbeddingHead.initialize(seed=3)
    w0 = head.frozen_weight.copy()
    head.weight += 1.0
    head.bias += 0.5
    assert np.array_equal(head.frozen_weight, w0)
    with pytest.raises(ValueError):
        head.frozen_weight[0, 0] = 9.9


def test_frozen_forward_uses_snapshot(img):
    head = EmbeddingHead.initialize(seed=4)
    grid = PatchGrid.for_image(img, 14)
    feats = patch_features(img, grid)
    before = head_forward(feats, head, frozen=True).vectors
    head.weight += 0.3
    after = head_forward(feats, head, frozen=True).vectors
    assert np.array_equal(before, after)
    assert not np.array_equal(after, head_forward(feats, head).vectors)


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------


def test_pool_single_patch():
    v = np.zeros((1, 8))
    v[0, 3] = 1.0
    e = image_embedding(PatchEmbeddings(1, 1, v))
    assert np.array_equal(e.values, v[0])


def test_pool_antipodal_degenerate():
    v = np.zeros((2, 4))
    v[0, 1] = 1.0
    v[1, 1] = -1.0
    e = image_embedding(PatchEmbeddings(1, 2, v))
    assert np.array_equal(e.values, [1, 0, 0, 0])


def test_pool_equal_patches():
    v = np.tile(np.array([[0.6, 0.8, 0.0]]), (5, 1))
    e = image_embedding(PatchEmbeddings(1, 5, v))
    assert np.allclose(e.values, [0.6, 0.8, 0.0])


# ---------------------------------------------------------------------------
# NVEB format
# ---------------------------------------------------------------------------


def test_nveb_grid_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    v = rng.normal(size=(4, 8)).astype(np.float32).astype(np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v = v.astype(np.float32).astype(np.float64)  # f32-representable
    pe = PatchEmbeddings(2, 2, v)
    p = tmp_path / "e.nveb"
    write_embeddings(pe, p)
    back = read_embeddings(p)
    assert isinstance(back, PatchEmbeddings)
    assert (back.grid_h, back.grid_w) == (2, 2)
    assert np.array_equal(back.vectors, v)
    assert p.read_bytes()[:4] == b"NVEB"


def test_nveb_image_roundtrip(tmp_path):
    v = np.zeros(16)
    v[2] = 1.0
    p = tmp_path / "i.nveb"
    write_embeddings(Embedding(v), p)
    back = read_embeddings(p)
    assert isinstance(back, Embedding)
    assert np.array_equal(back.values, v)
    assert back.normalized


def test_nveb_bad_magic(tmp_path):
    p = tmp_path / "bad.nveb"
    p.write_bytes(b"XXXX" + b"\x00" * 16)
    with pytest.raises(EmbedError):
        read_embeddings(p)


def test_nveb_grid_count_mismatch(tmp_path):
    p = tmp_path / "mis.nveb"
    import struct

    payload = b"NVEB" + struct.pack("<HHII", 1, 0b11, 3, 2) + struct.pack("<HH", 2, 2)
    payload += b"\x00" * (3 * 2 * 4)
    p.write_bytes(payload)
    with pytest.raises(EmbedError):
        read_embeddings(p)
