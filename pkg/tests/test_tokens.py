import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from maskcodec.tokens import (
    Codebook,
    DimensionError,
    LatentGrid,
    TokenGrid,
    codebook_train,
    psnr,
    vq_dequantize,
    vq_quantize,
)


def test_quantize_picks_nearest_and_breaks_ties_low():
    cb = Codebook([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    lat = LatentGrid(np.array([[[0.9, 0.0], [0.0, 0.5]], [[-0.6, 0.0], [0.5, 0.0]]]))
    t = vq_quantize(lat, cb)
    # (0.5, 0) is equidistant from rows 0 and 1
    assert t.indices.tolist() == [[1, 0], [2, 0]]


def test_quantize_is_idempotent_on_codewords(rng):
    cb = Codebook(rng.normal(size=(16, 3)))
    t = TokenGrid(rng.integers(0, 16, (5, 7)), 16)
    assert vq_quantize(vq_dequantize(t, cb), cb) == t


def test_dimension_errors(rng):
    cb = Codebook(rng.normal(size=(4, 3)))
    with pytest.raises(DimensionError):
        vq_quantize(LatentGrid(np.zeros((2, 2, 2))), cb)
    with pytest.raises(DimensionError):
        vq_dequantize(TokenGrid(np.zeros((2, 2), int), 8), cb)
    with pytest.raises(ValueError):
        vq_quantize(LatentGrid(np.full((2, 2, 3), np.nan)), cb)


def test_codebook_rejects_duplicate_rows():
    with pytest.raises(ValueError, match="distinct"):
        Codebook([[1.0, 2.0], [1.0, 2.0]])


def test_codebook_bytes_round_trip(rng, tmp_path):
    cb = Codebook(rng.normal(size=(10, 4)))
    back = Codebook.from_bytes(cb.to_bytes())
    assert np.array_equal(back.vectors, cb.vectors) and back.id == cb.id
    cb.save(tmp_path / "cb.bin")
    assert Codebook.load(tmp_path / "cb.bin").id == cb.id
    with pytest.raises(ValueError):
        Codebook.from_bytes(cb.to_bytes()[:-1])


def test_codebook_train_recovers_separated_clusters(rng):
    centers = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    x = np.concatenate([c + 0.1 * rng.normal(size=(50, 2)) for c in centers])
    cb = codebook_train(x, 4, seed=0)
    got = sorted(map(tuple, np.round(cb.vectors)))
    assert got == sorted(map(tuple, centers))


def test_codebook_train_handles_few_distinct_points():
    x = np.array([[0.0], [0.0], [1.0], [2.0]])
    cb = codebook_train(x, 3, seed=1)
    assert len(np.unique(cb.vectors, axis=0)) == 3
    with pytest.raises(ValueError):
        codebook_train(np.zeros((5, 1)), 2)


def test_token_grid_validation_and_text():
    with pytest.raises(ValueError):
        TokenGrid(np.array([[0, 4]]), 4)
    with pytest.raises(DimensionError):
        TokenGrid(np.zeros(3, int), 4)
    t = TokenGrid(np.array([[0, 3], [2, 1]]), 4)
    assert t.to_text() == "2 2 4\n0 3\n2 1\n"
    assert TokenGrid.from_text(t.to_text()) == t
    with pytest.raises(ValueError):
        TokenGrid.from_text("2 2 4\n0 1\n")


def test_psnr():
    a = np.zeros((2, 2, 1))
    assert psnr(a, a) == float("inf")
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(2, 50), st.integers(0, 2**31))
def test_token_text_round_trip(h, w, V, seed):
    t = TokenGrid(np.random.default_rng(seed).integers(0, V, (h, w)), V)
    assert TokenGrid.from_text(t.to_text()) == t
