import numpy as np
import pytest

from mvlatent.core import (DimensionError, EmbeddingMatrix, LatentBundle, MVLatentError,
                           NonFiniteError, ViewPair, make_rng, validate_embedding)


def test_validate_accepts_even_finite():
    m = EmbeddingMatrix(np.zeros((2, 4), np.float32), "a")
    assert validate_embedding(m) is m


def test_validate_rejects_odd_width():
    with pytest.raises(DimensionError):
        validate_embedding(EmbeddingMatrix(np.zeros((2, 3)), "a"))


@pytest.mark.parametrize("bad", [np.nan, np.inf, -np.inf])
def test_validate_rejects_non_finite(bad):
    v = np.zeros((2, 4))
    v[1, 2] = bad
    with pytest.raises(NonFiniteError):
        validate_embedding(EmbeddingMatrix(v, "a"))


def test_validate_rejects_empty_and_1d():
    with pytest.raises(DimensionError):
        validate_embedding(EmbeddingMatrix(np.zeros((0, 4)), "a"))
    with pytest.raises(DimensionError):
        validate_embedding(EmbeddingMatrix(np.zeros(4), "a"))


def test_bundle_shapes_and_joint():
    zp, zs = np.ones((3, 2)), np.zeros((3, 2))
    assert LatentBundle(zp, zs).joint.shape == (3, 4)
    with pytest.raises(DimensionError):
        LatentBundle(zp, np.zeros((3, 3)))


def test_view_pair_needs_distinct_clips():
    a = EmbeddingMatrix(np.zeros((1, 2)), "a")
    with pytest.raises(MVLatentError):
        ViewPair(a, a, "s")


def test_rng_streams():
    assert make_rng(3, 1).random() == make_rng(3, 1).random()
    assert make_rng(3, 1).random() != make_rng(3, 2).random()
    with pytest.raises(ValueError):
        make_rng(-1)
