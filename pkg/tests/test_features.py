import numpy as np
import pytest

from hoidiff.errors import DimensionMismatch, EmptyText, InvalidDescriptor
from hoidiff.features import DescriptorEmbedder, cosine, embed_text


def test_embed_text_deterministic_and_unit_norm():
    a = embed_text("pour the cup")
    b = embed_text("pour the cup")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12


def test_embed_text_case_and_whitespace_folding():
    assert np.array_equal(embed_text("Pour  Cup"), embed_text("pour cup"))
    assert np.array_equal(embed_text(" pour\tcup\n"), embed_text("pour cup"))


def test_embed_text_similarity_structure():
    pc = embed_text("pour cup")
    pb = embed_text("pour box")
    sb = embed_text("shake bottle")
    assert cosine(pc, pc) == pytest.approx(1.0)
    assert cosine(pc, pb) > cosine(pc, sb)


def test_embed_text_empty_raises():
    with pytest.raises(EmptyText):
        embed_text("")
    with pytest.raises(EmptyText):
        embed_text("   \t ")


def test_descriptor_projection_is_isometric():
    emb = DescriptorEmbedder(descriptor_dim=14, seed=3)
    P = emb.projection
    assert np.abs(P.T @ P - np.eye(14)).max() < 1e-12
    rng = np.random.default_rng(0)
    a = rng.normal(size=14)
    b = rng.normal(size=14)
    ca = cosine(emb.embed(a), emb.embed(b))
    cb = cosine(a, b)
    assert abs(ca - cb) < 1e-9


def test_descriptor_noise_is_rng_driven():
    emb = DescriptorEmbedder(descriptor_dim=6, noise_sigma=0.1, seed=1)
    d = np.array([1.0, 0.5, 0.0, 0.2, 0.0, 0.0])
    a = emb.embed(d, np.random.default_rng(11))
    b = emb.embed(d, np.random.default_rng(11))
    c = emb.embed(d, np.random.default_rng(12))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-12
    with pytest.raises(InvalidDescriptor):
        emb.embed(d)  # rng required when sigma > 0


def test_descriptor_validation():
    emb = DescriptorEmbedder(descriptor_dim=4, seed=0)
    with pytest.raises(DimensionMismatch):
        emb.embed(np.ones(5))
    with pytest.raises(InvalidDescriptor):
        emb.embed(np.array([1.0, np.nan, 0.0, 0.0]))
    with pytest.raises(InvalidDescriptor):
        emb.embed(np.zeros(4))
    with pytest.raises(InvalidDescriptor):
        DescriptorEmbedder(descriptor_dim=0)


def test_same_seed_same_projection():
    a = DescriptorEmbedder(descriptor_dim=8, seed=5)
    b = DescriptorEmbedder(descriptor_dim=8, seed=5)
    c = DescriptorEmbedder(descriptor_dim=8, seed=6)
    assert np.array_equal(a.projection, b.projection)
    assert not np.array_equal(a.projection, c.projection)
