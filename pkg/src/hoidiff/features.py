"""Deterministic stand-in feature embeddings for conditions.

Real deployments would drop in CLIP-style encoders here; the toolkit
only needs embeddings that are deterministic, unit-norm, and preserve
similarity structure.  Text uses the hashing trick over lowercased
whitespace tokens.  Numeric scene descriptors go through a fixed
seeded isometric projection (orthonormal directions, so cosines are
preserved) plus optional Gaussian noise that models encoder jitter.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DimensionMismatch, EmptyText, InvalidDescriptor

TEXT_DIM = 64
VISUAL_DIM = 64


def _token_hash(token):
    """Stable 64-bit hash (process-independent, unlike builtin hash)."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def embed_text(text, dim=TEXT_DIM):
    """Hashed bag-of-words embedding, L2-normalized.

    Tokens are lowercased and split on whitespace; each token adds +-1
    to the bucket its 64-bit hash selects (sign from the top bit).

    Raises:
        EmptyText: if no tokens remain.
    """
    tokens = text.lower().split()
    if not tokens:
        raise EmptyText(f"no tokens in {text!r}")
    v = np.zeros(dim)
    for tok in tokens:
        h = _token_hash(tok)
        sign = 1.0 if (h >> 63) & 1 else -1.0
        v[h % dim] += sign
    n = np.linalg.norm(v)
    if n == 0.0:  # possible only through exact sign cancellation
        raise EmptyText(f"tokens of {text!r} cancelled to a zero vector")
    return v / n


class DescriptorEmbedder:
    """Seeded isometric projection of scene descriptors to feature space.

    The projection matrix has orthonormal columns drawn once from the
    seed, so with zero noise, cosine similarity between embeddings
    equals cosine similarity between normalized descriptors.
    """

    def __init__(self, descriptor_dim, dim=VISUAL_DIM, noise_sigma=0.0, seed=0):
        if descriptor_dim < 1 or descriptor_dim > dim:
            raise InvalidDescriptor(
                f"descriptor_dim must be in [1, {dim}], got {descriptor_dim}")
        self.descriptor_dim = int(descriptor_dim)
        self.dim = int(dim)
        self.noise_sigma = float(noise_sigma)
        self.seed = int(seed)
        g = np.random.default_rng(seed).standard_normal((dim, descriptor_dim))
        q, _ = np.linalg.qr(g)
        self.projection = q  # (dim, descriptor_dim), orthonormal columns

    def embed(self, descriptor, rng=None):
        """Embed one descriptor; rng supplies the noise draw if sigma > 0."""
        d = np.asarray(descriptor, dtype=np.float64)
        if d.shape != (self.descriptor_dim,):
            raise DimensionMismatch(
                f"descriptor shape {d.shape} != ({self.descriptor_dim},)")
        if not np.all(np.isfinite(d)):
            raise InvalidDescriptor("descriptor has non-finite entries")
        n = np.linalg.norm(d)
        if n == 0.0:
            raise InvalidDescriptor("descriptor is the zero vector")
        v = self.projection @ (d / n)
        if self.noise_sigma > 0.0:
            if rng is None:
                raise InvalidDescriptor("noise_sigma > 0 requires an rng")
            v = v + rng.normal(0.0, self.noise_sigma, self.dim)
        return v / np.linalg.norm(v)

    def provider_info(self):
        return {"name": "descriptor-isometry", "dim": self.dim,
                "descriptor_dim": self.descriptor_dim,
                "noise_sigma": self.noise_sigma, "seed": self.seed}


def cosine(a, b):
    """Cosine similarity with zero-safe denominators."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    den = np.linalg.norm(a) * np.linalg.norm(b)
    return float(a @ b / den) if den > 0 else 0.0
