"""Deterministic stand-ins for the image and text context encoders."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .conditioning import encode_frames


def _seeded(tag: str, shape, scale: float) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(tag.encode()).digest()[:8], "little")
    return np.random.default_rng(seed).standard_normal(shape) * scale


class PatchImageEmbedder:
    """One token per latent patch: patch coefficients plus a coarse position code,
    projected to ``dim`` by a fixed random matrix."""

    def __init__(self, dim: int):
        self.dim = dim
        self.proj = _seeded(f"image-proj-{dim}", (8, dim), 1.0 / np.sqrt(8))

    def __call__(self, image: np.ndarray) -> np.ndarray:
        lat = encode_frames(image)  # (4, h, w)
        _, h, w = lat.shape
        yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
        pos = np.stack([np.sin(np.pi * yy), np.cos(np.pi * yy), np.sin(np.pi * xx), np.cos(np.pi * xx)])
        feats = np.concatenate([lat, pos]).reshape(8, h * w).T
        return feats @ self.proj


class HashedTextEmbedder:
    """Bag of hashed word vectors, one token per word (empty caption -> one token)."""

    def __init__(self, dim: int, max_tokens: int = 16):
        self.dim = dim
        self.max_tokens = max_tokens

    @lru_cache(maxsize=4096)
    def _word(self, word: str) -> np.ndarray:
        return _seeded(f"word-{self.dim}-{word}", self.dim, 1.0)

    def __call__(self, caption: str) -> np.ndarray:
        words = re.findall(r"[a-z0-9]+", caption.lower())[: self.max_tokens] or ["<empty>"]
        return np.stack([self._word(w) for w in words])


@dataclass
class EmbeddingProviders:
    image_embedder: object
    text_embedder: object

    @classmethod
    def default(cls, dim: int) -> "EmbeddingProviders":
        return cls(PatchImageEmbedder(dim), HashedTextEmbedder(dim))
