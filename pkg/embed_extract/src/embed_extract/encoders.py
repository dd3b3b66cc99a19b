"""Text-encoder backends for vocabulary embedding extraction.

The model identifier is a job parameter:

  "st:<model-name>"  a pretrained vision-language text encoder loaded through
                     sentence-transformers (e.g. "st:clip-ViT-B-32"); the
                     production path for real CLIP-space embeddings.
  "hashed-ngram"     a deterministic character-n-gram random-projection
                     encoder with no model download. It carries no semantics
                     and exists so format contracts and pipelines can run in
                     offline environments; runs are reproducible bit for bit.
"""

from __future__ import annotations

import hashlib

import numpy as np


class EncoderError(RuntimeError):
    pass


class HashedNgramEncoder:
    """Character 3-gram hashing into seeded Gaussian feature vectors."""

    name = "hashed-ngram"

    def __init__(self, dim: int = 512, seed: int = 0):
        self.dim = dim
        self.seed = seed

    def _ngram_vector(self, gram: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{gram}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        return rng.standard_normal(self.dim)

    def encode(self, tokens: list[str]) -> np.ndarray:
        out = np.zeros((len(tokens), self.dim), dtype=np.float64)
        for row, token in enumerate(tokens):
            if not token:
                raise EncoderError("cannot encode an empty token")
            padded = f"^{token.lower()}$"
            grams = [padded[i:i + 3] for i in range(len(padded) - 2)] or [padded]
            for gram in grams:
                out[row] += self._ngram_vector(gram)
        return out.astype(np.float32)


class SentenceTransformerEncoder:
    """Pretrained text encoder via sentence-transformers."""

    def __init__(self, model_name: str, batch_size: int = 64):
        self.name = f"st:{model_name}"
        self.batch_size = batch_size
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderError("sentence-transformers is not installed") from exc
        try:
            self.model = SentenceTransformer(model_name)
        except Exception as exc:
            raise EncoderError(f"could not load encoder model {model_name!r}: {exc}") from exc

    def encode(self, tokens: list[str]) -> np.ndarray:
        try:
            vectors = self.model.encode(
                list(tokens), batch_size=self.batch_size,
                convert_to_numpy=True, show_progress_bar=False,
            )
        except Exception as exc:
            raise EncoderError(f"token encoding failed: {exc}") from exc
        return np.asarray(vectors, dtype=np.float32)


def make_encoder(model_id: str, dim: int = 512, batch_size: int = 64, seed: int = 0):
    if model_id == "hashed-ngram":
        return HashedNgramEncoder(dim=dim, seed=seed)
    if model_id.startswith("st:"):
        return SentenceTransformerEncoder(model_id[3:], batch_size=batch_size)
    raise EncoderError(f"unknown encoder model id {model_id!r}")
