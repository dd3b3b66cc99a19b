"""Vocabulary embedding extraction into the SENSEEMB1 binary format.

SENSEEMB1 layout (the inter-component contract): 9-byte ASCII magic
"SENSEEMB1", u32 LE row count, u32 LE dimension, then rows*dim little-endian
IEEE-754 float32 values in row-major order. Row i embeds vocabulary token i;
every row is L2-normalized here so consumers can assume (and re-verify)
unit norms.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoders import EncoderError, make_encoder

MAGIC = b"SENSEEMB1"
TARGET_DIM = 512


@dataclass
class ExtractionJob:
    vocabulary_path: str
    out_path: str
    model_id: str = "st:clip-ViT-B-32"
    batch_size: int = 64
    seed: int = 0


def read_vocabulary(path: str | Path) -> list[str]:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = json.load(fh)
    if not isinstance(tokens, list) or not tokens or not all(isinstance(t, str) for t in tokens):
        raise ValueError(f"{path}: vocabulary must be a non-empty JSON array of strings")
    return tokens


def write_senseemb1(path: str | Path, matrix: np.ndarray) -> None:
    rows, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", rows, dim))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_senseemb1(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        rows, dim = struct.unpack("<II", fh.read(8))
        data = np.frombuffer(fh.read(4 * rows * dim), dtype="<f4")
    return data.reshape(rows, dim).astype(np.float32)


def extract_vocab_embeddings(job: ExtractionJob) -> dict:
    """Encode every vocabulary token and write the embedding matrix.

    Rows are written in vocabulary order and L2-normalized. Re-running the
    same job overwrites the file with identical bytes (the encoders are
    deterministic for a fixed model).
    """
    tokens = read_vocabulary(job.vocabulary_path)
    encoder = make_encoder(job.model_id, dim=TARGET_DIM,
                           batch_size=job.batch_size, seed=job.seed)
    matrix = encoder.encode(tokens)
    if matrix.shape != (len(tokens), TARGET_DIM):
        raise EncoderError(
            f"encoder produced shape {matrix.shape}, expected ({len(tokens)}, {TARGET_DIM})"
        )
    if not np.all(np.isfinite(matrix)):
        bad = int(np.flatnonzero(~np.isfinite(matrix).all(axis=1))[0])
        raise EncoderError(f"non-finite embedding for token {tokens[bad]!r}")
    norms = np.sqrt((matrix.astype(np.float64) ** 2).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        bad = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise EncoderError(f"zero embedding for token {tokens[bad]!r}")
    matrix = (matrix / norms).astype(np.float32)
    write_senseemb1(job.out_path, matrix)
    return {
        "rows": len(tokens),
        "dim": TARGET_DIM,
        "model": encoder.name,
        "out": str(job.out_path),
    }
