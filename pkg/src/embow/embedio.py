"""Reader/writer for the SENSEEMB1 binary embedding format.

Layout: 9-byte ASCII magic "SENSEEMB1", u32 LE row count, u32 LE dim, then
rows*dim little-endian IEEE-754 f32 values, row-major. Sample embedding
files carry a JSON sidecar listing the sample id of each row.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import MagicMismatchError, TruncatedFileError, UsageError

MAGIC = b"SENSEEMB1"


def write_embeddings(path: str | Path, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise UsageError(f"embedding matrix must be 2-d, got shape {matrix.shape}")
    rows, dim = matrix.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", rows, dim))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_embeddings(path: str | Path) -> np.ndarray:
    """Parse a SENSEEMB1 file into a float32 (rows, dim) array.

    Only structural validation happens here; semantic checks (expected dim,
    row count, finiteness, norms) belong to the consumer.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise MagicMismatchError(f"{path}: expected magic {MAGIC!r}, got {magic!r}")
        header = fh.read(8)
        if len(header) != 8:
            raise TruncatedFileError(f"{path}: truncated header")
        rows, dim = struct.unpack("<II", header)
        payload = fh.read(4 * rows * dim)
        if len(payload) != 4 * rows * dim:
            raise TruncatedFileError(
                f"{path}: expected {4 * rows * dim} payload bytes, got {len(payload)}"
            )
        if fh.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f4").reshape(rows, dim).astype(np.float32)


def ids_sidecar_path(path: str | Path) -> Path:
    return Path(str(path) + ".ids.json")


def write_sample_embeddings(path: str | Path, ids: list[str], matrix: np.ndarray) -> None:
    """Embeddings keyed by sample id: SENSEEMB1 file plus the id sidecar."""
    matrix = np.asarray(matrix)
    if len(ids) != matrix.shape[0]:
        raise UsageError(f"{len(ids)} ids for {matrix.shape[0]} embedding rows")
    write_embeddings(path, matrix)
    with open(ids_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(list(ids), fh)
        fh.write("\n")


def read_sample_embeddings(path: str | Path) -> tuple[list[str], np.ndarray]:
    matrix = read_embeddings(path)
    sidecar = ids_sidecar_path(path)
    with open(sidecar, "r", encoding="utf-8") as fh:
        ids = json.load(fh)
    if not isinstance(ids, list) or len(ids) != matrix.shape[0]:
        raise TruncatedFileError(
            f"{sidecar}: sidecar lists {len(ids)} ids for {matrix.shape[0]} rows"
        )
    return [str(i) for i in ids], matrix
