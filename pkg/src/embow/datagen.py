"""Synthetic vocabulary embeddings and embedding/target datasets.

The generator makes the full pipeline trainable at desk scale without any
real recordings. Each sample's embedding is the normalized salience-weighted
sum of its active concept embeddings, usually polluted by one off-target
concept (stage-1 encoders confuse visually similar classes), plus structured
Gaussian noise living in a fixed, seeded low-dimensional subspace inside the
vocabulary span. These corruptions mirror the premise the refiner exists
for: a systematic mismatch between incoming embeddings and the vocabulary
space. The naive cosine baseline cannot avoid any of them, while a trained
refiner can learn to project the noise out and to rebalance weak concepts;
purely isotropic noise would leave the baseline optimal and nothing
measurable to refine.

Outputs are written in the same SENSEEMB1 + JSON-lines formats as real-data
ingestion, so downstream modules cannot tell synthetic from real data.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import embedio
from .errors import UsageError
from .trainer import Sample
from .vocabulary import CaptionRecord, TargetVector, Vocabulary, save_vocabulary, write_corpus

SPLIT_FRACTIONS = (0.8, 0.1, 0.1)

# salience floor for active concepts (uniform weights in [floor, 1])
WEIGHT_FLOOR = 0.4
# when an off-target concept bleeds into the embedding, how often the
# stage-1 object label points at it instead of the true object
LABEL_FLIP_GIVEN_DISTRACTOR = 0.375


@dataclass
class SynthConfig:
    v: int
    n_samples: int
    dim: int = 512
    active_per_sample: int = 5
    noise_sigma: float = 1.0
    distractor_rate: float = 1.0
    seed: int = 0
    subjects: int = 6

    def __post_init__(self):
        if self.v < 1 or self.n_samples < 1 or self.dim < 1:
            raise UsageError("v, n_samples and dim must be positive")
        if not 1 <= self.active_per_sample <= self.v:
            raise UsageError("active_per_sample must lie in [1, v]")
        if self.noise_sigma < 0:
            raise UsageError("noise_sigma must be nonnegative")
        if not 0.0 <= self.distractor_rate <= 1.0:
            raise UsageError("distractor_rate must lie in [0, 1]")
        if self.subjects < 1:
            raise UsageError("subjects must be positive")


def token_name(i: int) -> str:
    return f"tok{i:04d}"


def synth_vocab_embeddings(cfg: SynthConfig) -> tuple[list[str], np.ndarray]:
    """V unit-norm rows from a seeded isotropic Gaussian, plus token names."""
    rng = np.random.default_rng(cfg.seed)
    raw = rng.standard_normal((cfg.v, cfg.dim))
    matrix = raw / np.sqrt((raw * raw).sum(axis=1, keepdims=True))
    tokens = [token_name(i) for i in range(cfg.v)]
    return tokens, matrix.astype(np.float32)


def noise_subspace_dim(dim: int, v: int) -> int:
    return max(1, min(dim, v) // 8)


def _noise_basis(cfg: SynthConfig, e: np.ndarray) -> np.ndarray:
    """Fixed orthonormal basis of the dataset's noise subspace.

    The subspace is drawn inside the span of the vocabulary embeddings, so
    the noise lands on token scores (degrading naive retrieval) with as
    little total energy as possible, leaving a projection a refiner can
    learn to remove.
    """
    rng = np.random.default_rng(cfg.seed + 1)
    d_sub = noise_subspace_dim(cfg.dim, cfg.v)
    mix = e.astype(np.float64).T @ rng.standard_normal((cfg.v, d_sub))
    q, _ = np.linalg.qr(mix)
    return q


def _split_sizes(n: int) -> tuple[int, int, int]:
    n_train = round(SPLIT_FRACTIONS[0] * n)
    n_val = min(round(SPLIT_FRACTIONS[1] * n), n - n_train)
    return n_train, n_val, n - n_train - n_val


def synth_dataset(cfg: SynthConfig, e: np.ndarray) -> tuple[list[Sample], list[CaptionRecord]]:
    """Generate (sample, caption-record) pairs; deterministic under the seed."""
    if e.shape != (cfg.v, cfg.dim):
        raise UsageError(f"embedding matrix shape {e.shape} does not match config")
    rng = np.random.default_rng(cfg.seed + 2)
    basis = _noise_basis(cfg, e)
    d_sub = basis.shape[1]

    n = cfg.n_samples
    n_train, n_val, _ = _split_sizes(n)
    order = rng.permutation(n)
    splits = np.empty(n, dtype=object)
    splits[order[:n_train]] = "train"
    splits[order[n_train:n_train + n_val]] = "val"
    splits[order[n_train + n_val:]] = "test"

    e64 = e.astype(np.float64)
    samples: list[Sample] = []
    records: list[CaptionRecord] = []
    for i in range(n):
        active = np.sort(rng.choice(cfg.v, size=cfg.active_per_sample, replace=False))
        # concepts carry varying salience: a caption's peripheral objects are
        # expressed weakly in the embedding, giving retrieval hard positives
        weights = rng.uniform(WEIGHT_FLOOR, 1.0, size=cfg.active_per_sample)
        signal = (weights[:, None] * e64[active]).sum(axis=0)
        label_idx = int(active[0])
        if cfg.distractor_rate > 0 and rng.random() < cfg.distractor_rate:
            choices = np.setdiff1d(np.arange(cfg.v), active)
            distractor = int(rng.choice(choices))
            signal = signal + e64[distractor]
            if rng.random() < LABEL_FLIP_GIVEN_DISTRACTOR:
                label_idx = distractor  # stage-1 misclassified the object
        signal = signal / np.sqrt((signal * signal).sum())
        x = signal + cfg.noise_sigma * (basis @ rng.standard_normal(d_sub))

        bits = np.zeros(cfg.v, dtype=np.uint8)
        bits[active] = 1
        tokens = [token_name(j) for j in active]
        subject = 1 + i % cfg.subjects
        sid = f"s{i:06d}"
        samples.append(Sample(id=sid, x=x.astype(np.float32),
                              target=TargetVector(bits=bits),
                              subject=subject, split=str(splits[i])))
        records.append(CaptionRecord(
            id=sid,
            subject=subject,
            split=str(splits[i]),
            caption="a photo of " + " and ".join(tokens),
            object_label=token_name(label_idx),
            lemmas=tuple(tokens),
            object_confidence=round(float(rng.uniform(0.5, 0.99)), 4),
        ))
    return samples, records


def write_synth_dataset(cfg: SynthConfig, out_dir: str | Path) -> dict:
    """Write vocabulary, vocabulary embeddings, sample embeddings and corpus.

    Returns the paths of everything written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tokens, matrix = synth_vocab_embeddings(cfg)
    samples, records = synth_dataset(cfg, matrix)

    vocab_path = out / "vocab.json"
    emb_path = out / "vocab_emb.semb"
    samples_path = out / "samples.semb"
    corpus_path = out / "corpus.jsonl"

    save_vocabulary(Vocabulary.from_tokens(tokens), vocab_path)
    embedio.write_embeddings(emb_path, matrix)
    embedio.write_sample_embeddings(
        samples_path, [s.id for s in samples], np.stack([s.x for s in samples])
    )
    write_corpus(corpus_path, records)
    return {
        "vocabulary": str(vocab_path),
        "vocab_embeddings": str(emb_path),
        "sample_embeddings": str(samples_path),
        "sample_ids": str(embedio.ids_sidecar_path(samples_path)),
        "corpus": str(corpus_path),
        "n_samples": len(samples),
        "v": cfg.v,
        "dim": cfg.dim,
    }
