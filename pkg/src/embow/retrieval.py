"""Zero-shot baseline and top-k bag-of-words extraction.

The naive baseline scores the raw stage-1 embedding against the vocabulary
matrix with the same cosine kernel the refiner uses, so any difference
between the two is attributable to the refiner alone.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import numerics
from .errors import UsageError
from .vocabulary import TargetVector, Vocabulary

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 15


@dataclass
class BagOfWords:
    """Top-k (token, cosine score) pairs, sorted by descending score.

    This is the only semantic payload allowed to cross the privacy boundary
    (together with the object label and its confidence).
    """

    entries: list[tuple[str, float]]
    clamped: bool = field(default=False, compare=False)

    def __post_init__(self):
        tokens = [t for t, _ in self.entries]
        scores = [s for _, s in self.entries]
        if len(set(tokens)) != len(tokens):
            raise UsageError("bag-of-words tokens must be unique")
        if any(s1 < s2 for s1, s2 in zip(scores, scores[1:])):
            raise UsageError("bag-of-words scores must be non-increasing")
        if any(not -1.0 <= s <= 1.0 for s in scores):
            raise UsageError("bag-of-words scores must lie in [-1, 1]")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def tokens(self) -> list[str]:
        return [t for t, _ in self.entries]

    def to_json(self) -> list[dict]:
        return [{"token": t, "score": s} for t, s in self.entries]

    @classmethod
    def from_json(cls, data: list[dict]) -> "BagOfWords":
        return cls(entries=[(str(d["token"]), float(d["score"])) for d in data])

    def dumps(self) -> str:
        return json.dumps(self.to_json())


def naive_logits(x: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Cosine similarities of the raw embedding against the vocabulary rows."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise UsageError(f"naive_logits expects a single vector, got shape {x.shape}")
    return numerics.cosine_logits(x.reshape(1, -1), e)[0]


def top_k_bow(
    logits: np.ndarray,
    vocab: Union[Vocabulary, Sequence[str]],
    k: int = DEFAULT_TOP_K,
) -> BagOfWords:
    """The k highest-scoring tokens, ties broken by ascending vocabulary
    index so the output is identical under any permutation of equal scores."""
    if k < 1:
        raise UsageError("top_k_bow requires k >= 1")
    tokens = vocab.tokens if isinstance(vocab, Vocabulary) else list(vocab)
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.size != len(tokens):
        raise UsageError(
            f"logits shape {logits.shape} does not match vocabulary size {len(tokens)}"
        )
    clamped = False
    if k > logits.size:
        log.warning("top_k_bow: k=%d exceeds vocabulary size %d; clamping", k, logits.size)
        k = logits.size
        clamped = True
    # stable sort on negated scores keeps ascending index order among ties
    order = np.argsort(-logits, kind="stable")[:k]
    entries = [(tokens[i], float(np.clip(logits[i], -1.0, 1.0))) for i in order]
    return BagOfWords(entries=entries, clamped=clamped)


def bow_indices(bow: BagOfWords, vocab: Vocabulary) -> set[int]:
    return {vocab.index[t] for t in bow.tokens}


def retrieval_metrics(
    indices: set[int], target: TargetVector, k: int
) -> Optional[tuple[float, float]]:
    """(precision@k, recall@k) for one sample.

    Precision divides by k even if fewer tokens were retrieved. Samples
    without positives return None: they are excluded from aggregates.
    """
    if len(indices) > k:
        raise UsageError(f"{len(indices)} retrieved indices exceed k={k}")
    positives = set(int(i) for i in target.active_indices)
    if not positives:
        return None
    hits = len(indices & positives)
    return hits / k, hits / len(positives)
