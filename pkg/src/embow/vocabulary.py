"""Concept vocabulary construction and N-hot target encoding.

The vocabulary is the deduplicated, lexicographically sorted set of content
lemmas (nouns/verbs/adjectives) from training-split captions only; target
vectors mark which vocabulary concepts a caption mentions.

Caption records may carry a pre-lemmatized "lemmas" list (the preferred
ingestion path, produced by the extraction tool). Without it, a built-in
fallback extractor is used: lowercase alphabetic tokens of length >= 3,
minus a stopword list, with light plural/verbal suffix stripping. The
fallback is deliberately simple and will not match a dictionary lemmatizer
word for word; what matters is that building and encoding share it exactly.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import embedio
from .errors import (
    DataError,
    DegenerateInputError,
    DimMismatchError,
    NonFiniteError,
    RowCountError,
    UsageError,
)
from .numerics import NORM_FLOOR

EMBEDDING_DIM = 512

_WORD_RE = re.compile(r"[a-z]+")

# Function words and other non-content vocabulary the fallback extractor drops.
STOPWORDS = frozenset("""
a about above after again against all am an and any are as at be because been
before being below between both but by can did do does doing down during each
few for from further had has have having he her here hers herself him himself
his how i if in into is it its itself just me more most my myself no nor not
now of off on once only or other our ours ourselves out over own same she
should so some such than that the their theirs them themselves then there
these they this those through to too under until up very was we were what
when where which while who whom why will with you your yours yourself
yourselves front next near
""".split())

# Words the suffix rules would mangle, mapped to the lemma to keep.
LEMMA_EXCEPTIONS = {
    "living": "living",
    "ceiling": "ceiling",
    "building": "building",
    "evening": "evening",
    "morning": "morning",
    "spring": "spring",
    "string": "string",
    "king": "king",
    "ring": "ring",
    "wing": "wing",
    "thing": "thing",
    "something": "something",
    "nothing": "nothing",
    "everything": "everything",
    "carved": "carve",
    "used": "use",
    "red": "red",
    "bed": "bed",
    "wooded": "wood",
    "striped": "stripe",
    "colored": "color",
    "covered": "cover",
    "glass": "glass",
    "grass": "grass",
    "dress": "dress",
    "bus": "bus",
    "gas": "gas",
    "lens": "lens",
    "species": "species",
    "leaves": "leaf",
    "shelves": "shelf",
    "wolves": "wolf",
    "knives": "knife",
    "people": "people",
    "children": "child",
    "men": "man",
    "women": "woman",
    "feet": "foot",
    "teeth": "tooth",
    "mice": "mouse",
    "geese": "goose",
}

_DOUBLED_KEEP = ("ll", "ss", "ee", "oo", "zz", "ff")


def fallback_lemma(word: str) -> str:
    """Lowercase suffix-stripping lemmatizer used when no lemma list is given."""
    w = word.lower()
    if w in LEMMA_EXCEPTIONS:
        return LEMMA_EXCEPTIONS[w]
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    for suffix in ("ing", "ed"):
        if w.endswith(suffix) and len(w) - len(suffix) >= 3:
            stem = w[: -len(suffix)]
            if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-2:] not in _DOUBLED_KEEP:
                stem = stem[:-1]  # running -> run, sitting -> sit
            return stem
    if w.endswith("es") and len(w) > 4 and w[-3] in "sxzh":
        return w[:-2]  # boxes, dishes, glasses
    if w.endswith("s") and not w.endswith("ss") and len(w) > 3:
        return w[:-1]
    return w


def extract_content_lemmas(caption: str) -> list[str]:
    """Fallback content-word pipeline: alphabetic, >= 3 chars, non-stopword."""
    lemmas = []
    for token in _WORD_RE.findall(caption.lower()):
        if len(token) < 3 or token in STOPWORDS:
            continue
        lemma = fallback_lemma(token)
        if len(lemma) >= 3 and lemma not in STOPWORDS:
            lemmas.append(lemma)
    return lemmas


@dataclass(frozen=True)
class CaptionRecord:
    id: str
    subject: int
    split: str
    caption: str
    object_label: str
    lemmas: Optional[tuple[str, ...]] = None
    object_confidence: Optional[float] = None

    def content_lemmas(self) -> list[str]:
        if self.lemmas is not None:
            return [w.lower() for w in self.lemmas]
        return extract_content_lemmas(self.caption)


VALID_SPLITS = ("train", "val", "test")


def parse_corpus_line(line: str, lineno: int = 0) -> CaptionRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataError(f"corpus line {lineno}: invalid JSON ({exc})") from exc
    for key in ("id", "subject", "split", "caption", "object_label"):
        if key not in raw:
            raise DataError(f"corpus line {lineno}: missing field {key!r}")
    if raw["split"] not in VALID_SPLITS:
        raise DataError(f"corpus line {lineno}: unknown split {raw['split']!r}")
    lemmas = raw.get("lemmas")
    conf = raw.get("object_confidence")
    if conf is not None and not 0.0 <= float(conf) <= 1.0:
        raise DataError(f"corpus line {lineno}: object_confidence outside [0, 1]")
    return CaptionRecord(
        id=str(raw["id"]),
        subject=int(raw["subject"]),
        split=raw["split"],
        caption=str(raw["caption"]),
        object_label=str(raw["object_label"]),
        lemmas=tuple(lemmas) if lemmas is not None else None,
        object_confidence=float(conf) if conf is not None else None,
    )


def read_corpus(path: str | Path) -> list[CaptionRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                records.append(parse_corpus_line(line, lineno))
    return records


def write_corpus(path: str | Path, records: Iterable[CaptionRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            row = {
                "id": rec.id,
                "subject": rec.subject,
                "split": rec.split,
                "caption": rec.caption,
                "object_label": rec.object_label,
            }
            if rec.lemmas is not None:
                row["lemmas"] = list(rec.lemmas)
            if rec.object_confidence is not None:
                row["object_confidence"] = round(rec.object_confidence, 6)
            fh.write(json.dumps(row, sort_keys=True) + "\n")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    index: dict[str, int] = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        tokens = tuple(tokens)
        if not tokens:
            raise UsageError("vocabulary must contain at least one token")
        index = {tok: i for i, tok in enumerate(tokens)}
        if len(index) != len(tokens):
            raise UsageError("vocabulary tokens must be unique")
        return cls(tokens=tokens, index=index)


def build_vocabulary(records: Iterable[CaptionRecord]) -> Vocabulary:
    """Deduplicated content lemmas of training-split captions, sorted
    lexicographically for deterministic indexing. Other splits never
    contribute (no test-set leakage)."""
    seen: set[str] = set()
    any_train = False
    for rec in records:
        if rec.split != "train":
            continue
        any_train = True
        seen.update(rec.content_lemmas())
    if not any_train:
        raise UsageError("cannot build a vocabulary: no training-split captions")
    if not seen:
        raise UsageError("training captions contain no content words")
    return Vocabulary.from_tokens(sorted(seen))


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(list(vocab.tokens), fh, indent=0)
        fh.write("\n")


def load_vocabulary(path: str | Path) -> Vocabulary:
    with open(path, "r", encoding="utf-8") as fh:
        tokens = json.load(fh)
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataError(f"{path}: vocabulary file must be a JSON array of strings")
    return Vocabulary.from_tokens(tokens)


@dataclass
class TargetVector:
    bits: np.ndarray  # {0,1}^V, uint8

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1 or not np.isin(self.bits, (0, 1)).all():
            raise UsageError("target bits must be a flat 0/1 vector")

    @property
    def active_count(self) -> int:
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return self.active_count == 0

    @property
    def active_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits)


def encode_targets(caption: str, vocab: Vocabulary) -> TargetVector:
    """N-hot encoding of a raw caption through the fallback pipeline."""
    return encode_lemmas(extract_content_lemmas(caption), vocab)


def encode_lemmas(lemmas: Iterable[str], vocab: Vocabulary) -> TargetVector:
    """N-hot encoding of pre-extracted lemmas; out-of-vocabulary lemmas are
    ignored (they cannot be supervised) and repeats set a bit only once."""
    bits = np.zeros(vocab.size, dtype=np.uint8)
    for lemma in lemmas:
        pos = vocab.index.get(lemma.lower())
        if pos is not None:
            bits[pos] = 1
    return TargetVector(bits=bits)


def encode_record(record: CaptionRecord, vocab: Vocabulary) -> TargetVector:
    return encode_lemmas(record.content_lemmas(), vocab)


@dataclass(frozen=True)
class VocabEmbeddings:
    """Frozen V x dim embedding matrix for the vocabulary tokens."""

    matrix: np.ndarray
    source_tag: str = ""

    def __post_init__(self):
        self.matrix.setflags(write=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def load_vocab_embeddings(
    path: str | Path, vocab: Vocabulary, expected_dim: int = EMBEDDING_DIM
) -> VocabEmbeddings:
    """Load and validate the frozen vocabulary matrix from a SENSEEMB1 file.

    Distinct errors for magic/header problems, wrong dim, row count not
    matching the vocabulary, non-finite values and degenerate rows.
    """
    matrix = embedio.read_embeddings(path)
    rows, dim = matrix.shape
    if dim != expected_dim:
        raise DimMismatchError(f"{path}: embedding dim {dim}, expected {expected_dim}")
    if rows != vocab.size:
        raise RowCountError(f"{path}: {rows} rows for a vocabulary of {vocab.size} tokens")
    if not np.all(np.isfinite(matrix)):
        raise NonFiniteError(f"{path}: embedding matrix contains non-finite values")
    norms = np.sqrt((matrix.astype(np.float64) ** 2).sum(axis=1))
    bad = np.flatnonzero(norms < NORM_FLOOR)
    if bad.size:
        raise DegenerateInputError(
            f"{path}: embedding row {int(bad[0])} has norm below {NORM_FLOOR:g}"
        )
    return VocabEmbeddings(matrix=matrix, source_tag=str(path))
