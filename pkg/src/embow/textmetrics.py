"""Sentence-level caption metrics: BLEU-1/4 and ROUGE-1/2/L.

Tokenization is lowercase + punctuation stripping + whitespace split (a
config flag keeps raw whitespace tokenization available). Scores are
computed per sentence and averaged across samples; BLEU-4 uses add-nothing
smoothing, so any empty clipped n-gram precision zeroes the score.
"""

from __future__ import annotations

import csv
import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .errors import UsageError

_PUNCT_RE = re.compile(r"[^\w\s]")

METRIC_COLUMNS = ("bleu1", "bleu4", "rouge1", "rouge2", "rougeL")


def tokenize(text: str, strip_punctuation: bool = True) -> list[str]:
    text = text.lower()
    if strip_punctuation:
        text = _PUNCT_RE.sub(" ", text)
    return text.split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _clipped_precision(cand: Sequence[str], ref: Sequence[str], n: int) -> Optional[float]:
    """Modified n-gram precision; None when the candidate has no n-grams."""
    cand_counts = _ngrams(cand, n)
    total = sum(cand_counts.values())
    if total == 0:
        return None
    ref_counts = _ngrams(ref, n)
    clipped = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    return clipped / total


def _brevity_penalty(cand_len: int, ref_len: int) -> float:
    if cand_len == 0:
        return 0.0
    if cand_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / cand_len)


def bleu_n(candidate: str, reference: str, n: int, strip_punctuation: bool = True) -> float:
    """Sentence BLEU-n: geometric mean of clipped 1..n-gram precisions times
    the brevity penalty. Empty candidates and zero precisions give 0."""
    if not 1 <= n <= 4:
        raise UsageError("bleu_n supports n in 1..4")
    cand = tokenize(candidate, strip_punctuation)
    ref = tokenize(reference, strip_punctuation)
    if not cand:
        return 0.0
    log_sum = 0.0
    for order in range(1, n + 1):
        p = _clipped_precision(cand, ref, order)
        if not p:  # missing n-grams or zero precision: no smoothing
            return 0.0
        log_sum += math.log(p)
    return _brevity_penalty(len(cand), len(ref)) * math.exp(log_sum / n)


def rouge_n(candidate: str, reference: str, n: int, strip_punctuation: bool = True) -> float:
    """ROUGE-n F1 with clipped n-gram overlap counts."""
    if n < 1:
        raise UsageError("rouge_n requires n >= 1")
    cand = tokenize(candidate, strip_punctuation)
    ref = tokenize(reference, strip_punctuation)
    cand_counts = _ngrams(cand, n)
    ref_counts = _ngrams(ref, n)
    cand_total = sum(cand_counts.values())
    ref_total = sum(ref_counts.values())
    if cand_total == 0 or ref_total == 0:
        return 0.0
    overlap = sum(min(c, ref_counts[g]) for g, c in cand_counts.items())
    if overlap == 0:
        return 0.0
    precision = overlap / cand_total
    recall = overlap / ref_total
    return 2.0 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    # single-row dynamic program
    prev = [0] * (len(b) + 1)
    for tok in a:
        cur = [0]
        for j, other in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if tok == other else max(prev[j], cur[-1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, strip_punctuation: bool = True) -> float:
    """Longest-common-subsequence F1."""
    cand = tokenize(candidate, strip_punctuation)
    ref = tokenize(reference, strip_punctuation)
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class MetricRow:
    id: str
    subject: int
    variant: str
    bleu1: float
    bleu4: float
    rouge1: float
    rouge2: float
    rougeL: float

    def values(self) -> dict[str, float]:
        return {c: getattr(self, c) for c in METRIC_COLUMNS}


def score_pair(
    sample_id: str,
    subject: int,
    variant: str,
    candidate: str,
    reference: str,
    strip_punctuation: bool = True,
) -> MetricRow:
    return MetricRow(
        id=sample_id,
        subject=subject,
        variant=variant,
        bleu1=bleu_n(candidate, reference, 1, strip_punctuation),
        bleu4=bleu_n(candidate, reference, 4, strip_punctuation),
        rouge1=rouge_n(candidate, reference, 1, strip_punctuation),
        rouge2=rouge_n(candidate, reference, 2, strip_punctuation),
        rougeL=rouge_l(candidate, reference, strip_punctuation),
    )


def aggregate(rows: list[MetricRow], group_by: tuple[str, ...] = ("variant",)) -> list[dict]:
    """Arithmetic means per group plus one overall row. Empty input is an
    error; empty groups simply do not appear."""
    if not rows:
        raise UsageError("aggregate requires at least one metric row")
    for key in group_by:
        if key not in ("subject", "variant"):
            raise UsageError(f"cannot group by {key!r}")
    groups: dict[tuple, list[MetricRow]] = {}
    for row in rows:
        groups.setdefault(tuple(getattr(row, k) for k in group_by), []).append(row)

    def mean_row(label: dict, members: list[MetricRow]) -> dict:
        out = dict(label)
        for col in METRIC_COLUMNS:
            out[col] = sum(getattr(r, col) for r in members) / len(members)
        out["n"] = len(members)
        return out

    table = [
        mean_row(dict(zip(group_by, key)), members)
        for key, members in sorted(groups.items(), key=lambda kv: tuple(map(str, kv[0])))
    ]
    table.append(mean_row({k: "all" for k in group_by}, rows))
    return table


def write_rows_csv(rows: list[MetricRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "subject", "variant", "bleu1", "bleu4", "rouge1", "rouge2", "rougeL"])
        for r in rows:
            writer.writerow([r.id, r.subject, r.variant] +
                            [f"{getattr(r, c):.6f}" for c in METRIC_COLUMNS])


def write_aggregate(table: list[dict], csv_path: str | Path, json_path: str | Path | None = None) -> None:
    if not table:
        raise UsageError("empty aggregate table")
    fields = [k for k in table[0] if k not in METRIC_COLUMNS and k != "n"]
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields + list(METRIC_COLUMNS) + ["n"])
        for row in table:
            writer.writerow([row[f] for f in fields] +
                            [f"{row[c]:.6f}" for c in METRIC_COLUMNS] + [row["n"]])
    if json_path is not None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(table, fh, indent=2, sort_keys=True)
            fh.write("\n")
