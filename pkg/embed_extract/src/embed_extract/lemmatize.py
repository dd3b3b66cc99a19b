"""Caption lemmatization: fill the corpus "lemmas" field with content-word
lemmas (nouns, verbs, adjectives) so the decoding service can skip its own
fallback extraction.

The default "simple" tagger is rule-based: closed-class function words and
-ly adverbs are dropped, the remaining open-class tokens are treated as
content words and lemmatized with irregular-form tables plus suffix rules.
It is deliberately lightweight; the tagger choice is a job parameter so a
heavier pipeline can be swapped in where available.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

_WORD_RE = re.compile(r"[a-z]+")

# closed-class function words: never content words
FUNCTION_WORDS = frozenset("""
a an the this that these those some any each every no such and or but nor so
yet for of in on at by with from to into onto over under above below between
among through during before after behind beside near against about around
across along past without within upon off out up down i you he she it we they
me him her us them my your his its our their mine yours hers ours theirs
myself yourself himself herself itself ourselves themselves who whom whose
which what where when why how is are was were am be been being do does did
done doing have has had having will would shall should can could may might
must not as if then than because while once here there all both few more
most other another only own same too very just also ever never again further
one two three four five six seven eight nine ten
""".split())

IRREGULAR = {
    # nouns
    "men": "man", "women": "woman", "children": "child", "people": "person",
    "feet": "foot", "teeth": "tooth", "mice": "mouse", "geese": "goose",
    "leaves": "leaf", "wolves": "wolf", "shelves": "shelf", "knives": "knife",
    "loaves": "loaf", "lives": "life",
    # verbs
    "sat": "sit", "sitting": "sit", "ran": "run", "running": "run",
    "went": "go", "gone": "go", "stood": "stand", "standing": "stand",
    "held": "hold", "grew": "grow", "grown": "grow", "lay": "lie",
    "lying": "lie", "flew": "fly", "flying": "fly", "swam": "swim",
    "swimming": "swim", "ate": "eat", "eaten": "eat", "made": "make",
    "making": "make", "took": "take", "taken": "take", "taking": "take",
    "got": "get", "getting": "get", "came": "come", "coming": "come",
    "gave": "give", "given": "give", "giving": "give", "wore": "wear",
    "worn": "wear", "rode": "ride", "riding": "ride", "drove": "drive",
    "driving": "drive", "smiling": "smile", "shining": "shine",
    # words the suffix rules would damage
    "living": "living", "ceiling": "ceiling", "building": "building",
    "evening": "evening", "morning": "morning", "lightning": "lightning",
    "glass": "glass", "grass": "grass", "dress": "dress", "bus": "bus",
    "lens": "lens", "species": "species", "red": "red", "bed": "bed",
    "seed": "seed", "breed": "breed", "wooden": "wooden",
}

_KEEP_DOUBLE = ("ll", "ss", "ee", "oo", "zz", "ff")
# stems that need a restored final 'e' after -ed/-ing stripping
_E_FINAL = ("v", "c", "g", "u", "s", "z")


def _strip_verbal(word: str, suffix: str) -> str:
    stem = word[: -len(suffix)]
    if len(stem) >= 4 and stem[-1] == stem[-2] and stem[-2:] not in _KEEP_DOUBLE:
        return stem[:-1]  # stopped -> stop
    if len(stem) >= 3 and stem[-1] in _E_FINAL and stem[-2] not in "aeiou":
        return stem + "e"  # carved -> carve, dancing -> dance
    return stem


def lemmatize_word(word: str) -> str:
    w = word.lower()
    if w in IRREGULAR:
        return IRREGULAR[w]
    if w.endswith("ies") and len(w) > 4:
        return w[:-3] + "y"
    if w.endswith("ing") and len(w) > 5:
        return _strip_verbal(w, "ing")
    if w.endswith("ed") and len(w) > 4:
        return _strip_verbal(w, "ed")
    if w.endswith("es") and len(w) > 4 and w[-3] in "sxzh":
        return w[:-2]
    if w.endswith("s") and not w.endswith("ss") and len(w) > 3:
        return w[:-1]
    return w


def content_lemmas(caption: str) -> list[str]:
    """Ordered content-word lemmas of one caption (duplicates preserved)."""
    lemmas = []
    for token in _WORD_RE.findall(caption.lower()):
        if len(token) < 3 or token in FUNCTION_WORDS:
            continue
        if token.endswith("ly") and len(token) > 4:
            continue  # adverbs are not vocabulary concepts
        lemma = lemmatize_word(token)
        if len(lemma) >= 3 and lemma not in FUNCTION_WORDS:
            lemmas.append(lemma)
    return lemmas


def lemmatize_captions(in_path: str | Path, out_path: str | Path,
                       tagger: str = "simple") -> dict:
    """Rewrite a corpus JSONL file with the lemmas field filled in.

    Records that produce no lemmas are kept with lemmas=[] and counted as
    warnings rather than dropped.
    """
    if tagger != "simple":
        raise ValueError(f"unknown tagger {tagger!r} (available: simple)")
    n_records = 0
    n_empty = 0
    with open(in_path, "r", encoding="utf-8") as src, \
            open(out_path, "w", encoding="utf-8") as dst:
        for lineno, line in enumerate(src, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{in_path}:{lineno}: invalid JSON ({exc})") from exc
            lemmas = content_lemmas(str(record.get("caption", "")))
            if not lemmas:
                n_empty += 1
            record["lemmas"] = lemmas
            dst.write(json.dumps(record, sort_keys=True) + "\n")
            n_records += 1
    return {"n_records": n_records, "n_empty": n_empty,
            "out": str(out_path), "tagger": tagger}
