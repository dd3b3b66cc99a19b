"""Command-line entry points: extract-vocab and lemmatize."""

from __future__ import annotations

import argparse
import json
import sys

from .encoders import EncoderError
from .extract import ExtractionJob, extract_vocab_embeddings
from .lemmatize import lemmatize_captions


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="embed-extract", description=__doc__)
    sub = p.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("extract-vocab",
                        help="write one text embedding per vocabulary token (SENSEEMB1)")
    sp.add_argument("--vocab", required=True, help="vocabulary JSON array")
    sp.add_argument("--out", required=True, help="output SENSEEMB1 path")
    sp.add_argument("--model", default="st:clip-ViT-B-32",
                    help="encoder id: st:<model-name> or hashed-ngram")
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0,
                    help="seed for the hashed-ngram encoder")

    sp = sub.add_parser("lemmatize",
                        help="fill the lemmas field of a corpus JSONL file")
    sp.add_argument("--in", dest="in_path", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--tagger", default="simple")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 1
    try:
        if args.command == "extract-vocab":
            job = ExtractionJob(vocabulary_path=args.vocab, out_path=args.out,
                                model_id=args.model, batch_size=args.batch_size,
                                seed=args.seed)
            result = extract_vocab_embeddings(job)
        else:
            result = lemmatize_captions(args.in_path, args.out, tagger=args.tagger)
    except (EncoderError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
