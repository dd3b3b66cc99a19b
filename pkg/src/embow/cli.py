"""Command-line client for the embow service.

Every subcommand is a thin wrapper over one HTTP endpoint. By default the
service runs in-process (same machine, same filesystem); pass --server to
talk to a remote instance instead. Exit codes: 0 success, 1 usage error,
2 data error, 3 network error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NETWORK = 3

_KIND_EXIT = {"usage": EXIT_USAGE, "data": EXIT_DATA, "network": EXIT_NETWORK}


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="embow", description=__doc__)
    p.add_argument("--server", default=None,
                   help="base URL of a running service; default runs in-process")
    sub = p.add_subparsers(dest="command", metavar="command")

    sp = sub.add_parser("build-vocab", help="build the concept vocabulary from a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("make-targets", help="encode N-hot targets for every corpus record")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    sp.add_argument("--v", type=int, required=True)
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--dim", type=int, default=512)
    sp.add_argument("--active", type=int, default=5)
    sp.add_argument("--noise-sigma", type=float, default=1.0)
    sp.add_argument("--distractor-rate", type=float, default=None)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--subjects", type=int, default=6)

    sp = sub.add_parser("train", help="train the similarity refiner")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--vocab-emb", required=True)
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--loss", default="focal", choices=["bce", "contrastive", "focal"])
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--weight-decay", type=float, default=1e-2)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--batch-size", type=int, default=64)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--eta-min", type=float, default=0.0)
    sp.add_argument("--no-decay-norms-biases", action="store_true",
                    help="exclude layer-norm affine, biases and the sigmoid scale from weight decay")

    sp = sub.add_parser("gradcheck", help="finite-difference check of every loss gradient")
    sp.add_argument("--seed", type=int, default=0, help="first seed of the sweep")
    sp.add_argument("--seeds", type=int, default=20, help="number of seeds")
    sp.add_argument("--h", type=float, default=1e-3)
    sp.add_argument("--tolerance", type=float, default=1e-4)
    sp.add_argument("--out-dir", default=None)

    sp = sub.add_parser("retrieve", help="extract top-k bags-of-words")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--vocab-emb", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", default=None,
                    help="refiner checkpoint; omit for the naive zero-shot baseline")
    sp.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    sp.add_argument("--top-k", type=int, default=15)

    sp = sub.add_parser("prompt", help="render captioning prompts from bags-of-words")
    sp.add_argument("--bow", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--variant", default="both", choices=["with_obj", "without_obj", "both"])

    sp = sub.add_parser("generate", help="generate captions via a chat-completion endpoint")
    sp.add_argument("--prompts", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--endpoint", default="")
    sp.add_argument("--mock", action="store_true",
                    help="use the deterministic in-process mock endpoint")
    sp.add_argument("--temperature", type=float, default=0.2)
    sp.add_argument("--override-temperature", action="store_true")
    sp.add_argument("--max-retries", type=int, default=3)
    sp.add_argument("--timeout", type=float, default=30.0)
    sp.add_argument("--api-key-env", default="EMBOW_API_KEY")
    sp.add_argument("--concurrency", type=int, default=4)
    sp.add_argument("--embeddings", default=None,
                    help="sample embeddings for the privacy scan")
    sp.add_argument("--checkpoint", default=None,
                    help="refiner checkpoint so the latent is scanned too")
    sp.add_argument("--disable-privacy-check", action="store_true")

    sp = sub.add_parser("evaluate", help="retrieval precision/recall@k per subject")
    sp.add_argument("--embeddings", required=True)
    sp.add_argument("--vocab", required=True)
    sp.add_argument("--vocab-emb", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--split", default="test", choices=["train", "val", "test", "all"])
    sp.add_argument("--top-k", type=int, default=15)

    sp = sub.add_parser("report", help="caption quality metrics and aggregates")
    sp.add_argument("--captions", required=True)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("serve", help="run the HTTP service")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8040)
    return p


def _request_body(args: argparse.Namespace) -> tuple[str, dict]:
    """Map parsed CLI flags onto an endpoint path and JSON body."""
    cmd = args.command
    if cmd == "build-vocab":
        return cmd, {"corpus": args.corpus, "out": args.out}
    if cmd == "make-targets":
        return cmd, {"corpus": args.corpus, "vocabulary": args.vocab, "out": args.out}
    if cmd == "synth":
        return cmd, {
            "v": args.v, "n": args.n, "out_dir": args.out_dir, "dim": args.dim,
            "active": args.active, "noise_sigma": args.noise_sigma,
            "distractor_rate": args.distractor_rate, "seed": args.seed,
            "subjects": args.subjects,
        }
    if cmd == "train":
        return cmd, {
            "corpus": args.corpus, "embeddings": args.embeddings,
            "vocabulary": args.vocab, "vocab_embeddings": args.vocab_emb,
            "out_dir": args.out_dir, "loss": args.loss, "lr_max": args.lr,
            "weight_decay": args.weight_decay, "epochs": args.epochs,
            "batch_size": args.batch_size, "seed": args.seed, "eta_min": args.eta_min,
            "decay_norms_and_biases": not args.no_decay_norms_biases,
        }
    if cmd == "gradcheck":
        return cmd, {
            "seeds": args.seeds, "seed_base": args.seed, "h": args.h,
            "tolerance": args.tolerance, "out_dir": args.out_dir,
        }
    if cmd == "retrieve":
        return cmd, {
            "embeddings": args.embeddings, "vocabulary": args.vocab,
            "vocab_embeddings": args.vocab_emb, "corpus": args.corpus,
            "out": args.out, "checkpoint": args.checkpoint, "split": args.split,
            "k": args.top_k,
        }
    if cmd == "prompt":
        return cmd, {"bow": args.bow, "out": args.out, "variant": args.variant}
    if cmd == "generate":
        return cmd, {
            "prompts": args.prompts, "out": args.out, "model": args.model,
            "endpoint_url": args.endpoint, "mock": args.mock,
            "temperature": args.temperature,
            "allow_temperature_override": args.override_temperature,
            "max_retries": args.max_retries, "timeout_s": args.timeout,
            "api_key_env": args.api_key_env, "max_concurrency": args.concurrency,
            "embeddings": args.embeddings, "checkpoint": args.checkpoint,
            "privacy_check": not args.disable_privacy_check,
        }
    if cmd == "evaluate":
        return cmd, {
            "embeddings": args.embeddings, "vocabulary": args.vocab,
            "vocab_embeddings": args.vocab_emb, "corpus": args.corpus,
            "out": args.out, "checkpoint": args.checkpoint, "split": args.split,
            "k": args.top_k,
        }
    if cmd == "report":
        return cmd, {"captions": args.captions, "corpus": args.corpus,
                     "out_dir": args.out_dir}
    raise AssertionError(f"unhandled command {cmd}")


def _post(server: Optional[str], endpoint: str, body: dict):
    """POST to a remote server, or to an in-process app instance."""
    import httpx

    if server:
        try:
            with httpx.Client(base_url=server, timeout=None) as client:
                return client.post(f"/v1/{endpoint}", json=body)
        except httpx.HTTPError as exc:
            print(f"error: cannot reach service at {server}: {exc}", file=sys.stderr)
            raise SystemExit(EXIT_NETWORK)
    import warnings

    with warnings.catch_warnings():
        # starlette 1.3 deprecation-warns about its httpx-based TestClient
        # (with its own warning category); the in-process transport it
        # provides is exactly what the local mode needs
        warnings.simplefilter("ignore")
        from starlette.testclient import TestClient

        from .service import create_app

        with TestClient(create_app(), raise_server_exceptions=False) as client:
            return client.post(f"/v1/{endpoint}", json=body)


def _exit_code_for(response) -> int:
    if response.status_code < 400:
        return EXIT_OK
    try:
        detail = response.json().get("detail")
    except ValueError:
        detail = None
    if isinstance(detail, dict) and detail.get("kind") in _KIND_EXIT:
        return _KIND_EXIT[detail["kind"]]
    if response.status_code == 502:
        return EXIT_NETWORK
    if response.status_code in (400, 422):
        return EXIT_USAGE  # request-shape problems are caller errors
    return EXIT_DATA


def run(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    if args.command == "serve":
        import uvicorn

        from .service import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)
        return EXIT_OK

    endpoint, body = _request_body(args)
    response = _post(args.server, endpoint, body)
    try:
        payload = response.json()
    except ValueError:
        payload = {"detail": response.text}
    print(json.dumps(payload, indent=2, sort_keys=True))
    code = _exit_code_for(response)
    if args.command == "gradcheck" and code == EXIT_OK:
        for loss, err in sorted(payload.get("max_rel_error", {}).items()):
            print(f"{loss}: max rel error {err:.3e}", file=sys.stderr)
        if not payload.get("passed", False):
            return EXIT_DATA
    return code


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
