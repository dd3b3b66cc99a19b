"""Command implementations shared by the HTTP service and the CLI client.

Every function works on files (the formats other modules define), writes a
run manifest next to its outputs, and returns a JSON-serializable summary.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from . import datagen as datagen_mod
from . import embedio, gradcheck as gradcheck_mod, prompting, refiner, retrieval
from . import textmetrics, trainer as trainer_mod, vocabulary as vocab_mod
from .errors import DataError, UsageError
from .manifest import write_manifest


def _read_jsonl(path: str | Path) -> list[dict]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
    return rows


def _write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def build_vocab(corpus_path: str, out_path: str) -> dict:
    t0 = time.perf_counter()
    records = vocab_mod.read_corpus(corpus_path)
    vocab = vocab_mod.build_vocabulary(records)
    vocab_mod.save_vocabulary(vocab, out_path)
    manifest = write_manifest(
        Path(out_path).parent, "build-vocab",
        config={}, inputs={"corpus": corpus_path}, outputs={"vocabulary": out_path},
        started_at=t0,
    )
    return {"vocab_size": vocab.size, "vocabulary": str(out_path), "manifest": manifest}


def make_targets(corpus_path: str, vocab_path: str, out_path: str) -> dict:
    t0 = time.perf_counter()
    records = vocab_mod.read_corpus(corpus_path)
    vocab = vocab_mod.load_vocabulary(vocab_path)
    rows = []
    active_total = 0
    empty = 0
    for rec in records:
        target = vocab_mod.encode_record(rec, vocab)
        active_total += target.active_count
        empty += int(target.is_empty)
        rows.append({
            "id": rec.id,
            "split": rec.split,
            "indices": [int(i) for i in target.active_indices],
            "active_count": target.active_count,
        })
    _write_jsonl(out_path, rows)
    manifest = write_manifest(
        Path(out_path).parent, "make-targets",
        config={"vocab_size": vocab.size},
        inputs={"corpus": corpus_path, "vocabulary": vocab_path},
        outputs={"targets": out_path}, started_at=t0,
    )
    return {
        "n_records": len(rows),
        "mean_active": active_total / max(len(rows), 1),
        "n_empty": empty,
        "targets": str(out_path),
        "manifest": manifest,
    }


def synth(cfg: datagen_mod.SynthConfig, out_dir: str) -> dict:
    t0 = time.perf_counter()
    paths = datagen_mod.write_synth_dataset(cfg, out_dir)
    manifest = write_manifest(
        out_dir, "synth", config=asdict(cfg), inputs={},
        outputs={k: v for k, v in paths.items() if isinstance(v, str)},
        seeds={"dataset": cfg.seed}, started_at=t0, prng=trainer_mod.PRNG_ALGORITHM,
    )
    return {**paths, "manifest": manifest}


def _load_samples(
    corpus_path: str, embeddings_path: str, vocab: vocab_mod.Vocabulary
) -> list[trainer_mod.Sample]:
    """Join corpus records with embedding rows by sample id."""
    records = {r.id: r for r in vocab_mod.read_corpus(corpus_path)}
    ids, matrix = embedio.read_sample_embeddings(embeddings_path)
    missing = [i for i in ids if i not in records]
    if missing:
        raise DataError(f"{len(missing)} embedding ids missing from corpus (first: {missing[0]})")
    samples = []
    for row, sid in enumerate(ids):
        rec = records[sid]
        samples.append(trainer_mod.Sample(
            id=sid, x=matrix[row], target=vocab_mod.encode_record(rec, vocab),
            subject=rec.subject, split=rec.split,
        ))
    return samples


def train(
    corpus_path: str,
    embeddings_path: str,
    vocab_path: str,
    vocab_emb_path: str,
    config: trainer_mod.TrainConfig,
    out_dir: str,
) -> dict:
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab = vocab_mod.load_vocabulary(vocab_path)
    emb = embedio.read_embeddings(vocab_emb_path)
    vcb = vocab_mod.load_vocab_embeddings(vocab_emb_path, vocab, expected_dim=emb.shape[1])
    samples = _load_samples(corpus_path, embeddings_path, vocab)
    ckpt_path = out / f"refiner_{config.loss_variant}.ckpt"
    params, report = trainer_mod.fit(samples, vcb.matrix, config, checkpoint_path=ckpt_path)
    report_path = out / f"train_report_{config.loss_variant}.json"
    report.write(report_path)
    manifest = write_manifest(
        out, "train", config=asdict(config),
        inputs={"corpus": corpus_path, "embeddings": embeddings_path,
                "vocabulary": vocab_path, "vocab_embeddings": vocab_emb_path},
        outputs={"checkpoint": str(ckpt_path), "report": str(report_path)},
        seeds={"train": config.seed}, started_at=t0, prng=trainer_mod.PRNG_ALGORITHM,
    )
    last = report.epochs[-1]
    return {
        "checkpoint": str(ckpt_path),
        "report": str(report_path),
        "manifest": manifest,
        "param_count": refiner.param_count(params),
        "final_train_loss": last.train_loss,
        "final_val_precision": last.val_precision,
        "final_val_recall": last.val_recall,
        "epochs": config.epochs,
    }


def gradcheck(seeds: int, seed_base: int = 0, h: float = gradcheck_mod.DEFAULT_H,
              tolerance: float = 1e-4, out_dir: Optional[str] = None) -> dict:
    t0 = time.perf_counter()
    result = gradcheck_mod.run_gradcheck(range(seed_base, seed_base + seeds),
                                         h=h, tolerance=tolerance)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report_path = out / "gradcheck.json"
        with open(report_path, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, sort_keys=True)
            fh.write("\n")
        result["report"] = str(report_path)
        result["manifest"] = write_manifest(
            out, "gradcheck",
            config={"seeds": seeds, "seed_base": seed_base, "h": h, "tolerance": tolerance},
            inputs={}, outputs={"report": str(report_path)}, started_at=t0,
        )
    return result


def retrieve(
    embeddings_path: str,
    vocab_path: str,
    vocab_emb_path: str,
    corpus_path: str,
    out_path: str,
    checkpoint_path: Optional[str] = None,
    split: str = "test",
    k: int = retrieval.DEFAULT_TOP_K,
) -> dict:
    """Write one bag-of-words row per sample of the chosen split.

    With a checkpoint the refined logits are used; without one the naive
    zero-shot baseline is.
    """
    t0 = time.perf_counter()
    vocab = vocab_mod.load_vocabulary(vocab_path)
    emb = embedio.read_embeddings(vocab_emb_path)
    vcb = vocab_mod.load_vocab_embeddings(vocab_emb_path, vocab, expected_dim=emb.shape[1])
    samples = _load_samples(corpus_path, embeddings_path, vocab)
    records = {r.id: r for r in vocab_mod.read_corpus(corpus_path)}
    chosen = [s for s in samples if split == "all" or s.split == split]
    if not chosen:
        raise DataError(f"no samples in split {split!r}")

    params = None
    loss_variant = "naive"
    if checkpoint_path:
        params, meta = refiner.load_checkpoint_with_meta(checkpoint_path)
        loss_variant = meta.loss_variant

    rows = []
    for start in range(0, len(chosen), 512):
        batch = chosen[start:start + 512]
        x = np.stack([s.x for s in batch])
        if params is None:
            logits = np.stack([retrieval.naive_logits(s.x, vcb.matrix) for s in batch])
        else:
            _, logits, _ = refiner.forward_batch(params, x, vcb.matrix)
        for i, s in enumerate(batch):
            bow = retrieval.top_k_bow(logits[i], vocab, k=k)
            rec = records[s.id]
            rows.append({
                "id": s.id,
                "subject": s.subject,
                "split": s.split,
                "object_label": rec.object_label,
                "object_confidence": rec.object_confidence if rec.object_confidence is not None else 1.0,
                "loss_variant": loss_variant,
                "k": k,
                "bow": bow.to_json(),
            })
    _write_jsonl(out_path, rows)
    manifest = write_manifest(
        Path(out_path).parent, "retrieve",
        config={"split": split, "k": k, "loss_variant": loss_variant},
        inputs={"embeddings": embeddings_path, "vocabulary": vocab_path,
                "vocab_embeddings": vocab_emb_path, "corpus": corpus_path,
                **({"checkpoint": checkpoint_path} if checkpoint_path else {})},
        outputs={"bow": out_path}, started_at=t0,
    )
    return {"n_samples": len(rows), "bow": str(out_path), "loss_variant": loss_variant,
            "manifest": manifest}


def prompt(bow_path: str, out_path: str, variant: str = "both") -> dict:
    if variant not in ("with_obj", "without_obj", "both"):
        raise UsageError(f"unknown prompt variant {variant!r}")
    t0 = time.perf_counter()
    rows_in = _read_jsonl(bow_path)
    rows = []
    for row in rows_in:
        bow = retrieval.BagOfWords.from_json(row["bow"])
        variants = ("with_obj", "without_obj") if variant == "both" else (variant,)
        for var in variants:
            if var == "with_obj":
                text = prompting.render_prompt_with_obj(prompting.PromptInput(
                    object_label=row["object_label"],
                    object_confidence=float(row["object_confidence"]),
                    bow=bow,
                ))
            else:
                text = prompting.render_prompt_without_obj(bow)
            rows.append({
                "id": row["id"],
                "subject": row.get("subject"),
                "prompt_variant": var,
                "loss_variant": row.get("loss_variant", "naive"),
                "prompt": text,
            })
    _write_jsonl(out_path, rows)
    manifest = write_manifest(
        Path(out_path).parent, "prompt", config={"variant": variant},
        inputs={"bow": bow_path}, outputs={"prompts": out_path}, started_at=t0,
    )
    return {"n_prompts": len(rows), "prompts": str(out_path), "manifest": manifest}


def generate(
    prompts_path: str,
    out_path: str,
    cfg: prompting.LLMConfig,
    embeddings_path: Optional[str] = None,
    checkpoint_path: Optional[str] = None,
    mock: bool = False,
    privacy_check: bool = True,
) -> dict:
    """Send every prompt to the chat-completion endpoint and persist captions.

    The privacy gate is mandatory: disabling it refuses to run. When sample
    embeddings (and optionally a checkpoint) are provided, the per-sample
    raw embedding and refined latent are scanned for in every outbound
    payload.
    """
    if not privacy_check:
        raise UsageError("generate refuses to run with the privacy check disabled")
    t0 = time.perf_counter()
    rows_in = _read_jsonl(prompts_path)

    x_by_id: dict[str, np.ndarray] = {}
    z_by_id: dict[str, np.ndarray] = {}
    if embeddings_path:
        ids, matrix = embedio.read_sample_embeddings(embeddings_path)
        x_by_id = {sid: matrix[i] for i, sid in enumerate(ids)}
        if checkpoint_path:
            params = refiner.load_checkpoint(checkpoint_path)
            z, _ = refiner.refine_batch(params, matrix)
            z_by_id = {sid: z[i] for i, sid in enumerate(ids)}

    transport = prompting.mock_transport() if mock else None

    def run_one(row: dict) -> dict:
        caption = prompting.generate_caption(
            row["prompt"], cfg, transport=transport,
            privacy_x=x_by_id.get(row["id"]), privacy_z=z_by_id.get(row["id"]),
        )
        return {
            "id": row["id"],
            "prompt_variant": row["prompt_variant"],
            "loss_variant": row.get("loss_variant", "naive"),
            "prompt": row["prompt"],
            "caption": caption.text,
            "word_count": caption.word_count,
            "length_ok": caption.length_ok,
            "model": caption.model,
        }

    with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
        rows = list(pool.map(run_one, rows_in))
    _write_jsonl(out_path, rows)
    manifest = write_manifest(
        Path(out_path).parent, "generate",
        config={"model": cfg.model, "endpoint": cfg.endpoint_url,
                "temperature": cfg.temperature, "mock": mock},
        inputs={"prompts": prompts_path,
                **({"embeddings": embeddings_path} if embeddings_path else {}),
                **({"checkpoint": checkpoint_path} if checkpoint_path else {})},
        outputs={"captions": out_path}, started_at=t0,
    )
    n_len_ok = sum(1 for r in rows if r["length_ok"])
    return {"n_captions": len(rows), "n_length_ok": n_len_ok,
            "captions": str(out_path), "manifest": manifest}


def evaluate_retrieval(
    embeddings_path: str,
    vocab_path: str,
    vocab_emb_path: str,
    corpus_path: str,
    out_path: str,
    checkpoint_path: Optional[str] = None,
    split: str = "test",
    k: int = retrieval.DEFAULT_TOP_K,
) -> dict:
    """Precision/recall@k of the naive baseline and, with a checkpoint, the
    refined logits, per subject and overall."""
    t0 = time.perf_counter()
    vocab = vocab_mod.load_vocabulary(vocab_path)
    emb = embedio.read_embeddings(vocab_emb_path)
    vcb = vocab_mod.load_vocab_embeddings(vocab_emb_path, vocab, expected_dim=emb.shape[1])
    samples = _load_samples(corpus_path, embeddings_path, vocab)
    chosen = [s for s in samples if split == "all" or s.split == split]
    if not chosen:
        raise DataError(f"no samples in split {split!r}")
    result: dict = {"split": split, "k": k,
                    "naive": trainer_mod.evaluate(chosen, vcb.matrix, None, k=k)}
    if checkpoint_path:
        params, meta = refiner.load_checkpoint_with_meta(checkpoint_path)
        result["refined"] = trainer_mod.evaluate(chosen, vcb.matrix, params, k=k)
        result["loss_variant"] = meta.loss_variant
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    manifest = write_manifest(
        Path(out_path).parent, "evaluate",
        config={"split": split, "k": k},
        inputs={"embeddings": embeddings_path, "vocabulary": vocab_path,
                "vocab_embeddings": vocab_emb_path, "corpus": corpus_path,
                **({"checkpoint": checkpoint_path} if checkpoint_path else {})},
        outputs={"evaluation": out_path}, started_at=t0,
    )
    return {**result, "evaluation": str(out_path), "manifest": manifest}


def report(captions_path: str, corpus_path: str, out_dir: str) -> dict:
    """Caption quality metrics against corpus references, per row and
    aggregated by (loss variant, decoder, prompt variant) and by subject."""
    t0 = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    captions = _read_jsonl(captions_path)
    if not captions:
        raise DataError(f"{captions_path}: no caption rows")
    records = {r.id: r for r in vocab_mod.read_corpus(corpus_path)}
    rows = []
    for row in captions:
        rec = records.get(row["id"])
        if rec is None:
            raise DataError(f"caption id {row['id']!r} not present in corpus")
        variant = f"{row.get('loss_variant', 'naive')}+{row.get('model', '?')}+{row['prompt_variant']}"
        rows.append(textmetrics.score_pair(
            sample_id=row["id"], subject=rec.subject, variant=variant,
            candidate=row["caption"], reference=rec.caption,
        ))
    rows_path = out / "results.csv"
    textmetrics.write_rows_csv(rows, rows_path)
    by_variant = textmetrics.aggregate(rows, group_by=("variant",))
    by_subject = textmetrics.aggregate(rows, group_by=("subject",))
    agg_csv = out / "aggregate.csv"
    agg_json = out / "aggregate.json"
    textmetrics.write_aggregate(by_variant, agg_csv, agg_json)
    subj_csv = out / "by_subject.csv"
    textmetrics.write_aggregate(by_subject, subj_csv, None)
    manifest = write_manifest(
        out, "report", config={},
        inputs={"captions": captions_path, "corpus": corpus_path},
        outputs={"results": str(rows_path), "aggregate_csv": str(agg_csv),
                 "aggregate_json": str(agg_json), "by_subject": str(subj_csv)},
        started_at=t0,
    )
    return {"n_rows": len(rows), "results": str(rows_path), "aggregate": str(agg_csv),
            "by_subject": str(subj_csv), "manifest": manifest,
            "overall": by_variant[-1]}
