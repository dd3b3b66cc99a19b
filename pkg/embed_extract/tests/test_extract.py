import json

import numpy as np
import pytest

from embed_extract.cli import run
from embed_extract.encoders import EncoderError, HashedNgramEncoder, make_encoder
from embed_extract.extract import (
    ExtractionJob,
    extract_vocab_embeddings,
    read_senseemb1,
)

TOKENS = ["piano", "black", "room", "grand", "floor",
          "mushroom", "tent", "field", "pumpkin", "guitar"]


@pytest.fixture
def vocab_file(tmp_path):
    path = tmp_path / "vocab.json"
    path.write_text(json.dumps(TOKENS))
    return path


def offline_job(vocab_file, tmp_path, **kw):
    base = dict(vocabulary_path=str(vocab_file), out_path=str(tmp_path / "emb.semb"),
                model_id="hashed-ngram")
    base.update(kw)
    return ExtractionJob(**base)


class TestHashedNgramEncoder:
    def test_deterministic(self):
        enc = HashedNgramEncoder(dim=64, seed=1)
        a = enc.encode(["piano", "guitar"])
        b = enc.encode(["piano", "guitar"])
        np.testing.assert_array_equal(a, b)

    def test_seed_changes_output(self):
        a = HashedNgramEncoder(dim=64, seed=1).encode(["piano"])
        b = HashedNgramEncoder(dim=64, seed=2).encode(["piano"])
        assert (a != b).any()

    def test_empty_token_rejected(self):
        with pytest.raises(EncoderError):
            HashedNgramEncoder().encode([""])

    def test_unknown_model_id(self):
        with pytest.raises(EncoderError):
            make_encoder("word2vec:whatever")


class TestExtraction:
    def test_format_round_trip(self, vocab_file, tmp_path):
        job = offline_job(vocab_file, tmp_path)
        result = extract_vocab_embeddings(job)
        assert result["rows"] == 10 and result["dim"] == 512
        matrix = read_senseemb1(job.out_path)
        assert matrix.shape == (10, 512)
        assert matrix.dtype == np.float32

    def test_rows_unit_norm(self, vocab_file, tmp_path):
        job = offline_job(vocab_file, tmp_path)
        extract_vocab_embeddings(job)
        norms = np.linalg.norm(read_senseemb1(job.out_path).astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_idempotent_rerun(self, vocab_file, tmp_path):
        job = offline_job(vocab_file, tmp_path)
        extract_vocab_embeddings(job)
        first = open(job.out_path, "rb").read()
        extract_vocab_embeddings(job)
        assert open(job.out_path, "rb").read() == first

    def test_row_order_matches_vocabulary(self, vocab_file, tmp_path):
        job = offline_job(vocab_file, tmp_path)
        extract_vocab_embeddings(job)
        matrix = read_senseemb1(job.out_path)
        enc = HashedNgramEncoder(dim=512, seed=0)
        for idx in (0, 3, 9):  # index-aligned spot checks
            expected = enc.encode([TOKENS[idx]])[0].astype(np.float64)
            expected /= np.linalg.norm(expected)
            np.testing.assert_allclose(matrix[idx], expected.astype(np.float32), atol=1e-6)

    def test_bad_vocabulary_file(self, tmp_path):
        bad = tmp_path / "vocab.json"
        bad.write_text(json.dumps({"not": "a list"}))
        with pytest.raises(ValueError):
            extract_vocab_embeddings(offline_job(bad, tmp_path))

    def test_cli_extract(self, vocab_file, tmp_path, capsys):
        out = tmp_path / "emb.semb"
        code = run(["extract-vocab", "--vocab", str(vocab_file), "--out", str(out),
                    "--model", "hashed-ngram"])
        assert code == 0
        body = json.loads(capsys.readouterr().out)
        assert body["rows"] == 10 and out.exists()


class TestCrossComponentContract:
    """The produced files must load in the decoding service with zero
    validation errors; the file format is the only coupling."""

    def test_primary_loader_accepts_output(self, vocab_file, tmp_path):
        embow_vocab = pytest.importorskip("embow.vocabulary")
        job = offline_job(vocab_file, tmp_path)
        extract_vocab_embeddings(job)
        vocab = embow_vocab.load_vocabulary(vocab_file)
        loaded = embow_vocab.load_vocab_embeddings(job.out_path, vocab, expected_dim=512)
        assert loaded.size == 10 and loaded.dim == 512
        norms = np.linalg.norm(loaded.matrix.astype(np.float64), axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-5)

    def test_lemmatized_corpus_loads_in_primary(self, tmp_path):
        embow_vocab = pytest.importorskip("embow.vocabulary")
        from embed_extract.lemmatize import lemmatize_captions

        src = tmp_path / "corpus.jsonl"
        rows = [
            {"id": "s1", "subject": 1, "split": "train",
             "caption": "A black grand piano in a living room.", "object_label": "piano"},
            {"id": "s2", "subject": 2, "split": "test",
             "caption": "mushrooms growing", "object_label": "mushroom"},
        ]
        src.write_text("".join(json.dumps(r) + "\n" for r in rows))
        out = tmp_path / "corpus_lemmas.jsonl"
        lemmatize_captions(src, out)
        records = embow_vocab.read_corpus(out)
        assert records[0].lemmas is not None
        vocab = embow_vocab.build_vocabulary(records)
        assert {"piano", "black", "grand", "room"} <= set(vocab.tokens)


@pytest.mark.skipif(
    not __import__("os").environ.get("EMBED_EXTRACT_ST_MODEL"),
    reason="no pretrained encoder available offline; set EMBED_EXTRACT_ST_MODEL to run",
)
def test_semantic_sanity_with_real_encoder(vocab_file, tmp_path):
    """Pinned once against a real vision-language text encoder: related words
    score closer than unrelated ones."""
    import os

    job = offline_job(vocab_file, tmp_path,
                      model_id=f"st:{os.environ['EMBED_EXTRACT_ST_MODEL']}")
    extract_vocab_embeddings(job)
    matrix = read_senseemb1(job.out_path).astype(np.float64)
    idx = {t: i for i, t in enumerate(TOKENS)}
    piano, guitar, mushroom = matrix[idx["piano"]], matrix[idx["guitar"]], matrix[idx["mushroom"]]
    assert piano @ guitar > piano @ mushroom
