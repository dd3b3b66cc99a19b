import json
import warnings

import pytest

with warnings.catch_warnings():
    warnings.simplefilter("ignore", DeprecationWarning)
    from starlette.testclient import TestClient

from embow.service import create_app


@pytest.fixture(scope="module")
def client():
    with TestClient(create_app(), raise_server_exceptions=False) as c:
        yield c


@pytest.fixture(scope="module")
def dataset(client, tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    resp = client.post("/v1/synth", json={
        "v": 24, "n": 60, "dim": 12, "active": 3, "noise_sigma": 0.3,
        "seed": 5, "out_dir": str(out),
    })
    assert resp.status_code == 200, resp.text
    return resp.json()


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok" and body["version"]


def test_synth_outputs_exist(dataset):
    for key in ("vocabulary", "vocab_embeddings", "sample_embeddings", "corpus", "manifest"):
        assert dataset[key]


def test_build_vocab_and_targets(client, dataset, tmp_path):
    vocab_out = tmp_path / "vocab.json"
    resp = client.post("/v1/build-vocab", json={
        "corpus": dataset["corpus"], "out": str(vocab_out)})
    assert resp.status_code == 200
    assert resp.json()["vocab_size"] >= 1

    targets_out = tmp_path / "targets.jsonl"
    resp = client.post("/v1/make-targets", json={
        "corpus": dataset["corpus"], "vocabulary": dataset["vocabulary"],
        "out": str(targets_out)})
    assert resp.status_code == 200
    body = resp.json()
    assert body["n_records"] == 60
    assert body["mean_active"] == pytest.approx(3.0)


def test_train_retrieve_prompt_generate_evaluate_report(client, dataset, tmp_path):
    resp = client.post("/v1/train", json={
        "corpus": dataset["corpus"], "embeddings": dataset["sample_embeddings"],
        "vocabulary": dataset["vocabulary"], "vocab_embeddings": dataset["vocab_embeddings"],
        "out_dir": str(tmp_path), "loss": "focal", "epochs": 2, "batch_size": 16,
        "seed": 3,
    })
    assert resp.status_code == 200, resp.text
    train = resp.json()
    assert train["param_count"] == 12 * 24 + 24 + 24 + 24 + 24 * 12 + 12 + 1

    bow_out = tmp_path / "bow.jsonl"
    resp = client.post("/v1/retrieve", json={
        "embeddings": dataset["sample_embeddings"], "vocabulary": dataset["vocabulary"],
        "vocab_embeddings": dataset["vocab_embeddings"], "corpus": dataset["corpus"],
        "out": str(bow_out), "checkpoint": train["checkpoint"], "split": "test", "k": 5,
    })
    assert resp.status_code == 200, resp.text
    assert resp.json()["loss_variant"] == "focal"
    rows = [json.loads(l) for l in open(bow_out)]
    assert rows and all(len(r["bow"]) == 5 for r in rows)

    prompts_out = tmp_path / "prompts.jsonl"
    resp = client.post("/v1/prompt", json={
        "bow": str(bow_out), "out": str(prompts_out), "variant": "both"})
    assert resp.status_code == 200
    assert resp.json()["n_prompts"] == 2 * len(rows)

    captions_out = tmp_path / "captions.jsonl"
    resp = client.post("/v1/generate", json={
        "prompts": str(prompts_out), "out": str(captions_out), "model": "mock-model",
        "mock": True, "embeddings": dataset["sample_embeddings"],
        "checkpoint": train["checkpoint"],
    })
    assert resp.status_code == 200, resp.text
    assert resp.json()["n_captions"] == 2 * len(rows)

    eval_out = tmp_path / "evaluation.json"
    resp = client.post("/v1/evaluate", json={
        "embeddings": dataset["sample_embeddings"], "vocabulary": dataset["vocabulary"],
        "vocab_embeddings": dataset["vocab_embeddings"], "corpus": dataset["corpus"],
        "out": str(eval_out), "checkpoint": train["checkpoint"], "split": "test", "k": 5,
    })
    assert resp.status_code == 200, resp.text
    body = resp.json()
    assert "naive" in body and "refined" in body

    resp = client.post("/v1/report", json={
        "captions": str(captions_out), "corpus": dataset["corpus"],
        "out_dir": str(tmp_path / "report")})
    assert resp.status_code == 200, resp.text
    assert resp.json()["n_rows"] == 2 * len(rows)


def test_gradcheck_endpoint(client):
    resp = client.post("/v1/gradcheck", json={"seeds": 2})
    assert resp.status_code == 200
    body = resp.json()
    assert body["passed"] is True
    assert set(body["max_rel_error"]) == {"bce", "contrastive", "focal"}


def test_missing_file_maps_to_data_error(client, tmp_path):
    resp = client.post("/v1/build-vocab", json={
        "corpus": str(tmp_path / "nope.jsonl"), "out": str(tmp_path / "v.json")})
    assert resp.status_code == 422
    assert resp.json()["detail"]["kind"] == "data"


def test_usage_error_maps_to_400(client, dataset, tmp_path):
    resp = client.post("/v1/prompt", json={
        "bow": dataset["corpus"], "out": str(tmp_path / "p.jsonl"),
        "variant": "sideways"})
    assert resp.status_code == 400
    assert resp.json()["detail"]["kind"] == "usage"


def test_request_validation_is_422_list(client):
    resp = client.post("/v1/synth", json={"v": "not-a-number"})
    assert resp.status_code == 422
    assert isinstance(resp.json()["detail"], list)


def test_generate_refuses_without_privacy_check(client, dataset, tmp_path):
    prompts = tmp_path / "p.jsonl"
    prompts.write_text(json.dumps({"id": "s1", "prompt_variant": "without_obj",
                                   "prompt": "hello"}) + "\n")
    resp = client.post("/v1/generate", json={
        "prompts": str(prompts), "out": str(tmp_path / "c.jsonl"),
        "model": "m", "mock": True, "privacy_check": False})
    assert resp.status_code == 400
    assert "privacy" in resp.json()["detail"]["message"]
