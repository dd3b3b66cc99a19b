"""Pydantic request/response models for the HTTP API.

Paths in requests are interpreted on the machine running the service; the
default deployment runs the service in-process with the CLI, so they are
ordinary local paths.
"""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class BuildVocabRequest(BaseModel):
    corpus: str
    out: str


class BuildVocabResponse(BaseModel):
    vocab_size: int
    vocabulary: str
    manifest: str


class MakeTargetsRequest(BaseModel):
    corpus: str
    vocabulary: str
    out: str


class MakeTargetsResponse(BaseModel):
    n_records: int
    mean_active: float
    n_empty: int
    targets: str
    manifest: str


class SynthRequest(BaseModel):
    v: int = Field(gt=0)
    n: int = Field(gt=0)
    out_dir: str
    dim: int = 512
    active: int = 5
    noise_sigma: float = 1.0
    distractor_rate: Optional[float] = None  # None: generator default
    seed: int = 0
    subjects: int = 6


class SynthResponse(BaseModel):
    vocabulary: str
    vocab_embeddings: str
    sample_embeddings: str
    sample_ids: str
    corpus: str
    n_samples: int
    v: int
    dim: int
    manifest: str


class TrainRequest(BaseModel):
    corpus: str
    embeddings: str
    vocabulary: str
    vocab_embeddings: str
    out_dir: str
    loss: str = "focal"
    lr_max: float = 1e-4
    weight_decay: float = 1e-2
    epochs: Optional[int] = None
    batch_size: int = 64
    seed: int = 0
    eta_min: float = 0.0
    decay_norms_and_biases: bool = True
    top_k: int = 15


class TrainResponse(BaseModel):
    checkpoint: str
    report: str
    manifest: str
    param_count: int
    final_train_loss: float
    final_val_precision: float
    final_val_recall: float
    epochs: int


class GradcheckRequest(BaseModel):
    seeds: int = 20
    seed_base: int = 0
    h: float = 1e-3
    tolerance: float = 1e-4
    out_dir: Optional[str] = None


class GradcheckResponse(BaseModel):
    tolerance: float
    max_rel_error: dict[str, float]
    worst_block: dict[str, str]
    passed: bool
    report: Optional[str] = None
    manifest: Optional[str] = None


class RetrieveRequest(BaseModel):
    embeddings: str
    vocabulary: str
    vocab_embeddings: str
    corpus: str
    out: str
    checkpoint: Optional[str] = None  # None: naive zero-shot baseline
    split: str = "test"
    k: int = 15


class RetrieveResponse(BaseModel):
    n_samples: int
    bow: str
    loss_variant: str
    manifest: str


class PromptRequest(BaseModel):
    bow: str
    out: str
    variant: str = "both"


class PromptResponse(BaseModel):
    n_prompts: int
    prompts: str
    manifest: str


class GenerateRequest(BaseModel):
    prompts: str
    out: str
    model: str
    endpoint_url: str = ""
    mock: bool = False
    temperature: float = 0.2
    allow_temperature_override: bool = False
    max_retries: int = 3
    timeout_s: float = 30.0
    api_key_env: str = "EMBOW_API_KEY"
    max_concurrency: int = 4
    embeddings: Optional[str] = None
    checkpoint: Optional[str] = None
    privacy_check: bool = True


class GenerateResponse(BaseModel):
    n_captions: int
    n_length_ok: int
    captions: str
    manifest: str


class EvaluateRequest(BaseModel):
    embeddings: str
    vocabulary: str
    vocab_embeddings: str
    corpus: str
    out: str
    checkpoint: Optional[str] = None
    split: str = "test"
    k: int = 15


class ReportRequest(BaseModel):
    captions: str
    corpus: str
    out_dir: str


class ReportResponse(BaseModel):
    n_rows: int
    results: str
    aggregate: str
    by_subject: str
    manifest: str
    overall: dict
