"""FastAPI application wrapping the pipeline commands.

Domain errors map onto structured JSON bodies whose "kind" field mirrors
the CLI exit-code families: usage (400), data (422), network (502).
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__, datagen, pipeline, prompting, trainer
from ..errors import DataError, NetworkError, UsageError
from . import schemas


def _error_response(status: int, kind: str, exc: Exception) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"detail": {"kind": kind, "message": str(exc)}})


def create_app() -> FastAPI:
    app = FastAPI(
        title="embow",
        version=__version__,
        description="Embedding-to-keyword decoding, prompt rendering and caption scoring",
    )

    @app.exception_handler(UsageError)
    async def usage_handler(request: Request, exc: UsageError):
        return _error_response(400, "usage", exc)

    @app.exception_handler(DataError)
    async def data_handler(request: Request, exc: DataError):
        return _error_response(422, "data", exc)

    @app.exception_handler(FileNotFoundError)
    async def missing_file_handler(request: Request, exc: FileNotFoundError):
        return _error_response(422, "data", exc)

    @app.exception_handler(NetworkError)
    async def network_handler(request: Request, exc: NetworkError):
        return _error_response(502, "network", exc)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/v1/build-vocab", response_model=schemas.BuildVocabResponse)
    def build_vocab(req: schemas.BuildVocabRequest):
        return pipeline.build_vocab(req.corpus, req.out)

    @app.post("/v1/make-targets", response_model=schemas.MakeTargetsResponse)
    def make_targets(req: schemas.MakeTargetsRequest):
        return pipeline.make_targets(req.corpus, req.vocabulary, req.out)

    @app.post("/v1/synth", response_model=schemas.SynthResponse)
    def synth(req: schemas.SynthRequest):
        kwargs = dict(
            v=req.v, n_samples=req.n, dim=req.dim, active_per_sample=req.active,
            noise_sigma=req.noise_sigma, seed=req.seed, subjects=req.subjects,
        )
        if req.distractor_rate is not None:
            kwargs["distractor_rate"] = req.distractor_rate
        return pipeline.synth(datagen.SynthConfig(**kwargs), req.out_dir)

    @app.post("/v1/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        config = trainer.TrainConfig(
            loss_variant=req.loss, lr_max=req.lr_max, weight_decay=req.weight_decay,
            epochs=req.epochs, batch_size=req.batch_size, seed=req.seed,
            eta_min=req.eta_min, decay_norms_and_biases=req.decay_norms_and_biases,
            top_k=req.top_k,
        )
        return pipeline.train(req.corpus, req.embeddings, req.vocabulary,
                              req.vocab_embeddings, config, req.out_dir)

    @app.post("/v1/gradcheck", response_model=schemas.GradcheckResponse)
    def gradcheck(req: schemas.GradcheckRequest):
        return pipeline.gradcheck(
            seeds=req.seeds, seed_base=req.seed_base, h=req.h,
            tolerance=req.tolerance, out_dir=req.out_dir,
        )

    @app.post("/v1/retrieve", response_model=schemas.RetrieveResponse)
    def retrieve(req: schemas.RetrieveRequest):
        return pipeline.retrieve(
            req.embeddings, req.vocabulary, req.vocab_embeddings, req.corpus,
            req.out, checkpoint_path=req.checkpoint, split=req.split, k=req.k,
        )

    @app.post("/v1/prompt", response_model=schemas.PromptResponse)
    def prompt(req: schemas.PromptRequest):
        return pipeline.prompt(req.bow, req.out, variant=req.variant)

    @app.post("/v1/generate", response_model=schemas.GenerateResponse)
    def generate(req: schemas.GenerateRequest):
        cfg = prompting.LLMConfig(
            endpoint_url=req.endpoint_url or "https://localhost/v1/chat/completions",
            model=req.model, temperature=req.temperature,
            allow_temperature_override=req.allow_temperature_override,
            max_retries=req.max_retries, timeout_s=req.timeout_s,
            api_key_env=req.api_key_env, max_concurrency=req.max_concurrency,
        )
        return pipeline.generate(
            req.prompts, req.out, cfg, embeddings_path=req.embeddings,
            checkpoint_path=req.checkpoint, mock=req.mock,
            privacy_check=req.privacy_check,
        )

    @app.post("/v1/evaluate")
    def evaluate(req: schemas.EvaluateRequest):
        return pipeline.evaluate_retrieval(
            req.embeddings, req.vocabulary, req.vocab_embeddings, req.corpus,
            req.out, checkpoint_path=req.checkpoint, split=req.split, k=req.k,
        )

    @app.post("/v1/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest):
        return pipeline.report(req.captions, req.corpus, req.out_dir)

    return app
