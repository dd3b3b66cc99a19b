"""AdamW training loop with cosine-annealing learning rate.

Only the refiner's parameters are optimized; the vocabulary matrix stays
frozen. Training is deterministic for a given (dataset, config) on one
platform: shuffling uses a seeded PCG64 generator (recorded in the report)
and gradients are accumulated in a fixed order.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import losses as losses_mod
from . import numerics, refiner
from .errors import NonFiniteError, UsageError
from .vocabulary import TargetVector

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

# blocks skipped by weight decay when decay_norms_and_biases is off
NO_DECAY_BLOCKS = frozenset({"b1", "b2", "ln_gamma", "ln_beta", "sigmoid_scale"})

PRNG_ALGORITHM = "numpy-pcg64"


class Sample(NamedTuple):
    id: str
    x: np.ndarray
    target: TargetVector
    subject: int
    split: str


@dataclass
class TrainConfig:
    loss_variant: str = "focal"
    lr_max: float = 1e-4
    weight_decay: float = 1e-2
    epochs: Optional[int] = None  # 50, or 100 for the contrastive variant
    batch_size: int = 64
    seed: int = 0
    eta_min: float = 0.0
    hidden: Optional[int] = None  # defaults to 2 * embedding dim
    decay_norms_and_biases: bool = True
    top_k: int = 15

    def __post_init__(self):
        if self.loss_variant not in losses_mod.LOSS_NAMES:
            raise UsageError(f"unknown loss variant {self.loss_variant!r}")
        if self.epochs is None:
            self.epochs = 100 if self.loss_variant == "contrastive" else 50
        if self.lr_max < 0:
            raise UsageError("lr_max must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1:
            raise UsageError("epochs and batch_size must be >= 1")


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: refiner.RefinerParams) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.blocks()},
            v={name: np.zeros_like(arr) for name, arr in params.blocks()},
        )


def adamw_step(
    params: refiner.RefinerParams,
    grads: refiner.RefinerGrads,
    state: OptimizerState,
    lr: float,
    weight_decay: float,
    *,
    decay_exclude: frozenset[str] = frozenset(),
) -> tuple[refiner.RefinerParams, OptimizerState]:
    """One decoupled-weight-decay Adam update, applied in place.

    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps) - lr * wd * theta.
    """
    if lr < 0:
        raise UsageError("learning rate must be nonnegative")
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1**state.t
    bc2 = 1.0 - ADAM_BETA2**state.t
    for name, theta in params.blocks():
        g = getattr(grads, name)
        if g.shape != theta.shape:
            raise UsageError(f"gradient for {name} has shape {g.shape}, expected {theta.shape}")
        g64 = np.asarray(g, dtype=np.float64)
        m = ADAM_BETA1 * np.asarray(state.m[name], dtype=np.float64) + (1 - ADAM_BETA1) * g64
        v = ADAM_BETA2 * np.asarray(state.v[name], dtype=np.float64) + (1 - ADAM_BETA2) * g64**2
        state.m[name][...] = m.astype(state.m[name].dtype)
        state.v[name][...] = v.astype(state.v[name].dtype)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
        if weight_decay and name not in decay_exclude:
            update = update + lr * weight_decay * np.asarray(theta, dtype=np.float64)
        theta[...] = (np.asarray(theta, dtype=np.float64) - update).astype(theta.dtype)
    return params, state


def cosine_lr(epoch: int, total_epochs: int, lr_max: float, eta_min: float = 0.0) -> float:
    """Cosine-annealed learning rate, stepped once per epoch."""
    if not 0 <= epoch <= total_epochs:
        raise UsageError(f"epoch {epoch} outside [0, {total_epochs}]")
    return eta_min + 0.5 * (lr_max - eta_min) * (1.0 + np.cos(np.pi * epoch / total_epochs))


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_precision: float
    val_recall: float


@dataclass
class TrainReport:
    config: dict
    epochs: list[EpochStats] = field(default_factory=list)
    wall_clock_s: float = 0.0
    checkpoint_path: str = ""
    prng: str = PRNG_ALGORITHM

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "prng": self.prng,
            "epochs": [asdict(e) for e in self.epochs],
            "wall_clock_s": self.wall_clock_s,
            "checkpoint_path": self.checkpoint_path,
        }

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _stack_targets(samples: list[Sample], v: int) -> np.ndarray:
    out = np.zeros((len(samples), v), dtype=np.float32)
    for i, s in enumerate(samples):
        out[i] = s.target.bits
    return out


def top_k_indices(logits: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest logits; ties broken by ascending index."""
    return np.argsort(-np.asarray(logits, dtype=np.float64), kind="stable")[:k]


def evaluate(
    samples: list[Sample],
    e: np.ndarray,
    params: Optional[refiner.RefinerParams] = None,
    k: int = 15,
    chunk: int = 512,
) -> dict:
    """Retrieval quality of refined (or, with params=None, naive) logits.

    precision@k, recall@k and mean positive rank, overall and per subject.
    Samples without positives are excluded from the aggregates.
    """
    if not samples:
        raise UsageError("evaluate requires a non-empty split")
    groups: dict[str, list[tuple[float, float, float]]] = {}
    skipped = 0
    for start in range(0, len(samples), chunk):
        batch = samples[start:start + chunk]
        x = np.stack([s.x for s in batch])
        if params is None:
            logits = numerics.cosine_logits(x, e)
        else:
            _, logits, _ = refiner.forward_batch(params, x, e)
        order = np.argsort(-np.asarray(logits, dtype=np.float64), axis=1, kind="stable")
        ranks = np.empty_like(order)
        rows = np.arange(len(batch))[:, None]
        ranks[rows, order] = np.arange(logits.shape[1])[None, :] + 1
        for i, s in enumerate(batch):
            positives = s.target.active_indices
            if positives.size == 0:
                skipped += 1
                continue
            top = set(int(j) for j in order[i, :k])
            hits = len(top & set(int(j) for j in positives))
            entry = (hits / k, hits / positives.size, float(ranks[i, positives].mean()))
            groups.setdefault("overall", []).append(entry)
            groups.setdefault(f"subject:{s.subject}", []).append(entry)

    def summarize(entries: list[tuple[float, float, float]]) -> dict:
        arr = np.asarray(entries, dtype=np.float64)
        return {
            "precision_at_k": float(arr[:, 0].mean()),
            "recall_at_k": float(arr[:, 1].mean()),
            "mean_rank": float(arr[:, 2].mean()),
            "n_samples": len(entries),
        }

    by_subject = {
        key.split(":", 1)[1]: summarize(v)
        for key, v in groups.items() if key.startswith("subject:")
    }
    return {
        "k": k,
        "overall": summarize(groups.get("overall", [])) if "overall" in groups else None,
        "by_subject": by_subject,
        "n_skipped_no_positives": skipped,
    }


def fit(
    samples: list[Sample],
    e: np.ndarray,
    config: TrainConfig,
    checkpoint_path: Optional[str | Path] = None,
) -> tuple[refiner.RefinerParams, TrainReport]:
    """Train a fresh refiner on the train split, evaluating val every epoch.

    Never branches on subject id. Aborts with a diagnostic if the loss or
    logits go non-finite.
    """
    train = [s for s in samples if s.split == "train"]
    val = [s for s in samples if s.split == "val"]
    if not train:
        raise UsageError("fit requires a non-empty train split")
    if not val:
        raise UsageError("fit requires a non-empty val split for per-epoch evaluation")

    dim = e.shape[1]
    hidden = config.hidden or 2 * dim
    params = refiner.init_params(config.seed, dim=dim, hidden=hidden)
    state = OptimizerState.for_params(params)
    rng = np.random.default_rng(config.seed)

    x_train = np.stack([s.x for s in train])
    y_train = _stack_targets(train, e.shape[0])
    decay_exclude = frozenset() if config.decay_norms_and_biases else NO_DECAY_BLOCKS

    report = TrainReport(config=asdict(config))
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr_max, config.eta_min)
        perm = rng.permutation(len(train))
        loss_sum, loss_n = 0.0, 0
        for start in range(0, len(train), config.batch_size):
            idx = perm[start:start + config.batch_size]
            xb, yb = x_train[idx], y_train[idx]
            if not np.all(np.isfinite(xb)):
                # relu would silently zero a NaN row; fail loudly instead
                raise NonFiniteError(
                    f"non-finite input embedding at epoch {epoch}, "
                    f"batch {start // config.batch_size}; aborting"
                )
            _, logits, cache = refiner.forward_batch(params, xb, e)
            if not np.all(np.isfinite(logits)):
                raise NonFiniteError(
                    f"non-finite logits at epoch {epoch}, batch {start // config.batch_size}; aborting"
                )
            loss = losses_mod.compute_loss(config.loss_variant, logits, params.scale, yb)
            if loss is None:
                continue  # contrastive batch with no positives anywhere
            if not np.isfinite(loss.value):
                raise NonFiniteError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}; aborting"
                )
            grads, _ = refiner.backward_batch(params, cache, loss.d_logits, compute_dx=False)
            grads.sigmoid_scale[0] = loss.d_scale
            adamw_step(params, grads, state, lr, config.weight_decay,
                       decay_exclude=decay_exclude)
            loss_sum += loss.value * len(idx)
            loss_n += len(idx)
        val_metrics = evaluate(val, e, params, k=config.top_k)
        report.epochs.append(EpochStats(
            epoch=epoch,
            lr=float(lr),
            train_loss=loss_sum / max(loss_n, 1),
            val_precision=val_metrics["overall"]["precision_at_k"],
            val_recall=val_metrics["overall"]["recall_at_k"],
        ))
    report.wall_clock_s = time.perf_counter() - t0

    if checkpoint_path is not None:
        refiner.save_checkpoint(params, checkpoint_path, seed=config.seed,
                                loss_variant=config.loss_variant)
        report.checkpoint_path = str(checkpoint_path)
    return params, report
