"""Similarity refiner: a two-layer MLP mapping stage-1 embeddings to a latent
aligned with the vocabulary embedding rows.

forward: z = W2 . relu(layer_norm(W1 . x + b1)) + b2, logits_j = cos(z, E_j).
The vocabulary matrix E is frozen; it never receives a gradient. The learned
sigmoid scale is carried here because it is trained jointly with the MLP (it
is consumed by the sigmoid-based losses).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import numerics
from .errors import (
    MagicMismatchError,
    NonFiniteError,
    TruncatedFileError,
    UsageError,
    VersionMismatchError,
)

CKPT_MAGIC = b"SENSECKPT1"
CKPT_VERSION = 1

# loss-variant provenance tag stored in checkpoints
LOSS_TAGS = {"none": 0, "bce": 1, "contrastive": 2, "focal": 3}
TAG_LOSSES = {v: k for k, v in LOSS_TAGS.items()}

DEFAULT_DIM = 512
DEFAULT_HIDDEN = 1024
INIT_SIGMOID_SCALE = 10.0

# Checkpoint block order. Never reorder: the file format depends on it.
FIELD_ORDER = ("w1", "b1", "ln_gamma", "ln_beta", "w2", "b2", "sigmoid_scale")


@dataclass
class RefinerParams:
    """All trainable tensors. sigmoid_scale is a 1-element array so every
    block can be treated uniformly by the optimizer."""

    w1: np.ndarray
    b1: np.ndarray
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    sigmoid_scale: np.ndarray

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in FIELD_ORDER]

    @property
    def scale(self) -> float:
        return float(self.sigmoid_scale[0])

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def copy(self) -> "RefinerParams":
        return RefinerParams(**{name: arr.copy() for name, arr in self.blocks()})

    def validate(self) -> None:
        hidden, dim = self.w1.shape
        expected = {
            "b1": (hidden,),
            "ln_gamma": (hidden,),
            "ln_beta": (hidden,),
            "w2": (dim, hidden),
            "b2": (dim,),
            "sigmoid_scale": (1,),
        }
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise UsageError(f"refiner block {name} has shape {got}, expected {shape}")
        for name, arr in self.blocks():
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"refiner block {name} contains non-finite entries")
        if self.scale <= 0:
            raise UsageError("sigmoid_scale must be positive")


def param_count(params: RefinerParams) -> int:
    """Total trainable scalar count (E is frozen and excluded)."""
    return sum(arr.size for _, arr in params.blocks())


def init_params(
    seed: int, dim: int = DEFAULT_DIM, hidden: int = DEFAULT_HIDDEN, style: str = "identity"
) -> RefinerParams:
    """Deterministic parameter init; biases zero, layer-norm affine identity.

    style="identity" (default, requires hidden == 2*dim): W1 stacks [I; -I]
    and W2 is [I, -I], so relu(layer_norm(W1 x)) splits x into its positive
    and negative parts and W2 reassembles them. The fresh refiner then maps
    z onto x's direction exactly and starts from the naive zero-shot
    baseline instead of from noise; training only has to learn a correction.
    Random init put training into the all-negative collapse basin on sparse
    targets before it ever found signal.

    style="he": fan-in He-uniform, the conventional alternative.

    With the default shapes the total trainable count is
    524288 + 1024 + 1024 + 1024 + 524288 + 512 + 1 = 1,052,161.
    """
    rng = np.random.default_rng(seed)
    if style == "identity":
        if hidden != 2 * dim:
            raise UsageError("identity init requires hidden == 2 * dim")
        eye = np.eye(dim, dtype=numerics.FLOAT)
        w1 = np.concatenate([eye, -eye], axis=0)
        w2 = np.concatenate([eye, -eye], axis=1)
    elif style == "he":
        a1 = np.sqrt(6.0 / dim)
        a2 = np.sqrt(6.0 / hidden)
        w1 = rng.uniform(-a1, a1, size=(hidden, dim)).astype(numerics.FLOAT)
        w2 = rng.uniform(-a2, a2, size=(dim, hidden)).astype(numerics.FLOAT)
    else:
        raise UsageError(f"unknown init style {style!r}")
    params = RefinerParams(
        w1=w1,
        b1=np.zeros(hidden, dtype=numerics.FLOAT),
        ln_gamma=np.ones(hidden, dtype=numerics.FLOAT),
        ln_beta=np.zeros(hidden, dtype=numerics.FLOAT),
        w2=w2,
        b2=np.zeros(dim, dtype=numerics.FLOAT),
        sigmoid_scale=np.full(1, INIT_SIGMOID_SCALE, dtype=numerics.FLOAT),
    )
    params.validate()
    return params


class ForwardCache(NamedTuple):
    x: np.ndarray
    ln_cache: numerics.LayerNormCache
    relu_mask: np.ndarray
    h: np.ndarray
    z_cache: numerics.NormalizeCache
    e_hat: np.ndarray


class RefinerGrads(NamedTuple):
    w1: np.ndarray
    b1: np.ndarray
    ln_gamma: np.ndarray
    ln_beta: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    sigmoid_scale: np.ndarray

    def blocks(self) -> list[tuple[str, np.ndarray]]:
        return [(name, getattr(self, name)) for name in FIELD_ORDER]


def refine_batch(params: RefinerParams, x: np.ndarray) -> tuple[np.ndarray, dict]:
    """The MLP alone: x -> z, plus the intermediates needed for backward."""
    x = np.atleast_2d(np.asarray(x))
    if x.shape[1] != params.dim:
        raise UsageError(f"input dim {x.shape[1]} does not match refiner dim {params.dim}")
    a1 = numerics.matmul(x, params.w1.T) + params.b1
    ln_out, ln_cache = numerics.layer_norm_rows(a1, params.ln_gamma, params.ln_beta)
    h, relu_mask = numerics.relu(ln_out)
    z = numerics.matmul(h, params.w2.T) + params.b2
    return z, {"x": x, "ln_cache": ln_cache, "relu_mask": relu_mask, "h": h}


def forward_batch(
    params: RefinerParams, x: np.ndarray, e: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Refine a batch of row vectors and score them against the vocabulary.

    Returns (z, logits, cache) with z of shape (B, dim) and logits (B, V).
    A degenerate (near-zero) refined latent is surfaced as an error rather
    than masked: a zero z is meaningless for retrieval.
    """
    z, mid = refine_batch(params, x)
    logits = numerics.cosine_logits(z, e)
    _, z_cache = numerics.l2_normalize_rows(z, what="refined latent")
    e_hat, _ = numerics.l2_normalize_rows(e, what="vocabulary embedding")
    cache = ForwardCache(x=mid["x"], ln_cache=mid["ln_cache"], relu_mask=mid["relu_mask"],
                         h=mid["h"], z_cache=z_cache, e_hat=e_hat)
    return z, logits, cache


def forward(
    params: RefinerParams, x: np.ndarray, e: np.ndarray
) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Single-sample forward: (z, logits, cache) with 1-d z and logits."""
    z, logits, cache = forward_batch(params, np.asarray(x).reshape(1, -1), e)
    return z[0], logits[0], cache


def backward_batch(
    params: RefinerParams, cache: ForwardCache, d_logits: np.ndarray,
    compute_dx: bool = True,
) -> tuple[RefinerGrads, Optional[np.ndarray]]:
    """Analytic gradients of the full forward graph.

    Returns (grads, d_x); the training loop passes compute_dx=False since it
    never consumes the input gradient. The sigmoid_scale slot is zero here:
    its gradient comes from the loss, not from the logits path. E is frozen,
    so no gradient for it exists anywhere.
    """
    d_logits = np.atleast_2d(d_logits)
    d_zh = numerics.matmul(d_logits, cache.e_hat)
    d_z = numerics.l2_normalize_rows_backward(cache.z_cache, d_zh)
    d_w2 = numerics.matmul(d_z.T, cache.h)
    d_b2 = d_z.sum(axis=0, dtype=np.float64).astype(d_z.dtype)
    d_h = numerics.matmul(d_z, params.w2)
    d_ln = numerics.relu_backward(cache.relu_mask, d_h)
    d_a1, d_gamma, d_beta = numerics.layer_norm_rows_backward(cache.ln_cache, d_ln)
    d_w1 = numerics.matmul(d_a1.T, cache.x)
    d_b1 = d_a1.sum(axis=0, dtype=np.float64).astype(d_a1.dtype)
    d_x = numerics.matmul(d_a1, params.w1) if compute_dx else None
    grads = RefinerGrads(
        w1=d_w1, b1=d_b1, ln_gamma=d_gamma, ln_beta=d_beta, w2=d_w2, b2=d_b2,
        sigmoid_scale=np.zeros(1, dtype=d_w1.dtype),
    )
    return grads, d_x


def backward(
    params: RefinerParams, cache: ForwardCache, d_logits: np.ndarray
) -> tuple[RefinerGrads, np.ndarray]:
    grads, d_x = backward_batch(params, cache, np.asarray(d_logits).reshape(1, -1))
    return grads, d_x[0]


def save_checkpoint(
    params: RefinerParams, path: str | Path, *, seed: int = 0, loss_variant: str = "none"
) -> None:
    """Versioned little-endian checkpoint; blocks in FIELD_ORDER."""
    params.validate()
    if loss_variant not in LOSS_TAGS:
        raise UsageError(f"unknown loss variant {loss_variant!r}")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", CKPT_VERSION))
        fh.write(struct.pack("<Q", seed))
        fh.write(struct.pack("<B", LOSS_TAGS[loss_variant]))
        for _, arr in params.blocks():
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            fh.write(struct.pack("<I", flat.size))
            fh.write(flat.tobytes())


class CheckpointMeta(NamedTuple):
    seed: int
    loss_variant: str
    version: int


def _read_exact(fh, n: int, what: str) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedFileError(f"checkpoint truncated while reading {what}")
    return buf


def load_checkpoint(path: str | Path) -> RefinerParams:
    params, _ = load_checkpoint_with_meta(path)
    return params


def load_checkpoint_with_meta(path: str | Path) -> tuple[RefinerParams, CheckpointMeta]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CKPT_MAGIC))
        if magic != CKPT_MAGIC:
            raise MagicMismatchError(f"{path}: expected magic {CKPT_MAGIC!r}, got {magic!r}")
        version = struct.unpack("<I", _read_exact(fh, 4, "version"))[0]
        if version != CKPT_VERSION:
            raise VersionMismatchError(f"{path}: unsupported checkpoint version {version}")
        seed = struct.unpack("<Q", _read_exact(fh, 8, "seed"))[0]
        tag = struct.unpack("<B", _read_exact(fh, 1, "loss tag"))[0]
        if tag not in TAG_LOSSES:
            raise VersionMismatchError(f"{path}: unknown loss-variant tag {tag}")
        flats = []
        for name in FIELD_ORDER:
            length = struct.unpack("<I", _read_exact(fh, 4, f"{name} length"))[0]
            data = _read_exact(fh, 4 * length, f"{name} values")
            flats.append(np.frombuffer(data, dtype="<f4").astype(numerics.FLOAT))
        if fh.read(1):
            raise TruncatedFileError(f"{path}: trailing bytes after final block")
    w1_flat, b1, ln_gamma, ln_beta, w2_flat, b2, scale = flats
    hidden = b1.size
    if hidden == 0 or w1_flat.size % hidden:
        raise TruncatedFileError(f"{path}: W1 block size {w1_flat.size} not divisible by hidden {hidden}")
    dim = w1_flat.size // hidden
    if w2_flat.size != dim * hidden or b2.size != dim or scale.size != 1:
        raise TruncatedFileError(f"{path}: inconsistent block sizes")
    params = RefinerParams(
        w1=w1_flat.reshape(hidden, dim), b1=b1, ln_gamma=ln_gamma, ln_beta=ln_beta,
        w2=w2_flat.reshape(dim, hidden), b2=b2, sigmoid_scale=scale,
    )
    params.validate()
    return params, CheckpointMeta(seed=seed, loss_variant=TAG_LOSSES[tag], version=version)
