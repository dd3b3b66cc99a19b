"""Dense linear algebra and differentiable primitives.

Every differentiable operation comes in a forward/backward pair with the
backward derived analytically; `finite_diff_grad` is the independent oracle
used to check them. Arrays are stored in 32-bit floats by default while all
reductions (dot products, means, variances, norms) accumulate in 64-bit.
Outputs follow the dtype of the primary input, so the same kernels run in
float64 when tests need exact finite-difference agreement.

Only the fixed computation graph used by the refiner and losses is covered;
this is deliberately not a general tensor library.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateInputError, NonFiniteError, UsageError

FLOAT = np.float32
LAYER_NORM_EPS = 1e-5
# Inputs with a smaller L2 norm cannot be normalized meaningfully; they are
# rejected instead of silently zeroed.
NORM_FLOOR = 1e-8


def _acc(a: np.ndarray) -> np.ndarray:
    """View/copy of `a` in the 64-bit accumulation dtype."""
    return np.asarray(a, dtype=np.float64)


def ensure_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or Inf entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with 64-bit accumulation, in the inputs' storage dtype."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise UsageError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise UsageError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = _acc(a) @ _acc(b)
    return out.astype(np.result_type(a.dtype, b.dtype), copy=False)


class LayerNormCache(NamedTuple):
    x_hat: np.ndarray   # normalized rows, pre scale/shift
    inv_std: np.ndarray # 1/sqrt(var + eps), one per row (float64)
    gamma: np.ndarray
    dtype: np.dtype


def layer_norm_rows(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LAYER_NORM_EPS
) -> tuple[np.ndarray, LayerNormCache]:
    """Row-wise layer normalization with learnable affine.

    Uses the population (biased) variance. `x` may be a single vector or a
    matrix of row vectors; the cache is sufficient for the backward pass.
    """
    if eps <= 0:
        raise UsageError("layer_norm eps must be positive")
    x = np.atleast_2d(np.asarray(x))
    xa = _acc(x)
    mu = xa.mean(axis=1, keepdims=True)
    var = np.mean((xa - mu) ** 2, axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    x_hat = (xa - mu) * inv_std
    out = _acc(gamma) * x_hat + _acc(beta)
    cache = LayerNormCache(x_hat=x_hat, inv_std=inv_std, gamma=np.asarray(gamma), dtype=x.dtype)
    return out.astype(x.dtype, copy=False), cache


def layer_norm_rows_backward(
    cache: LayerNormCache, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of layer_norm_rows w.r.t. input, gamma and beta."""
    d_out = np.atleast_2d(_acc(d_out))
    x_hat, inv_std, gamma, dtype = cache
    d_gamma = (d_out * x_hat).sum(axis=0)
    d_beta = d_out.sum(axis=0)
    d_hat = d_out * _acc(gamma)
    # d_x = inv_std * (d_hat - mean(d_hat) - x_hat * mean(d_hat * x_hat)), per row
    m1 = d_hat.mean(axis=1, keepdims=True)
    m2 = (d_hat * x_hat).mean(axis=1, keepdims=True)
    d_x = inv_std * (d_hat - m1 - x_hat * m2)
    return (
        d_x.astype(dtype, copy=False),
        d_gamma.astype(dtype, copy=False),
        d_beta.astype(dtype, copy=False),
    )


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = LAYER_NORM_EPS
) -> tuple[np.ndarray, LayerNormCache]:
    """Vector layer norm; see layer_norm_rows."""
    out, cache = layer_norm_rows(x, gamma, beta, eps)
    return out[0], cache


def layer_norm_backward(
    cache: LayerNormCache, d_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    d_x, d_gamma, d_beta = layer_norm_rows_backward(cache, d_out)
    return d_x[0], d_gamma, d_beta


def relu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """max(0, x) plus the mask needed for the backward pass."""
    mask = np.asarray(x) > 0
    return np.where(mask, x, np.zeros_like(x)), mask


def relu_backward(mask: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    """Gate the cotangent by the forward mask (subgradient 0 at the kink)."""
    return np.where(mask, d_out, np.zeros_like(d_out))


class NormalizeCache(NamedTuple):
    unit: np.ndarray  # normalized rows (float64)
    norm: np.ndarray  # per-row L2 norm (float64)
    dtype: np.dtype


def l2_normalize_rows(
    v: np.ndarray, *, floor: float = NORM_FLOOR, what: str = "input"
) -> tuple[np.ndarray, NormalizeCache]:
    """Normalize each row to unit L2 norm; rows below `floor` are errors."""
    v = np.atleast_2d(np.asarray(v))
    va = _acc(v)
    norm = np.sqrt((va * va).sum(axis=1, keepdims=True))
    bad = np.flatnonzero(norm[:, 0] < floor)
    if bad.size:
        raise DegenerateInputError(
            f"{what} row {int(bad[0])} has L2 norm {norm[bad[0], 0]:.3e} below floor {floor:g}"
        )
    unit = va / norm
    cache = NormalizeCache(unit=unit, norm=norm, dtype=v.dtype)
    return unit.astype(v.dtype, copy=False), cache


def l2_normalize_rows_backward(cache: NormalizeCache, d_out: np.ndarray) -> np.ndarray:
    """Jacobian-vector product of row-wise L2 normalization."""
    d_out = np.atleast_2d(_acc(d_out))
    unit, norm, dtype = cache
    proj = (d_out * unit).sum(axis=1, keepdims=True)
    d_v = (d_out - unit * proj) / norm
    return d_v.astype(dtype, copy=False)


def l2_normalize(v: np.ndarray, *, floor: float = NORM_FLOOR) -> tuple[np.ndarray, NormalizeCache]:
    out, cache = l2_normalize_rows(v, floor=floor)
    return out[0], cache


def l2_normalize_backward(cache: NormalizeCache, d_out: np.ndarray) -> np.ndarray:
    return l2_normalize_rows_backward(cache, d_out)[0]


def cosine_logits(z: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarity between rows of `z` and rows of `e`.

    This single kernel backs both the naive baseline and the refined logits,
    so comparisons between the two isolate the refiner itself.
    """
    z = np.atleast_2d(np.asarray(z))
    e = np.asarray(e)
    if z.shape[1] != e.shape[1]:
        raise UsageError(f"cosine_logits dimension mismatch: {z.shape} vs {e.shape}")
    zh, _ = l2_normalize_rows(z, what="query")
    eh, _ = l2_normalize_rows(e, what="vocabulary embedding")
    return matmul(zh, eh.T)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], theta: np.ndarray, h: float = 1e-3
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    The effective step is measured after storage rounding, so the estimate
    stays honest when `theta` is float32. Intended for small parameter blocks
    (test oracle, not a production path).
    """
    if h <= 0:
        raise UsageError("finite_diff_grad step h must be positive")
    theta = np.asarray(theta)
    grad = np.zeros(theta.size, dtype=np.float64)
    flat = theta.reshape(-1)
    for i in range(theta.size):
        tp = flat.copy()
        tm = flat.copy()
        tp[i] += h
        tm[i] -= h
        step = float(tp[i]) - float(tm[i])
        fp = float(f(tp.reshape(theta.shape)))
        fm = float(f(tm.reshape(theta.shape)))
        grad[i] = (fp - fm) / step
    return grad.reshape(theta.shape)


def block_rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative deviation between two gradient blocks.

    max|a - n| / max(max|a|, max|n|); two blocks that are both numerically
    zero agree exactly.
    """
    a = _acc(analytic).ravel()
    n = _acc(numeric).ravel()
    if a.shape != n.shape:
        raise UsageError(f"gradient blocks have different sizes: {a.shape} vs {n.shape}")
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale < 1e-12:
        return 0.0
    return float(np.abs(a - n).max() / scale)
