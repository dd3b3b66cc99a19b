"""Finite-difference validation of every loss composed with the refiner.

Central differences are only meaningful where the composition is
differentiable, so instances are redrawn until every ReLU pre-activation
sits safely away from its kink and the refined latent is comfortably above
the normalization floor.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import losses as losses_mod
from . import numerics, refiner
from .errors import UsageError

KINK_MARGIN = 0.02
LATENT_MARGIN = 0.1
DEFAULT_H = 1e-3


def _draw_instance(seed: int, dim: int, hidden: int, v: int, batch: int, dtype):
    """Params, inputs, embeddings and targets clear of non-differentiable spots."""
    # random ("he") init: every seed must exercise a different instance
    params = refiner.init_params(seed, dim=dim, hidden=hidden, style="he")
    params = refiner.RefinerParams(
        **{name: arr.astype(dtype) for name, arr in params.blocks()}
    )
    rng = np.random.default_rng(seed + 1000)
    e = rng.standard_normal((v, dim))
    e = (e / np.sqrt((e * e).sum(axis=1, keepdims=True))).astype(dtype)
    targets = np.zeros((batch, v), dtype=dtype)
    for i in range(batch):
        k = int(rng.integers(1, min(4, v)))
        targets[i, rng.choice(v, size=k, replace=False)] = 1.0
    for attempt in range(100):
        x = rng.standard_normal((batch, dim)).astype(dtype)
        a1 = numerics.matmul(x, params.w1.T) + params.b1
        ln_out, _ = numerics.layer_norm_rows(a1, params.ln_gamma, params.ln_beta)
        z, _, _ = refiner.forward_batch(params, x, e)
        if np.abs(ln_out).min() > KINK_MARGIN and np.linalg.norm(z, axis=1).min() > LATENT_MARGIN:
            return params, x, e, targets
    raise UsageError(f"could not draw a kink-free gradcheck instance for seed {seed}")


def check_loss_gradients(
    loss_name: str,
    seed: int = 0,
    *,
    dim: int = 4,
    hidden: int = 8,
    v: int = 6,
    batch: int = 2,
    h: float = DEFAULT_H,
    dtype=np.float64,
) -> dict[str, float]:
    """Max-norm relative error, per parameter block, of the analytic gradient
    of loss(forward(params, x, E)) against central finite differences.

    Also checks the input gradient d_x and, for sigmoid-based losses, the
    learned-scale gradient. Returns a {block: rel_error} mapping.
    """
    params, x, e, targets = _draw_instance(seed, dim, hidden, v, batch, dtype)

    def loss_value(p: refiner.RefinerParams, xs: np.ndarray) -> float:
        _, logits, _ = refiner.forward_batch(p, xs, e)
        out = losses_mod.compute_loss(loss_name, logits, p.scale, targets)
        if out is None:
            raise UsageError("gradcheck instance produced an all-skip batch")
        return out.value

    # analytic gradients
    _, logits, cache = refiner.forward_batch(params, x, e)
    loss = losses_mod.compute_loss(loss_name, logits, params.scale, targets)
    grads, d_x = refiner.backward_batch(params, cache, loss.d_logits)
    grads.sigmoid_scale[0] = loss.d_scale

    errors: dict[str, float] = {}
    for name, _ in params.blocks():
        def f_block(theta, _name=name):
            fields = {n: a for n, a in params.blocks()}
            fields[_name] = theta.astype(dtype)
            return loss_value(refiner.RefinerParams(**fields), x)

        fd = numerics.finite_diff_grad(f_block, getattr(params, name), h)
        errors[name] = numerics.block_rel_error(getattr(grads, name), fd)

    fd_x = numerics.finite_diff_grad(lambda xs: loss_value(params, xs.astype(dtype)), x, h)
    errors["x"] = numerics.block_rel_error(d_x, fd_x)
    return errors


def run_gradcheck(
    seeds: range | list[int],
    losses: Optional[list[str]] = None,
    *,
    h: float = DEFAULT_H,
    dtype=np.float64,
    tolerance: float = 1e-4,
) -> dict:
    """Gradcheck every loss variant over several seeds on tiny shapes.

    Returns per-loss worst relative errors and an overall pass flag.
    """
    losses = losses or list(losses_mod.LOSS_NAMES)
    per_loss: dict[str, float] = {}
    worst_block: dict[str, str] = {}
    for name in losses:
        worst = 0.0
        block = ""
        for seed in seeds:
            errs = check_loss_gradients(name, seed, h=h, dtype=dtype)
            for blk, err in errs.items():
                if err > worst:
                    worst, block = err, blk
        per_loss[name] = worst
        worst_block[name] = block
    return {
        "tolerance": tolerance,
        "max_rel_error": per_loss,
        "worst_block": worst_block,
        "passed": all(err <= tolerance for err in per_loss.values()),
    }
