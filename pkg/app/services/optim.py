"""
Pixel losses, Adam, the step-halving schedule and the training loop.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, NamedTuple, Optional, Tuple
import logging
import math
import time

import numpy as np

from app.core.errors import DimensionError, NonFiniteGradientError, TrainingAbortedError
from app.models.schemas import TrainConfig
from app.services.data_pipeline import BatchPrefetcher
from app.services.mdcn_arch import ModelParams, scale_recurrent_backward, scale_recurrent_forward_train

logger = logging.getLogger(__name__)


def pixel_loss(pred: np.ndarray, target: np.ndarray, kind: str = "l1") -> Tuple[float, np.ndarray]:
    """
    Mean absolute (l1) or mean squared (l2) error and its gradient w.r.t. pred.

    The l1 subgradient is 0 where pred == target.
    """
    if pred.shape != target.shape:
        raise DimensionError("loss inputs must have identical shapes", pred.shape, target.shape)
    diff = pred - target.astype(pred.dtype, copy=False)
    count = diff.size
    kind = kind.lower()
    if kind == "l1":
        loss = float(np.mean(np.abs(diff), dtype=np.float64))
        grad = np.sign(diff) / count
    elif kind == "l2":
        loss = float(np.mean(np.square(diff), dtype=np.float64))
        grad = 2.0 * diff / count
    else:
        raise ValueError(f"unknown loss kind '{kind}'")
    return loss, grad.astype(pred.dtype, copy=False)


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """lr0 * 0.5 ** floor(iteration / halve_every)"""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return cfg.lr0 * 0.5 ** (iteration // cfg.halve_every)


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def _non_finite_report(g: np.ndarray) -> str:
    bad = ~np.isfinite(g)
    first = np.unravel_index(int(np.argmax(bad)), g.shape)
    finite = g[~bad]
    peak = float(np.max(np.abs(finite))) if finite.size else float("nan")
    return (f"{int(bad.sum())} of {g.size} elements non-finite, first at {tuple(int(i) for i in first)}, "
            f"max |finite| = {peak:.3e}")


def adam_step(params, grads: Mapping[str, np.ndarray], state: AdamState, lr: float, cfg: TrainConfig):
    """
    Bias-corrected Adam, updating parameters and moments in place.

    A tensor whose gradient is exactly zero everywhere keeps its value and its
    moments; only the step counter advances. Its moments are therefore not
    decayed for that step, so once gradients return they are staler than
    textbook Adam would have them, and the bias correction uses the global
    step count rather than a per-tensor one.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            report = _non_finite_report(g)
            logger.error(f"❌ Non-finite gradient in {name}: {report}")
            raise NonFiniteGradientError(name, report)
    if set(grads) != set(state.m):
        raise DimensionError("gradients are not aligned with the parameters")

    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if not np.any(g):
            continue
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * np.square(g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


def clip_grad_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm; returns the norm before clipping"""
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


class LossRecord(NamedTuple):
    iteration: int
    lr: float
    loss: float


class TrainingCallbacks:
    """Hooks called by fit; override what you need"""

    def on_log(self, record: LossRecord):
        pass

    def on_checkpoint(self, iteration: int, params: ModelParams):
        pass


@dataclass
class FitResult:
    params: ModelParams
    history: List[LossRecord] = field(default_factory=list)
    losses: List[float] = field(default_factory=list)


def fit(params: ModelParams, dataset, cfg: TrainConfig, callbacks: Optional[TrainingCallbacks] = None,
        passes: Optional[int] = None, workers: int = 1) -> FitResult:
    """
    Run cfg.max_iters steps of sample -> forward -> loss -> backward -> Adam.

    ``passes`` is the number of shared-weight x2 passes (2 for x4, 3 for x8);
    it defaults to what params.config.scale needs. Parameters are updated in
    place. A non-finite loss or gradient aborts with the last checkpointed
    parameters attached to the error.
    """
    callbacks = callbacks or TrainingCallbacks()
    passes = passes or params.config.passes
    result = FitResult(params=params)
    if cfg.max_iters == 0:
        return result

    state = AdamState.zeros(params)
    last_good, last_good_iter = params.copy(), 0
    started = time.time()
    logger.info(f"🏋️ Training {cfg.max_iters} iterations, batch {cfg.batch_size}, "
                f"{passes} pass(es), loss {cfg.loss_kind}, lr0 {cfg.lr0:g}")

    with BatchPrefetcher(dataset.sample, cfg.batch_size, cfg.seed, workers=workers,
                         total=cfg.max_iters) as batches:
        for it in range(cfg.max_iters):
            lr_batch, hr_batch = batches.next()
            out, tapes = scale_recurrent_forward_train(lr_batch.astype(params.dtype), params, passes)
            loss, grad = pixel_loss(out, hr_batch, cfg.loss_kind)
            if not math.isfinite(loss):
                raise TrainingAbortedError("non-finite loss", it, last_good, last_good_iter)

            grads, _ = scale_recurrent_backward(grad, tapes, params)
            if cfg.clip_norm is not None:
                clip_grad_norm(grads, cfg.clip_norm)
            lr = lr_at(it, cfg)
            try:
                adam_step(params, grads, state, lr, cfg)
            except NonFiniteGradientError as e:
                raise TrainingAbortedError(e.message, it, last_good, last_good_iter) from e

            result.losses.append(loss)
            if it % cfg.log_every == 0 or it == cfg.max_iters - 1:
                record = LossRecord(it, lr, loss)
                result.history.append(record)
                callbacks.on_log(record)
                logger.info(f"iter {it:6d}  lr {lr:.3e}  loss {loss:.6f}")
            if cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                last_good, last_good_iter = params.copy(), it + 1
                callbacks.on_checkpoint(it + 1, params)

    logger.info(f"✅ Training finished in {time.time() - started:.1f}s, final loss {result.losses[-1]:.6f}")
    return result


def format_history(history: List[LossRecord]) -> str:
    """Plain-text (iteration, lr, loss) table for plotting"""
    lines = [f"{'iteration':>10}  {'lr':>12}  {'loss':>14}"]
    for rec in history:
        lines.append(f"{rec.iteration:>10d}  {rec.lr:>12.6e}  {rec.loss:>14.8f}")
    return "\n".join(lines) + "\n"
