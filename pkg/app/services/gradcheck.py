"""
Central finite-difference checks for the hand-written backward passes.

All checks run in float64; callers pass closures that map an array to a
scalar loss so any primitive, block or full network can be checked the same way.
"""
from typing import Callable, Dict, Optional
import logging

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5


def numerical_gradient(loss_fn: Callable[[], float], target: np.ndarray,
                       step: float = DEFAULT_STEP, max_entries: Optional[int] = None,
                       rng: Optional[np.random.Generator] = None) -> Dict[int, float]:
    """
    Central differences of ``loss_fn`` w.r.t. entries of ``target``.

    ``target`` is perturbed in place and restored after each probe. When
    ``max_entries`` is set a random subset of flat indices is probed.
    Returns {flat index: derivative}.
    """
    if target.dtype != np.float64:
        raise TypeError("gradient checks require float64 tensors")
    if not target.flags.c_contiguous:
        raise ValueError("target must be C-contiguous so probes write through")
    flat = target.reshape(-1)
    indices = np.arange(flat.size)
    if max_entries is not None and flat.size > max_entries:
        rng = rng or np.random.default_rng(0)
        indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))

    grads = {}
    for idx in indices:
        original = flat[idx]
        flat[idx] = original + step
        plus = loss_fn()
        flat[idx] = original - step
        minus = loss_fn()
        flat[idx] = original
        grads[int(idx)] = (plus - minus) / (2.0 * step)
    return grads


def relative_error(analytic: np.ndarray, numeric: Dict[int, float], floor: float = 1e-6) -> float:
    """max |a - n| / max(|a| + |n|, floor), over the probed entries"""
    flat = analytic.reshape(-1)
    worst = 0.0
    for idx, num in numeric.items():
        a = float(flat[idx])
        denom = max(abs(a) + abs(num), floor)
        worst = max(worst, abs(a - num) / denom)
    return worst


def check_gradient(loss_fn: Callable[[], float], target: np.ndarray, analytic: np.ndarray,
                   step: float = DEFAULT_STEP, max_entries: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Probe ``target`` and return the worst relative error against ``analytic``"""
    if analytic.shape != target.shape:
        raise ValueError(f"analytic gradient shape {analytic.shape} != target shape {target.shape}")
    numeric = numerical_gradient(loss_fn, target, step=step, max_entries=max_entries, rng=rng)
    err = relative_error(analytic, numeric)
    logger.debug(f"gradient check over {len(numeric)} entries: max rel. error {err:.3e}")
    return err
