import logging
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import TranslitError

logger = logging.getLogger(__name__)


class NonFiniteGradientError(TranslitError):
    """A gradient contains NaN or infinity; the offending parameter is named."""


@dataclass
class AdamWConfig:
    """Adaptive-moment optimizer with decoupled weight decay.

    Parameters whose name contains one of ``no_decay`` are not decayed.
    """
    lr: float = 1e-5
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.02
    no_decay: Tuple[str, ...] = ("bias", "layer_norm")

    def validate(self):
        if not (0 <= self.b1 < 1 and 0 <= self.b2 < 1):
            raise TranslitError("Moment decay rates must be in [0, 1), got {} and {}.".format(self.b1, self.b2))
        if self.lr < 0 or self.weight_decay < 0 or self.eps <= 0:
            raise TranslitError("lr and weight_decay must be non-negative and eps positive.")


def step(state, grads, config, lr=None):
    """ One AdamW update of the unfrozen parameters of a model state.

    INPUTS
    =======
    state: ModelState; parameters and moments are updated in place.
    grads: dictionary from parameter name to gradient. Names that are frozen
           or absent are left untouched, together with their moments.
    config: AdamWConfig.
    lr (optional): learning rate for this step; defaults to config.lr.

    RETURNS
    =======
    state, with the step counter incremented.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NonFiniteGradientError("Gradient of parameter {} is not finite at step {}.".format(
                name, state.step + 1))
    lr = config.lr if lr is None else float(lr)
    state.step += 1
    t = state.step
    bias_correction1 = 1.0 - config.b1 ** t
    bias_correction2 = 1.0 - config.b2 ** t
    for name, p in state.params.items():
        if state.frozen[name] or name not in grads:
            continue
        g = np.asarray(grads[name], dtype=p.dtype)
        m = state.exp_avg.setdefault(name, np.zeros_like(p))
        v = state.exp_avg_sq.setdefault(name, np.zeros_like(p))
        if not any(tag in name for tag in config.no_decay):
            p *= 1.0 - lr * config.weight_decay
        m *= config.b1
        m += (1.0 - config.b1) * g
        v *= config.b2
        v += (1.0 - config.b2) * g * g
        p -= lr * (m / bias_correction1) / (np.sqrt(v / bias_correction2) + config.eps)
    return state


def reset(state):
    """Drop optimizer moments and restart the step counter (start of a training phase)."""
    state.exp_avg.clear()
    state.exp_avg_sq.clear()
    state.step = 0
    return state


def warmup_steps(total_steps, warmup_ratio):
    # round first so 0.1 * 30 counts as 3, not 4
    return math.ceil(round(warmup_ratio * total_steps, 9))


def learning_rate(step, total_steps, peak, warmup_ratio):
    """
    Linear warmup to ``peak`` then linear decay to zero.

    >>> [learning_rate(s, 1000, 1.0, 0.1) for s in (50, 100, 550, 1000)]
    [0.5, 1.0, 0.5, 0.0]
    """
    warmup = warmup_steps(total_steps, warmup_ratio)
    if step < warmup:
        return peak * step / warmup
    if total_steps <= warmup:
        return peak
    return peak * max(total_steps - step, 0) / (total_steps - warmup)
