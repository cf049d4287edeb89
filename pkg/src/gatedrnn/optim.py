"""RMSProp, global gradient-norm clipping, learning-rate sampling and early stopping."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .exceptions import ContractError, ParameterError
from .numerics import RngStream, global_norm

Params = Dict[str, np.ndarray]


def clip_global_norm(g: Params, threshold: float = 1.0) -> Params:
    """Rescale ``g`` so its global norm is at most ``threshold``.

    Gradients already within the threshold are returned as the same object.
    """
    if not threshold > 0:
        raise ParameterError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(g)
    if norm <= threshold:
        return g
    scale = threshold / norm
    out = {k: v * scale for k, v in g.items()}
    # rounding can leave the result an ulp above the threshold; step the scale
    # down so a second clip is a no-op
    while global_norm(out) > threshold:
        scale = np.nextafter(scale, 0.0)
        out = {k: v * scale for k, v in g.items()}
    return out


@dataclass
class RmsPropState:
    lr: float
    decay: float = 0.9
    epsilon: float = 1e-8
    accum: Params = field(default_factory=dict)

    def __post_init__(self):
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        if not 0 < self.decay < 1:
            raise ParameterError(f"decay must lie in (0, 1), got {self.decay}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon}")

    @classmethod
    def for_params(cls, params: Params, lr: float, decay: float = 0.9, epsilon: float = 1e-8):
        return cls(lr, decay, epsilon, {k: np.zeros_like(v) for k, v in params.items()})


def rmsprop_step(state: RmsPropState, params: Params, g: Params):
    """One RMSProp update.

    ``accum <- decay * accum + (1 - decay) * g**2`` then
    ``param <- param - lr * g / sqrt(accum + epsilon)``.
    Returns ``(new_params, state)``; ``state.accum`` is replaced, never aliased
    with the caller's arrays.
    """
    if set(g) != set(params):
        raise ContractError("gradient and parameter names differ")
    if not state.accum:
        state.accum = {k: np.zeros_like(v) for k, v in params.items()}
    new_params, new_accum = {}, {}
    for name, p in params.items():
        grad = g[name]
        if grad.shape != p.shape or state.accum[name].shape != p.shape:
            raise ContractError(f"shape mismatch for {name}: {p.shape} vs {grad.shape}")
        acc = state.decay * state.accum[name] + (1.0 - state.decay) * grad * grad
        new_accum[name] = acc
        new_params[name] = p - state.lr * grad / np.sqrt(acc + state.epsilon)
    state.accum = new_accum
    return new_params, state


def sample_log_uniform_lr(rng: RngStream, lo: float = -12.0, hi: float = -6.0) -> float:
    """``exp(u)`` with ``u ~ Uniform(lo, hi)`` (natural-log exponents)."""
    if not lo < hi:
        raise ParameterError(f"need lo < hi, got lo={lo}, hi={hi}")
    return math.exp(float(rng.uniform(lo, hi)))


class Decision(enum.Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass
class EarlyStopState:
    patience: int = 20
    best_valid: float = math.inf
    best_epoch: int = -1
    epochs_since_best: int = 0
    last_epoch: int = -1

    def __post_init__(self):
        if self.patience < 0:
            raise ParameterError(f"patience must be non-negative, got {self.patience}")


def early_stop_update(state: EarlyStopState, valid_nll: float, epoch: int) -> Decision:
    """Record one epoch's validation NLL and decide whether to keep training.

    An improvement must beat the best value by more than 1e-9. Training stops
    once more than ``patience`` consecutive epochs fail to improve.
    """
    if epoch <= state.last_epoch:
        raise ContractError(f"epoch {epoch} observed after epoch {state.last_epoch}")
    state.last_epoch = epoch
    if valid_nll < state.best_valid - 1e-9:
        state.best_valid = float(valid_nll)
        state.best_epoch = epoch
        state.epochs_since_best = 0
    else:
        state.epochs_since_best += 1
    return Decision.STOP if state.epochs_since_best > state.patience else Decision.CONTINUE
