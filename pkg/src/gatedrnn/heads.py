"""Output layers that turn a hidden state into a per-step predictive density.

Two heads are provided:

* Bernoulli: independent sigmoid units over a binary frame (piano-roll).
* Gaussian mixture: ``K`` components with diagonal covariance over a block of
  ``d_out`` real samples (raw signal windows).

Both score observations in nats. All functions accept an optional leading
batch axis on ``h`` and ``target``; NLLs are then returned per batch entry.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, NamedTuple, Optional

import numpy as np

from .exceptions import ContractError, DataError, ParameterError, ShapeError
from .numerics import DTYPE, RngStream, as_real, logsumexp, sigmoid_vec

Params = Dict[str, np.ndarray]

HEAD_KINDS = ("bernoulli", "gmm")
PROB_CLAMP = 1e-12
LOG_STD_MIN, LOG_STD_MAX = -7.0, 7.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def check_head_kind(kind: str) -> str:
    kind = str(kind).lower()
    if kind not in HEAD_KINDS:
        raise ParameterError(f"unknown head kind {kind!r}; expected one of {HEAD_KINDS}")
    return kind


def head_shapes(kind: str, n: int, d_out: int, components: int = 20) -> Dict[str, tuple]:
    kind = check_head_kind(kind)
    if kind == "bernoulli":
        return {"W_y": (d_out, n), "b_y": (d_out,)}
    if components < 1:
        raise ParameterError(f"mixture needs at least one component, got {components}")
    kd = components * d_out
    return {"W_pi": (components, n), "W_mu": (kd, n), "W_s": (kd, n),
            "b_pi": (components,), "b_mu": (kd,), "b_s": (kd,)}


def init_head(kind: str, n: int, d_out: int, rng: RngStream, scale: float = 1.0,
              components: int = 20) -> Params:
    params = {}
    bound = scale / math.sqrt(n)
    for name, shape in head_shapes(kind, n, d_out, components).items():
        if name.startswith("b"):
            params[name] = np.zeros(shape, dtype=DTYPE)
        else:
            params[name] = rng.uniform(-bound, bound, shape)
    return params


def _check_hidden(w: np.ndarray, h: np.ndarray):
    if h.shape[-1] != w.shape[1]:
        raise ShapeError(f"head expects hidden size {w.shape[1]}, got {h.shape}")


# -- Bernoulli ---------------------------------------------------------------

def bernoulli_forward(head: Params, h) -> np.ndarray:
    """Per-dimension probabilities ``sigmoid(W_y h + b_y)``."""
    h = as_real(h)
    _check_hidden(head["W_y"], h)
    return sigmoid_vec(h @ head["W_y"].T + head["b_y"])


def bernoulli_nll(p, target) -> np.ndarray:
    """Negative log-likelihood of a binary frame, summed over dimensions.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]`` inside the logarithm.
    """
    p = as_real(p)
    t = as_real(target)
    if p.shape != t.shape:
        raise ShapeError(f"probabilities {p.shape} and target {t.shape} differ")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise DataError("Bernoulli targets must be 0 or 1")
    pc = np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)
    out = -np.sum(t * np.log(pc) + (1.0 - t) * np.log1p(-pc), axis=-1)
    return out if out.ndim else out[()]


# -- Gaussian mixture --------------------------------------------------------

@dataclass
class MixtureParams:
    """Mixture weights ``(..., K)``, means and stds ``(..., K, d_out)``.

    ``log_weights`` and ``log_stds`` are kept alongside so scoring never takes
    the log of an underflowed weight.
    """

    weights: np.ndarray
    means: np.ndarray
    stds: np.ndarray
    log_weights: Optional[np.ndarray] = None
    log_stds: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = as_real(self.weights)
        self.means = as_real(self.means)
        self.stds = as_real(self.stds)
        if self.means.ndim == self.weights.ndim:
            # single output dimension given as (..., K)
            self.means = self.means[..., None]
            self.stds = self.stds[..., None]
        if self.means.shape != self.stds.shape or self.means.shape[:-1] != self.weights.shape:
            raise ShapeError("mixture weights, means and stds have inconsistent shapes")
        if np.any(self.stds <= 0):
            raise ParameterError("mixture standard deviations must be positive")
        if self.log_weights is None:
            with np.errstate(divide="ignore"):
                self.log_weights = np.log(self.weights)
        if self.log_stds is None:
            self.log_stds = np.log(self.stds)

    @property
    def components(self) -> int:
        return self.weights.shape[-1]


def gmm_forward(head: Params, h) -> MixtureParams:
    """Softmax weights, linear means, and exp(clamped log-std) spreads."""
    h = as_real(h)
    _check_hidden(head["W_pi"], h)
    k = head["W_pi"].shape[0]
    a_pi = h @ head["W_pi"].T + head["b_pi"]
    log_w = a_pi - np.expand_dims(logsumexp(a_pi, axis=-1), -1)
    lead = h.shape[:-1]
    means = (h @ head["W_mu"].T + head["b_mu"]).reshape(lead + (k, -1))
    log_s = np.clip(h @ head["W_s"].T + head["b_s"], LOG_STD_MIN, LOG_STD_MAX)
    log_s = log_s.reshape(lead + (k, -1))
    return MixtureParams(np.exp(log_w), means, np.exp(log_s), log_weights=log_w, log_stds=log_s)


def _component_log_terms(mix: MixtureParams, t: np.ndarray):
    z = (np.expand_dims(t, -2) - mix.means) / mix.stds
    comp = mix.log_weights + np.sum(-_HALF_LOG_2PI - mix.log_stds - 0.5 * z * z, axis=-1)
    return comp, z


def gmm_nll(mix: MixtureParams, target) -> np.ndarray:
    """``-log sum_k w_k N(target; mu_k, diag(sigma_k^2))`` in nats."""
    t = as_real(target)
    if t.ndim == 0:
        t = t.reshape(1)
    if t.shape != mix.means.shape[:-2] + mix.means.shape[-1:]:
        raise ShapeError(f"target {t.shape} does not match mixture means {mix.means.shape}")
    comp, _ = _component_log_terms(mix, t)
    out = -logsumexp(comp, axis=-1)
    return out


# -- shared ------------------------------------------------------------------

class HeadCache(NamedTuple):
    kind: str
    h: np.ndarray
    out: object  # probabilities or MixtureParams


def head_forward(kind: str, head: Params, h):
    kind = check_head_kind(kind)
    h = as_real(h)
    out = bernoulli_forward(head, h) if kind == "bernoulli" else gmm_forward(head, h)
    return HeadCache(kind, h, out)


def head_nll(cache: HeadCache, target) -> np.ndarray:
    if cache.kind == "bernoulli":
        return bernoulli_nll(cache.out, target)
    return gmm_nll(cache.out, target)


def head_backward(kind: str, head: Params, h, target, cache: HeadCache, weight=None):
    """Gradients of the per-step NLL w.r.t. the head parameters and ``h``.

    With a batch axis, parameter gradients are summed over the batch and
    ``grad_h`` is returned per entry. ``weight`` (batch-shaped) scales each
    entry's loss, e.g. to mask padded steps.
    """
    kind = check_head_kind(kind)
    if cache.kind != kind:
        raise ContractError(f"{cache.kind} cache passed to {kind} head backward")
    h = as_real(h)
    if cache.h.shape != h.shape or not np.array_equal(cache.h, h):
        raise ContractError("head cache was computed for a different hidden state")
    t = as_real(target)
    flat_h = h.reshape(-1, h.shape[-1])

    if kind == "bernoulli":
        # canonical link: d nll / d logit = p - t
        d_logit = cache.out - t
        if weight is not None:
            d_logit = d_logit * np.expand_dims(weight, -1)
        flat = d_logit.reshape(-1, d_logit.shape[-1])
        grads = {"W_y": flat.T @ flat_h, "b_y": flat.sum(axis=0)}
        return grads, d_logit @ head["W_y"]

    mix: MixtureParams = cache.out
    comp, z = _component_log_terms(mix, t)
    resp = np.exp(comp - np.expand_dims(logsumexp(comp, axis=-1), -1))
    if weight is not None:
        resp = resp * np.expand_dims(weight, -1)
    d_pi = mix.weights * resp.sum(axis=-1, keepdims=True) - resp
    r = resp[..., None]
    d_mu = -r * z / mix.stds
    d_ls = r * (1.0 - z * z)
    lead = h.shape[:-1]
    raw_ls = h @ head["W_s"].T + head["b_s"]
    inside = (raw_ls >= LOG_STD_MIN) & (raw_ls <= LOG_STD_MAX)
    d_mu = d_mu.reshape(lead + (-1,))
    d_s = d_ls.reshape(lead + (-1,)) * inside
    grads = {}
    grad_h = np.zeros_like(h)
    for w, b, g in (("W_pi", "b_pi", d_pi), ("W_mu", "b_mu", d_mu), ("W_s", "b_s", d_s)):
        flat = g.reshape(-1, g.shape[-1])
        grads[w] = flat.T @ flat_h
        grads[b] = flat.sum(axis=0)
        grad_h = grad_h + g @ head[w]
    return grads, grad_h
