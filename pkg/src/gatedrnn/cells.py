"""Recurrent units: traditional tanh, LSTM with diagonal peepholes, and GRU.

Parameters of one unit live in a flat ``dict`` mapping a name (``"W_i"``,
``"U_z"``, ``"V_f"``, ...) to a float64 array. Input-to-hidden matrices are
``(n, d)``, hidden-to-hidden matrices ``(n, n)``, peepholes and biases ``(n,)``.

Every step function accepts either single vectors or arrays with a leading
batch axis and returns the new state together with a :class:`StepTrace` that
holds what :func:`cell_backstep` needs to differentiate the step.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional

import numpy as np

from .exceptions import ContractError, ParameterError, ShapeError
from .numerics import DTYPE, RngStream, as_real, sigmoid_vec, tanh_vec

Params = Dict[str, np.ndarray]

KINDS = ("tanh", "lstm", "gru")

_GATES = {"tanh": ("",), "lstm": ("i", "f", "o", "c"), "gru": ("z", "r", "")}
PEEPHOLES = ("V_i", "V_f", "V_o")


class GruVariant(str, enum.Enum):
    # U (r * h): the form used in the comparison experiments
    CANDIDATE_GATED = "candidate"
    # r * (U h): the original formulation
    PROJECTION_GATED = "projection"


class LstmState(NamedTuple):
    h: np.ndarray
    c: np.ndarray


@dataclass
class StepTrace:
    kind: str
    x: np.ndarray
    h_prev: np.ndarray
    values: Dict[str, np.ndarray] = field(default_factory=dict)
    c_prev: Optional[np.ndarray] = None
    variant: Optional[GruVariant] = None


def check_kind(kind: str) -> str:
    kind = str(kind).lower()
    if kind not in KINDS:
        raise ParameterError(f"unknown cell kind {kind!r}; expected one of {KINDS}")
    return kind


def _suffix(gate: str) -> str:
    return f"_{gate}" if gate else ""


def param_shapes(kind: str, n: int, d: int) -> Dict[str, tuple]:
    """Name -> shape for every parameter tensor of a unit."""
    kind = check_kind(kind)
    shapes = {}
    for g in _GATES[kind]:
        s = _suffix(g)
        shapes["W" + s] = (n, d)
        shapes["U" + s] = (n, n)
    if kind == "lstm":
        for v in PEEPHOLES:
            shapes[v] = (n,)
    for g in _GATES[kind]:
        shapes["b" + _suffix(g)] = (n,)
    return shapes


def is_bias(name: str) -> bool:
    return name.split(".")[-1].startswith("b")


def init_params(kind: str, n: int, d: int, rng: RngStream, scale: float = 1.0) -> Params:
    """Uniform ``(-scale/sqrt(fan_in), scale/sqrt(fan_in))`` weights, zero biases.

    The LSTM forget-gate bias starts at +1. Peephole diagonals use the hidden
    size as their fan-in.
    """
    kind = check_kind(kind)
    if n < 1 or d < 1:
        raise ParameterError(f"cell sizes must be positive, got n={n}, d={d}")
    if not scale > 0:
        raise ParameterError(f"init scale must be positive, got {scale}")
    params = {}
    for name, shape in param_shapes(kind, n, d).items():
        if is_bias(name):
            params[name] = np.zeros(shape, dtype=DTYPE)
            continue
        fan_in = d if name.startswith("W") else n
        bound = scale / math.sqrt(fan_in)
        params[name] = rng.uniform(-bound, bound, shape)
    if kind == "lstm":
        params["b_f"] = np.ones(n, dtype=DTYPE)
    return params


def _check_step(p: Params, w: str, h_prev: np.ndarray, x: np.ndarray):
    n, d = p[w].shape
    if x.shape[-1] != d or h_prev.shape[-1] != n or x.shape[:-1] != h_prev.shape[:-1]:
        raise ShapeError(
            f"step expects x[..., {d}] and h[..., {n}], got {x.shape} and {h_prev.shape}")


def _affine(p: Params, gate: str, x: np.ndarray, h: np.ndarray) -> np.ndarray:
    s = _suffix(gate)
    return x @ p["W" + s].T + h @ p["U" + s].T + p["b" + s]


def tanh_step(p: Params, h_prev, x):
    """``h = tanh(W x + U h_prev + b)``."""
    x = as_real(x)
    h_prev = as_real(h_prev)
    _check_step(p, "W", h_prev, x)
    h = tanh_vec(_affine(p, "", x, h_prev))
    return h, StepTrace("tanh", x, h_prev, {"h": h})


def lstm_step(p: Params, s: LstmState, x):
    """One LSTM update with peepholes.

    Forget and input gates read the previous memory through ``V_f``/``V_i``;
    the output gate reads the freshly updated memory through ``V_o``.
    """
    x = as_real(x)
    h_prev = as_real(s.h)
    c_prev = as_real(s.c)
    _check_step(p, "W_i", h_prev, x)
    if c_prev.shape != h_prev.shape:
        raise ShapeError(f"memory shape {c_prev.shape} differs from state shape {h_prev.shape}")
    c_tilde = tanh_vec(_affine(p, "c", x, h_prev))
    f = sigmoid_vec(_affine(p, "f", x, h_prev) + p["V_f"] * c_prev)
    i = sigmoid_vec(_affine(p, "i", x, h_prev) + p["V_i"] * c_prev)
    c = f * c_prev + i * c_tilde
    o = sigmoid_vec(_affine(p, "o", x, h_prev) + p["V_o"] * c)
    tc = np.tanh(c)
    h = o * tc
    trace = StepTrace("lstm", x, h_prev,
                      {"i": i, "f": f, "o": o, "c_tilde": c_tilde, "c": c, "tanh_c": tc, "h": h},
                      c_prev=c_prev)
    return LstmState(h, c), trace


def gru_step(p: Params, h_prev, x, variant=GruVariant.CANDIDATE_GATED):
    """One GRU update: ``h = (1 - z) * h_prev + z * h_tilde``."""
    variant = GruVariant(variant)
    x = as_real(x)
    h_prev = as_real(h_prev)
    _check_step(p, "W", h_prev, x)
    z = sigmoid_vec(_affine(p, "z", x, h_prev))
    r = sigmoid_vec(_affine(p, "r", x, h_prev))
    values = {"z": z, "r": r}
    if variant is GruVariant.CANDIDATE_GATED:
        rh = r * h_prev
        values["rh"] = rh
        pre = x @ p["W"].T + rh @ p["U"].T + p["b"]
    else:
        uh = h_prev @ p["U"].T
        values["uh"] = uh
        pre = x @ p["W"].T + r * uh + p["b"]
    h_tilde = np.tanh(pre)
    h = (1.0 - z) * h_prev + z * h_tilde
    values.update(h_tilde=h_tilde, h=h)
    return h, StepTrace("gru", x, h_prev, values, variant=variant)


def _outer(g: np.ndarray, a: np.ndarray) -> np.ndarray:
    # sum over any batch axes of g[..., i] * a[..., j]
    if g.ndim == 1:
        return np.outer(g, a)
    return g.reshape(-1, g.shape[-1]).T @ a.reshape(-1, a.shape[-1])


def _bsum(g: np.ndarray) -> np.ndarray:
    return g if g.ndim == 1 else g.reshape(-1, g.shape[-1]).sum(axis=0)


class BackStep(NamedTuple):
    grads: Params
    grad_h_prev: np.ndarray
    grad_c_prev: Optional[np.ndarray]
    grad_x: np.ndarray


def _accumulate(grads, gate, pre_grad, x, h, p):
    s = _suffix(gate)
    grads["W" + s] = _outer(pre_grad, x)
    grads["U" + s] = _outer(pre_grad, h)
    grads["b" + s] = _bsum(pre_grad)
    return pre_grad @ p["W" + s], pre_grad @ p["U" + s]


def cell_backstep(kind: str, p: Params, trace: StepTrace, grad_h, grad_c=None) -> BackStep:
    """Reverse-mode derivative of one step.

    ``grad_h`` (and, for the LSTM, ``grad_c``) are the loss sensitivities to
    the step's outputs. Returns parameter gradients for this step alone plus
    the sensitivities to the previous state and to the input.
    """
    kind = check_kind(kind)
    if trace.kind != kind:
        raise ContractError(f"trace from a {trace.kind} step passed to {kind} backward")
    grad_h = as_real(grad_h)
    x, h_prev, v = trace.x, trace.h_prev, trace.values
    grads: Params = {}

    if kind == "tanh":
        da = grad_h * (1.0 - v["h"] ** 2)
        gx, gh = _accumulate(grads, "", da, x, h_prev, p)
        return BackStep(grads, gh, None, gx)

    if kind == "gru":
        z, r, h_tilde = v["z"], v["r"], v["h_tilde"]
        gh_prev = grad_h * (1.0 - z)
        d_z = grad_h * (h_tilde - h_prev) * z * (1.0 - z)
        d_cand = grad_h * z * (1.0 - h_tilde ** 2)
        grads["W"] = _outer(d_cand, x)
        grads["b"] = _bsum(d_cand)
        gx = d_cand @ p["W"]
        if trace.variant is GruVariant.CANDIDATE_GATED:
            grads["U"] = _outer(d_cand, v["rh"])
            d_rh = d_cand @ p["U"]
            d_r = d_rh * h_prev
            gh_prev = gh_prev + d_rh * r
        else:
            grads["U"] = _outer(d_cand * r, h_prev)
            d_r = d_cand * v["uh"]
            gh_prev = gh_prev + (d_cand * r) @ p["U"]
        d_r = d_r * r * (1.0 - r)
        for gate, g in (("z", d_z), ("r", d_r)):
            ax, ah = _accumulate(grads, gate, g, x, h_prev, p)
            gx = gx + ax
            gh_prev = gh_prev + ah
        return BackStep(grads, gh_prev, None, gx)

    c_prev = trace.c_prev
    i, f, o, c_tilde, c, tc = (v[k] for k in ("i", "f", "o", "c_tilde", "c", "tanh_c"))
    grad_c = np.zeros_like(c) if grad_c is None else as_real(grad_c)
    d_o = grad_h * tc * o * (1.0 - o)
    dc = grad_c + grad_h * o * (1.0 - tc ** 2) + d_o * p["V_o"]
    d_f = dc * c_prev * f * (1.0 - f)
    d_i = dc * c_tilde * i * (1.0 - i)
    d_c = dc * i * (1.0 - c_tilde ** 2)
    gc_prev = dc * f + d_f * p["V_f"] + d_i * p["V_i"]
    grads["V_i"] = _bsum(d_i * c_prev)
    grads["V_f"] = _bsum(d_f * c_prev)
    grads["V_o"] = _bsum(d_o * c)
    gx = np.zeros_like(x)
    gh_prev = np.zeros_like(h_prev)
    for gate, g in (("i", d_i), ("f", d_f), ("o", d_o), ("c", d_c)):
        ax, ah = _accumulate(grads, gate, g, x, h_prev, p)
        gx = gx + ax
        gh_prev = gh_prev + ah
    return BackStep(grads, gh_prev, gc_prev, gx)


def count_params(kind: str, n: int, d: int) -> int:
    """Recurrent-unit parameter count (biases and peepholes included, output layer excluded)."""
    kind = check_kind(kind)
    block = n * d + n * n + n
    if kind == "tanh":
        return block
    if kind == "gru":
        return 3 * block
    return 4 * block + 3 * n


def param_budget_to_units(kind: str, d: int, budget: int) -> int:
    """Largest hidden size whose parameter count does not exceed ``budget``."""
    kind = check_kind(kind)
    if budget < count_params(kind, 1, d):
        raise ParameterError(
            f"budget {budget} is below the smallest {kind} unit ({count_params(kind, 1, d)})")
    lo, hi = 1, 2
    while count_params(kind, hi, d) <= budget:
        lo, hi = hi, hi * 2
    # invariant: count(lo) <= budget < count(hi)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if count_params(kind, mid, d) <= budget:
            lo = mid
        else:
            hi = mid
    return lo
