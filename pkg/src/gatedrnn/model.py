"""Generative recurrent sequence model: unrolled likelihood and exact BPTT.

A :class:`SequenceModel` couples one recurrent unit with one output head. Its
parameters live in a single flat dict whose keys are prefixed ``cell.`` or
``head.``; gradients use exactly the same keys, so optimizers, clipping and
the finite-difference oracle can treat them as plain name -> array trees.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Sequence

import numpy as np

from . import cells as cells_mod
from . import heads as heads_mod
from .cells import GruVariant, LstmState, cell_backstep, check_kind
from .exceptions import ContractError, DataError, ParseError, ShapeError
from .numerics import DTYPE, RngStream, as_real, gaussian_sample

Params = Dict[str, np.ndarray]
Gradients = Dict[str, np.ndarray]

CHECKPOINT_FORMAT = "gatedrnn-checkpoint-v1"


@dataclass
class SequenceModel:
    kind: str
    n: int
    d_in: int
    d_out: int
    head_kind: str
    params: Params
    components: int = 20
    gru_variant: GruVariant = GruVariant.CANDIDATE_GATED

    def __post_init__(self):
        self.kind = check_kind(self.kind)
        self.head_kind = heads_mod.check_head_kind(self.head_kind)
        self.gru_variant = GruVariant(self.gru_variant)
        expected = expected_shapes(self.kind, self.n, self.d_in, self.d_out,
                                   self.head_kind, self.components)
        if set(expected) != set(self.params):
            raise ContractError(
                f"parameter names {sorted(self.params)} do not match {sorted(expected)}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name} has shape {self.params[name].shape}, expected {shape}")

    @property
    def cell(self) -> Params:
        return {k[5:]: v for k, v in self.params.items() if k.startswith("cell.")}

    @property
    def head(self) -> Params:
        return {k[5:]: v for k, v in self.params.items() if k.startswith("head.")}

    def with_params(self, params: Params) -> "SequenceModel":
        return replace(self, params=params)

    def copy(self) -> "SequenceModel":
        return self.with_params({k: v.copy() for k, v in self.params.items()})

    @property
    def num_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def expected_shapes(kind, n, d_in, d_out, head_kind, components=20) -> Dict[str, tuple]:
    shapes = {f"cell.{k}": v for k, v in cells_mod.param_shapes(kind, n, d_in).items()}
    shapes.update({f"head.{k}": v for k, v in
                   heads_mod.head_shapes(head_kind, n, d_out, components).items()})
    return shapes


def init_model(kind: str, n: int, d_in: int, d_out: int, head_kind: str, rng: RngStream,
               components: int = 20, gru_variant=GruVariant.CANDIDATE_GATED,
               scale: float = 1.0) -> SequenceModel:
    cell = cells_mod.init_params(kind, n, d_in, rng.fork(0), scale)
    head = heads_mod.init_head(head_kind, n, d_out, rng.fork(1), scale, components)
    params = {f"cell.{k}": v for k, v in cell.items()}
    params.update({f"head.{k}": v for k, v in head.items()})
    return SequenceModel(kind, n, d_in, d_out, head_kind, params, components, gru_variant)


@dataclass
class SequenceBatchItem:
    """Inputs ``(T, [B,] d_in)`` and targets ``(T, [B,] d_out)``.

    ``mask`` (shape ``(T, [B])``) weights each step's NLL; it is only needed
    when sequences of different lengths are padded into one batch.
    """

    inputs: np.ndarray
    targets: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.inputs = as_real(self.inputs)
        self.targets = as_real(self.targets)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        if self.targets.ndim == 1:
            self.targets = self.targets[:, None]
        if len(self.inputs) != len(self.targets):
            raise DataError(
                f"{len(self.inputs)} input steps but {len(self.targets)} target steps")
        if self.inputs.shape[1:-1] != self.targets.shape[1:-1]:
            raise DataError("inputs and targets disagree on the batch axis")
        if self.mask is not None:
            self.mask = as_real(self.mask)
            if self.mask.shape != self.inputs.shape[:-1]:
                raise DataError(f"mask shape {self.mask.shape} != {self.inputs.shape[:-1]}")

    def __len__(self):
        return len(self.inputs)

    @property
    def batch_shape(self) -> tuple:
        return self.inputs.shape[1:-1]

    @property
    def num_steps(self) -> float:
        """Number of scored steps (summed over the batch)."""
        if self.mask is not None:
            return float(self.mask.sum())
        return float(len(self) * int(np.prod(self.batch_shape, dtype=int)))


def collate(items: Sequence[SequenceBatchItem]) -> SequenceBatchItem:
    """Stack single sequences into one batch, zero-padding to the longest."""
    if not items:
        raise DataError("cannot collate an empty list of sequences")
    if len(items) == 1:
        return items[0]
    t_max = max(len(it) for it in items)
    lengths = [len(it) for it in items]
    d_in, d_out = items[0].inputs.shape[-1], items[0].targets.shape[-1]
    b = len(items)
    x = np.zeros((t_max, b, d_in))
    y = np.zeros((t_max, b, d_out))
    mask = np.zeros((t_max, b))
    for j, it in enumerate(items):
        if it.batch_shape:
            raise DataError("collate expects unbatched sequences")
        x[: len(it), j] = it.inputs
        y[: len(it), j] = it.targets
        mask[: len(it), j] = 1.0 if it.mask is None else it.mask
    if min(lengths) == t_max and all(it.mask is None for it in items):
        return SequenceBatchItem(x, y)
    return SequenceBatchItem(x, y, mask)


class ForwardResult(NamedTuple):
    total_nll: float
    per_step: np.ndarray
    traces: list
    head_caches: list
    final_state: object


def _check_item(model: SequenceModel, item: SequenceBatchItem):
    if len(item) == 0:
        raise DataError("empty sequence")
    if item.inputs.shape[-1] != model.d_in or item.targets.shape[-1] != model.d_out:
        raise ShapeError(
            f"model expects d_in={model.d_in}, d_out={model.d_out}; item has "
            f"{item.inputs.shape[-1]} and {item.targets.shape[-1]}")


def initial_state(model: SequenceModel, batch_shape=()):
    h = np.zeros(tuple(batch_shape) + (model.n,))
    if model.kind == "lstm":
        return LstmState(h, h.copy())
    return h


def step(model: SequenceModel, cell: Params, state, x):
    if model.kind == "tanh":
        return cells_mod.tanh_step(cell, state, x)
    if model.kind == "gru":
        return cells_mod.gru_step(cell, state, x, model.gru_variant)
    return cells_mod.lstm_step(cell, state, x)


def _hidden(state):
    return state.h if isinstance(state, LstmState) else state


def forward_nll(model: SequenceModel, item: SequenceBatchItem, state=None) -> ForwardResult:
    """Unroll the model over ``item`` and score every target.

    The state starts at zero unless ``state`` is given. ``per_step[t]`` is the
    NLL of ``targets[t]`` after consuming ``inputs[:t + 1]``.
    """
    _check_item(model, item)
    cell, head = model.cell, model.head
    if state is None:
        state = initial_state(model, item.batch_shape)
    traces, caches, per_step = [], [], []
    for t in range(len(item)):
        state, trace = step(model, cell, state, item.inputs[t])
        cache = heads_mod.head_forward(model.head_kind, head, _hidden(state))
        nll = heads_mod.head_nll(cache, item.targets[t])
        if item.mask is not None:
            nll = nll * item.mask[t]
        traces.append(trace)
        caches.append(cache)
        per_step.append(nll)
    per_step = as_real(per_step)
    if per_step.dtype == DTYPE:
        total = math.fsum(per_step.ravel())
    else:
        total = per_step.sum()
    return ForwardResult(total, per_step, traces, caches, state)


def bptt(model: SequenceModel, item: SequenceBatchItem):
    """Exact gradient of the total NLL over the whole (untruncated) sequence.

    Returns ``(gradients, total_nll)``; gradient keys match ``model.params``.
    """
    fwd = forward_nll(model, item)
    cell, head = model.cell, model.head
    grads = {k: np.zeros_like(v) for k, v in model.params.items()}
    grad_h = np.zeros(item.batch_shape + (model.n,))
    grad_c = np.zeros_like(grad_h) if model.kind == "lstm" else None
    for t in range(len(item) - 1, -1, -1):
        cache = fwd.head_caches[t]
        weight = None if item.mask is None else item.mask[t]
        hg, gh = heads_mod.head_backward(model.head_kind, head, cache.h, item.targets[t],
                                         cache, weight)
        for k, v in hg.items():
            grads["head." + k] += v
        back = cell_backstep(model.kind, cell, fwd.traces[t], grad_h + gh, grad_c)
        for k, v in back.grads.items():
            grads["cell." + k] += v
        grad_h, grad_c = back.grad_h_prev, back.grad_c_prev
    return grads, fwd.total_nll


def perturb_weights(model: SequenceModel, rng: RngStream, std: float = 0.075) -> SequenceModel:
    """Copy of ``model`` with N(0, std^2) noise on every weight and peephole.

    Biases are copied unchanged. The input model is never modified.
    """
    noisy = {}
    for name in sorted(model.params):
        value = model.params[name]
        if cells_mod.is_bias(name) or std == 0:
            noisy[name] = value.copy()
        else:
            noisy[name] = value + gaussian_sample(rng, value.shape, 0.0, std)
    return model.with_params({k: noisy[k] for k in model.params})


def average_nll(model: SequenceModel, dataset: Sequence[SequenceBatchItem]) -> float:
    """Per-timestep NLL in nats: summed sequence NLL over summed length."""
    if len(dataset) == 0:
        raise DataError("cannot average over an empty dataset")
    totals, steps = [], 0.0
    for item in dataset:
        totals.append(forward_nll(model, item).total_nll)
        steps += item.num_steps
    return math.fsum(totals) / steps


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: SequenceModel, path, extra: Optional[dict] = None) -> Path:
    """Write an ``.npz`` container: a JSON header plus little-endian float64 tensors."""
    path = Path(path)
    meta = {"format": CHECKPOINT_FORMAT, "kind": model.kind, "n": model.n,
            "d_in": model.d_in, "d_out": model.d_out, "head_kind": model.head_kind,
            "components": model.components, "gru_variant": model.gru_variant.value,
            "names": list(model.params)}
    if extra:
        meta["extra"] = extra
    arrays = {f"param/{k}": np.ascontiguousarray(v, dtype="<f8") for k, v in model.params.items()}
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> SequenceModel:
    try:
        with np.load(Path(path), allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise ParseError(f"{path}: not a {CHECKPOINT_FORMAT} file")
            params = {k: data[f"param/{k}"].astype(DTYPE) for k in meta["names"]}
    except (KeyError, ValueError, OSError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path}: unreadable checkpoint ({exc})") from exc
    return SequenceModel(meta["kind"], meta["n"], meta["d_in"], meta["d_out"],
                         meta["head_kind"], params, meta["components"], meta["gru_variant"])


def checkpoint_metadata(path) -> dict:
    with np.load(Path(path), allow_pickle=False) as data:
        return json.loads(str(data["meta"]))
