"""Central-difference gradient oracle used to certify the analytic backward passes."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .exceptions import OracleError, ParameterError
from .model import SequenceBatchItem, SequenceModel, bptt, forward_nll

Params = Dict[str, np.ndarray]


def finite_diff(loss_fn: Callable[[Params], float], params: Params,
                epsilon: float = 1e-5) -> Params:
    """``(loss(theta + eps e_i) - loss(theta - eps e_i)) / (2 eps)`` for every entry.

    ``params`` is perturbed in place one entry at a time and restored exactly.
    A bare ndarray is accepted and treated as a single tensor.
    """
    if not epsilon > 0:
        raise ParameterError(f"epsilon must be positive, got {epsilon}")
    single = isinstance(params, np.ndarray)
    tree = {"": params} if single else params
    call = (lambda _: loss_fn(params)) if single else loss_fn
    grads = {}
    for name, value in tree.items():
        g = np.zeros(value.shape, dtype=value.dtype)
        flat = value.reshape(-1)
        for idx in range(flat.size):
            old = flat[idx]
            flat[idx] = old + epsilon
            up = call(tree)
            flat[idx] = old - epsilon
            down = call(tree)
            flat[idx] = old
            if not (math.isfinite(up) and math.isfinite(down)):
                raise OracleError(f"non-finite loss while perturbing {name}[{idx}]")
            g.reshape(-1)[idx] = (up - down) / (2.0 * epsilon)
        grads[name] = g
    return grads[""] if single else grads


def relative_error(a: float, b: float, floor: float = 1e-8) -> float:
    """``|a - b| / max(|a|, |b|, floor)``."""
    return abs(a - b) / max(abs(a), abs(b), floor)


@dataclass
class GradReport:
    max_rel_error: float
    worst_parameter: Tuple[str, int]
    num_checked: int
    per_tensor: Dict[str, float] = field(default_factory=dict)

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol

    def __str__(self):
        name, idx = self.worst_parameter
        return (f"max relative error {self.max_rel_error:.3e} at {name}[{idx}] "
                f"over {self.num_checked} entries")


def compare_gradients(analytic: Params, numeric: Params, floor: float = 1e-8) -> GradReport:
    worst, worst_at, count, per_tensor = -1.0, ("", -1), 0, {}
    for name, num in numeric.items():
        ana = np.asarray(analytic[name]).reshape(-1)
        num = num.reshape(-1)
        tensor_max = 0.0
        for idx in range(num.size):
            err = relative_error(float(ana[idx]), float(num[idx]), floor)
            tensor_max = max(tensor_max, err)
            if err > worst:
                worst, worst_at = err, (name, idx)
        per_tensor[name] = tensor_max
        count += num.size
    if count == 0:
        raise ParameterError("no gradient entries to check")
    return GradReport(worst, worst_at, count, per_tensor)


def check_model_gradients(model: SequenceModel, item: SequenceBatchItem,
                          epsilon: float = 1e-5, analytic: Optional[Params] = None,
                          oracle_dtype=np.longdouble) -> GradReport:
    """Compare :func:`bptt` against central differences of :func:`forward_nll`.

    BPTT runs in float64 as in training. The oracle re-evaluates the forward
    pass in ``oracle_dtype`` (extended precision where the platform has it) so
    its roundoff stays far below the 1e-8 relative-error floor even for
    gradient entries near zero. ``analytic`` overrides the BPTT gradients, for
    fault-injection tests. The model must be noise-free; it is not modified.
    """
    if analytic is None:
        analytic, _ = bptt(model, item)
    wide = SequenceBatchItem(
        item.inputs.astype(oracle_dtype), item.targets.astype(oracle_dtype),
        None if item.mask is None else item.mask.astype(oracle_dtype))
    params = {k: v.astype(oracle_dtype) for k, v in model.params.items()}

    def loss(p):
        return forward_nll(model.with_params(p), wide).total_nll

    numeric = finite_diff(loss, params, epsilon)
    numeric = {k: v.astype(np.float64) for k, v in numeric.items()}
    return compare_gradients(analytic, numeric)


SUITE_CASES = (("tanh", "-"), ("lstm", "-"), ("gru", "candidate"), ("gru", "projection"))


def random_case(seed: int, kind: str, head_kind: str, variant: str = "candidate",
                max_n: int = 8, max_d: int = 5, max_t: int = 6):
    """Small random model and sequence for one gradient check.

    Weights keep their random initialization; biases (zero at init, apart
    from the LSTM forget gate) get an N(0, 0.5) draw so the bias paths are
    checked away from that degenerate point.
    """
    from .cells import is_bias
    from .model import init_model
    from .numerics import RngStream

    rng = RngStream(seed).fork(0x6C, ("tanh", "lstm", "gru").index(kind), len(variant))
    n = int(rng.integers(2, max_n + 1))
    d_in = int(rng.integers(1, max_d + 1))
    T = int(rng.integers(2, max_t + 1))
    d_out = d_in if head_kind == "bernoulli" else int(rng.integers(1, max_d + 1))
    variant = "candidate" if variant == "-" else variant
    model = init_model(kind, n, d_in, d_out, head_kind, rng.fork(1), components=3,
                       gru_variant=variant)
    jitter = rng.fork(2)
    model = model.with_params({k: v + jitter.normal(v.shape, 0.0, 0.5) if is_bias(k) else v
                               for k, v in model.params.items()})
    inputs = rng.normal((T, d_in))
    if head_kind == "bernoulli":
        targets = rng.bits((T, d_out))
    else:
        targets = rng.normal((T, d_out))
    return model, SequenceBatchItem(inputs, targets)


def run_suite(seeds: int = 10, epsilon: float = 1e-5, head_kinds=("bernoulli", "gmm")):
    """Every cell kind (both GRU variants) times every head, over ``seeds`` seeds."""
    reports = []
    for kind, variant in SUITE_CASES:
        for head_kind in head_kinds:
            for seed in range(seeds):
                model, item = random_case(seed, kind, head_kind, variant)
                reports.append(((kind, variant, head_kind, seed),
                                check_model_gradients(model, item, epsilon)))
    return reports
