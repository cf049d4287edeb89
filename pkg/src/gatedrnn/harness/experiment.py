"""Training protocol: data preparation, learning-rate search, early-stopped training, evaluation."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .. import data as data_mod
from ..cells import count_params, param_budget_to_units
from ..exceptions import ContractError, DataError, DivergenceError, SearchError
from ..model import (SequenceBatchItem, SequenceModel, average_nll, bptt, collate, init_model,
                     perturb_weights)
from ..numerics import RngStream
from ..optim import (Decision, EarlyStopState, RmsPropState, clip_global_norm,
                     early_stop_update, rmsprop_step, sample_log_uniform_lr)
from .config import ExperimentConfig

log = logging.getLogger(__name__)

# stream keys derived from the experiment seed
_DATA, _SPLIT, _INIT, _LR, _RUN = 1, 2, 3, 4, 5


@dataclass
class PreparedData:
    name: str
    train: List[SequenceBatchItem]
    valid: List[SequenceBatchItem]
    test: List[SequenceBatchItem]
    d_in: int
    d_out: int
    head_kind: str


@dataclass
class LearningCurveRecord:
    epoch: int
    updates: int
    wall_clock_s: float
    train_nll: float
    valid_nll: float
    lr: float


@dataclass
class ResultRow:
    dataset: str
    cell: str
    train_nll: float
    test_nll: float
    n: int
    param_count: int
    best_lr: float
    seed: int


@dataclass
class TrainResult:
    model: SequenceModel
    curves: List[LearningCurveRecord]
    lr: float
    best_epoch: int = 0
    best_valid: float = math.inf
    diverged: bool = False


@dataclass
class SearchResult:
    best_lr: float
    candidates: List[float]
    summaries: List[TrainResult] = field(default_factory=list)

    @property
    def best_index(self) -> int:
        return self.candidates.index(self.best_lr)


def prepare_data(config: ExperimentConfig) -> PreparedData:
    """Load or generate the dataset, split it, and build per-sequence items."""
    rng = RngStream(config.seed)
    if config.task == "pianoroll":
        ds = data_mod.load_pianoroll(config.data)
    elif config.task == "signal":
        if config.data:
            ds = data_mod.load_signal(config.data)
        else:
            ds = data_mod.gen_synthetic_signal(rng.fork(_DATA), config.num_seq, config.seq_len,
                                               config.num_tones)
    else:
        ds = data_mod.gen_lag_task(rng.fork(_DATA), config.num_seq, config.seq_len,
                                   config.lag, config.dim)
    split = data_mod.make_split(len(ds), config.seed + _SPLIT, config.split)

    if config.task == "signal":
        ds = data_mod.normalize_signal(ds, split.train)

        def items(idx):
            return ds.subset(idx).items(config.in_len, config.out_len, config.stride)
        d_in, d_out = config.in_len, config.out_len
    else:
        def items(idx):
            return ds.subset(idx).items()
        d_in = d_out = ds.dim
    return PreparedData(config.dataset_name, items(split.train), items(split.valid),
                        items(split.test), d_in, d_out, config.head_kind)


def resolve_model_size(config: ExperimentConfig, d_in: int) -> int:
    if config.hidden is not None and config.budget is None:
        return config.hidden
    return param_budget_to_units(config.cell, d_in, config.budget)


def build_model(config: ExperimentConfig, prepared: PreparedData) -> SequenceModel:
    n = resolve_model_size(config, prepared.d_in)
    return init_model(config.cell, n, prepared.d_in, prepared.d_out, prepared.head_kind,
                      RngStream(config.seed).fork(_INIT), config.components,
                      config.gru_variant, config.init_scale)


def batches(items: Sequence[SequenceBatchItem], size: int) -> List[SequenceBatchItem]:
    return [collate(items[i:i + size]) for i in range(0, len(items), size)]


def run_training(config: ExperimentConfig, lr: float, prepared: Optional[PreparedData] = None,
                 max_epochs: Optional[int] = None, run_key: int = 0) -> TrainResult:
    """Train one model with RMSProp, weight noise, clipping and early stopping.

    Each update draws fresh weight noise, takes the BPTT gradient at the noisy
    point, clips its global norm and applies RMSProp to the clean weights.
    Returns the parameters with the best validation NLL.
    """
    prepared = prepared or prepare_data(config)
    max_epochs = config.max_epochs if max_epochs is None else max_epochs
    model = build_model(config, prepared)
    result = TrainResult(model.copy(), [], lr)
    if max_epochs == 0:
        return result
    if not prepared.train or not prepared.valid:
        raise DataError("training needs nonempty train and validation splits")

    run_rng = RngStream(config.seed).fork(_RUN, run_key)
    noise_rng, order_rng = run_rng.fork(0), run_rng.fork(1)
    opt = RmsPropState.for_params(model.params, lr, config.rho, config.rms_eps)
    stopper = EarlyStopState(config.patience)
    valid_batches = batches(prepared.valid, 64)
    updates = 0
    start = time.monotonic()

    for epoch in range(1, max_epochs + 1):
        order = order_rng.permutation(len(prepared.train))
        nll_sum, step_sum = 0.0, 0.0
        for i in range(0, len(order), config.batch_size):
            item = collate([prepared.train[j] for j in order[i:i + config.batch_size]])
            noisy = perturb_weights(model, noise_rng, config.noise_std)
            with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
                # divergence is detected just below
                grads, nll = bptt(noisy, item)
            gnorm_ok = all(np.all(np.isfinite(g)) for g in grads.values())
            if not (math.isfinite(nll) and gnorm_ok):
                result.diverged = True
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, update {updates + 1} (lr={lr:.3g})",
                    result)
            size = float(np.prod(item.batch_shape, dtype=int))
            if size != 1.0:
                grads = {k: v / size for k, v in grads.items()}
            grads = clip_global_norm(grads, config.clip)
            params, opt = rmsprop_step(opt, model.params, grads)
            model = model.with_params(params)
            updates += 1
            nll_sum += nll
            step_sum += item.num_steps
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            valid = average_nll(model, valid_batches)
        if not math.isfinite(valid):
            result.diverged = True
            raise DivergenceError(
                f"non-finite validation NLL at epoch {epoch} (lr={lr:.3g})", result)
        result.curves.append(LearningCurveRecord(
            epoch, updates, time.monotonic() - start, nll_sum / step_sum, valid, lr))
        decision = early_stop_update(stopper, valid, epoch)
        if stopper.best_epoch == epoch:
            result.model, result.best_epoch, result.best_valid = model.copy(), epoch, valid
        log.debug("epoch %d updates %d train %.4f valid %.4f", epoch, updates,
                  nll_sum / step_sum, valid)
        if decision is Decision.STOP:
            break
    return result


def _safe_training(config, lr, prepared, epochs, key) -> TrainResult:
    try:
        return run_training(config, lr, prepared, epochs, key)
    except DivergenceError as exc:
        log.info("candidate lr=%.3g diverged: %s", lr, exc)
        return TrainResult(build_model(config, prepared), [], lr, diverged=True)


def lr_candidates(config: ExperimentConfig) -> List[float]:
    rng = RngStream(config.seed).fork(_LR)
    return [sample_log_uniform_lr(rng, config.lr_lo, config.lr_hi)
            for _ in range(config.lr_candidates)]


def run_lr_search(config: ExperimentConfig, prepared: Optional[PreparedData] = None) -> SearchResult:
    """Short run per log-uniform candidate; the lowest best-validation NLL wins.

    Ties go to the earlier candidate. Candidates may run on worker threads;
    every candidate has its own derived stream, so results do not depend on
    scheduling.
    """
    prepared = prepared or prepare_data(config)
    cands = lr_candidates(config)
    epochs = config.effective_search_epochs

    def job(k):
        return _safe_training(config, cands[k], prepared, epochs, 1000 + k)

    if config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            runs = list(pool.map(job, range(len(cands))))
    else:
        runs = [job(k) for k in range(len(cands))]
    scored = [(r.best_valid, k) for k, r in enumerate(runs)
              if not r.diverged and math.isfinite(r.best_valid)]
    if not scored and epochs > 0:
        listing = ", ".join(f"{lr:.3g}" for lr in cands)
        raise SearchError(f"all learning-rate candidates diverged: {listing}")
    best_k = min(scored)[1] if scored else 0
    return SearchResult(cands[best_k], cands, runs)


def evaluate(model: SequenceModel, items: Sequence[SequenceBatchItem]) -> float:
    """Per-timestep NLL without weight noise."""
    if not items:
        raise DataError("cannot evaluate on an empty split")
    first = items[0]
    if first.inputs.shape[-1] != model.d_in or first.targets.shape[-1] != model.d_out:
        raise ContractError(
            f"checkpoint expects d_in={model.d_in}, d_out={model.d_out}; data has "
            f"{first.inputs.shape[-1]} and {first.targets.shape[-1]}")
    return average_nll(model, batches(list(items), 64))


def result_row(config: ExperimentConfig, prepared: PreparedData, model: SequenceModel,
               lr: float) -> ResultRow:
    return ResultRow(prepared.name, model.kind, evaluate(model, prepared.train),
                     evaluate(model, prepared.test), model.n,
                     count_params(model.kind, model.n, model.d_in), lr, config.seed)


@dataclass
class ExperimentOutcome:
    row: ResultRow
    training: TrainResult
    search: Optional[SearchResult]


def run_experiment(config: ExperimentConfig, prepared: Optional[PreparedData] = None
                   ) -> ExperimentOutcome:
    """Full protocol: LR search (unless ``lr`` is fixed), final training, evaluation."""
    prepared = prepared or prepare_data(config)
    search = None
    if config.lr is not None:
        lr = config.lr
        training = run_training(config, lr, prepared)
    else:
        search = run_lr_search(config, prepared)
        lr = search.best_lr
        if config.full_search:
            training = search.summaries[search.best_index]
        else:
            training = run_training(config, lr, prepared)
    return ExperimentOutcome(result_row(config, prepared, training.model, lr), training, search)
