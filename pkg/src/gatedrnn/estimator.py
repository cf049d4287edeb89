"""scikit-learn style wrapper: a recurrent sequence density estimator.

``X`` is a list of sequences. With the Bernoulli head each sequence is a
binary ``(T, d)`` array modeled step by step (frame ``t`` predicts frame
``t + 1``). With the mixture head each sequence is a 1-D real signal cut into
``in_len``/``out_len`` windows.
"""
from __future__ import annotations

from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import make_split, window_signal
from .exceptions import DataError, ParameterError
from .heads import HEAD_KINDS
from .model import SequenceBatchItem, SequenceModel, forward_nll, initial_state, step
from .numerics import DTYPE


def check_sequences(X, head: str = "bernoulli", dim: Optional[int] = None,
                    min_len: int = 2) -> List[np.ndarray]:
    """Validate a list of sequences and return float64 copies.

    Bernoulli sequences must be 2-D, binary and share one frame dimension
    (``dim`` when given). Signals must be 1-D and finite.
    """
    if head not in HEAD_KINDS:
        raise ParameterError(f"unknown head {head!r}")
    if isinstance(X, np.ndarray) and X.dtype != object and X.ndim in (2, 3) and head == "gmm":
        X = list(X)
    elif isinstance(X, np.ndarray) and X.dtype != object and X.ndim == 3:
        X = list(X)
    if isinstance(X, (str, bytes)) or not hasattr(X, "__len__") or len(X) == 0:
        raise DataError("X must be a nonempty list of sequences")
    out = []
    for i, seq in enumerate(X):
        arr = np.array(seq, dtype=DTYPE)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"sequence {i} contains non-finite values")
        if head == "bernoulli":
            if arr.ndim != 2:
                raise DataError(f"sequence {i}: expected a (T, d) array, got shape {arr.shape}")
            if np.any((arr != 0) & (arr != 1)):
                raise DataError(f"sequence {i} is not binary")
            dim = arr.shape[1] if dim is None else dim
            if arr.shape[1] != dim:
                raise DataError(f"sequence {i} has dimension {arr.shape[1]}, expected {dim}")
        elif arr.ndim != 1:
            raise DataError(f"sequence {i}: expected a 1-D signal, got shape {arr.shape}")
        if len(arr) < min_len:
            raise DataError(f"sequence {i} has {len(arr)} steps, need at least {min_len}")
        out.append(arr)
    return out


class RecurrentDensityEstimator(BaseEstimator):
    """Train a tanh/GRU/LSTM network to maximize sequence log-likelihood.

    ``lr=None`` runs the log-uniform learning-rate search over
    ``lr_candidates`` draws. A ``valid_fraction`` of the sequences is held
    out for early stopping.
    """

    def __init__(self, cell: str = "gru", hidden: Optional[int] = None,
                 budget: Optional[int] = None, head: str = "bernoulli",
                 gru_variant: str = "candidate", lr: Optional[float] = None,
                 lr_candidates: int = 10, max_epochs: int = 100, patience: int = 20,
                 batch_size: int = 1, noise_std: float = 0.075, clip: float = 1.0,
                 components: int = 20, in_len: int = 20, out_len: int = 10,
                 valid_fraction: float = 0.1, random_state: int = 0):
        self.cell = cell
        self.hidden = hidden
        self.budget = budget
        self.head = head
        self.gru_variant = gru_variant
        self.lr = lr
        self.lr_candidates = lr_candidates
        self.max_epochs = max_epochs
        self.patience = patience
        self.batch_size = batch_size
        self.noise_std = noise_std
        self.clip = clip
        self.components = components
        self.in_len = in_len
        self.out_len = out_len
        self.valid_fraction = valid_fraction
        self.random_state = random_state

    def _items(self, seqs: Sequence[np.ndarray]) -> List[SequenceBatchItem]:
        if self.head == "gmm":
            return [window_signal(s, self.in_len, self.out_len) for s in seqs]
        return [SequenceBatchItem(s[:-1], s[1:]) for s in seqs]

    def _config(self):
        from .harness.config import ExperimentConfig
        # task only selects the head here; the data is passed in directly
        return ExperimentConfig(
            task="signal" if self.head == "gmm" else "lag", cell=self.cell,
            hidden=self.hidden, budget=self.budget, gru_variant=self.gru_variant,
            seed=self.random_state, lr=self.lr, lr_candidates=self.lr_candidates,
            max_epochs=self.max_epochs, patience=self.patience, batch_size=self.batch_size,
            noise_std=self.noise_std, clip=self.clip, components=self.components,
            in_len=self.in_len, out_len=self.out_len)

    def fit(self, X, y=None):
        from .harness.experiment import PreparedData, run_lr_search, run_training

        if not 0 < self.valid_fraction < 1:
            raise ParameterError("valid_fraction must lie in (0, 1)")
        min_len = self.in_len + self.out_len if self.head == "gmm" else 2
        seqs = check_sequences(X, self.head, min_len=min_len)
        if len(seqs) < 2:
            raise DataError("need at least two sequences (one is held out for validation)")
        config = self._config()
        n_valid = max(1, int(round(self.valid_fraction * len(seqs))))
        order = make_split(len(seqs), self.random_state,
                           (1 - n_valid / len(seqs), n_valid / len(seqs) / 2,
                            n_valid / len(seqs) / 2)) if len(seqs) >= 3 else None
        if order is None:
            train_idx, valid_idx = [0], [1]
        else:
            train_idx, valid_idx = list(order.train), list(order.valid) + list(order.test)
        items = self._items(seqs)
        d_in = items[0].inputs.shape[-1]
        d_out = items[0].targets.shape[-1]
        prepared = PreparedData("fit", [items[i] for i in train_idx],
                                [items[i] for i in valid_idx], [], d_in, d_out, self.head)
        if config.lr is None:
            self.search_ = run_lr_search(config, prepared)
            lr = self.search_.best_lr
        else:
            self.search_, lr = None, config.lr
        result = run_training(config, lr, prepared)
        self.model_: SequenceModel = result.model
        self.curves_ = result.curves
        self.lr_ = lr
        self.best_valid_nll_ = result.best_valid
        self.n_features_in_ = d_in if self.head == "bernoulli" else 1
        return self

    def _check(self, X):
        check_is_fitted(self, "model_")
        dim = self.model_.d_in if self.head == "bernoulli" else None
        min_len = self.in_len + self.out_len if self.head == "gmm" else 2
        return check_sequences(X, self.head, dim=dim, min_len=min_len)

    def score_samples(self, X) -> np.ndarray:
        """Per-sequence average log-likelihood per step (nats, higher is better)."""
        seqs = self._check(X)
        out = []
        for item in self._items(seqs):
            res = forward_nll(self.model_, item)
            out.append(-res.total_nll / item.num_steps)
        return np.asarray(out)

    def score(self, X, y=None) -> float:
        """Average log-likelihood per step over all of ``X``."""
        seqs = self._check(X)
        total, steps = 0.0, 0.0
        for item in self._items(seqs):
            total += forward_nll(self.model_, item).total_nll
            steps += item.num_steps
        return -total / steps

    def transform(self, X) -> np.ndarray:
        """Final hidden state of each sequence, shape ``(len(X), n)``."""
        seqs = self._check(X)
        feats = []
        cell = self.model_.cell
        for item in self._items(seqs):
            state = initial_state(self.model_)
            for x in item.inputs:
                state, _ = step(self.model_, cell, state, x)
            feats.append(state.h if hasattr(state, "h") else state)
        return np.stack(feats)
