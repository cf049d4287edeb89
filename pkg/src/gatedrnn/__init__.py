"""Gated recurrent units (LSTM, GRU) and a tanh baseline for sequence density modeling."""
from .cells import GruVariant, count_params, param_budget_to_units
from .exceptions import (ContractError, DataError, DivergenceError, GatedRNNError, OracleError,
                         ParameterError, ParseError, SearchError, ShapeError)
from .model import SequenceBatchItem, SequenceModel, bptt, forward_nll, init_model

__version__ = "0.1.0"
