"""Dense linear algebra helpers, stable nonlinearities and a seeded random stream.

Vectors and matrices are plain ``float64`` numpy arrays. A diagonal matrix is
stored as its diagonal (a 1-D array). Most helpers accept an optional leading
batch axis so the recurrent code can process several sequences at once.
"""
from __future__ import annotations

from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .exceptions import ParameterError, ShapeError

ArrayTree = Union[Mapping[str, np.ndarray], Sequence[np.ndarray]]

DTYPE = np.float64


def as_real(values) -> np.ndarray:
    """Array view of ``values`` in float64, or wider if already wider."""
    a = np.asarray(values)
    return a.astype(np.result_type(a.dtype, DTYPE), copy=False)


def as_vector(values) -> np.ndarray:
    v = as_real(values)
    if v.ndim == 0:
        v = v.reshape(1)
    return v


def mat_vec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product ``m @ v``.

    ``v`` may carry a leading batch axis, in which case every row of ``v`` is
    multiplied and the result has shape ``(batch, m.rows)``.
    """
    m = as_real(m)
    v = as_real(v)
    if m.ndim != 2 or v.shape[-1] != m.shape[1]:
        raise ShapeError(f"cannot multiply {m.shape} matrix by vector of shape {v.shape}")
    return v @ m.T


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = as_real(a)
    b = as_real(b)
    if a.shape != b.shape:
        raise ShapeError(f"elementwise product of shapes {a.shape} and {b.shape}")
    return a * b


def sigmoid_vec(v: np.ndarray) -> np.ndarray:
    """Logistic sigmoid that never evaluates ``exp`` of a positive argument."""
    v = as_real(v)
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh_vec(v: np.ndarray) -> np.ndarray:
    return np.tanh(as_real(v))


def _leaves(tensors) -> Iterable[np.ndarray]:
    if isinstance(tensors, Mapping):
        return tensors.values()
    return tensors


def global_norm(tensors: ArrayTree) -> float:
    """Euclidean norm of the concatenation of every tensor in ``tensors``."""
    leaves = list(_leaves(tensors))
    if not leaves:
        raise ParameterError("global_norm needs at least one tensor")
    total = 0.0
    for t in leaves:
        t = as_real(t)
        total += float(np.dot(t.ravel(), t.ravel()))
    return float(np.sqrt(total))


def logsumexp(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """``log(sum(exp(v)))`` along ``axis`` with max subtraction."""
    v = as_real(v)
    if v.shape[axis] == 0:
        raise ShapeError("logsumexp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    out = np.log(np.sum(np.exp(v - m), axis=axis)) + np.squeeze(m, axis=axis)
    return out if out.ndim else out[()]


class RngStream:
    """Seeded, counter-based random stream (Philox).

    Two streams built from the same seed produce bit-identical draws on any
    platform. Independent sub-streams are derived with :meth:`fork`, never by
    sharing one stream between workers.
    """

    def __init__(self, seed: int, _key: tuple = ()):
        self.seed = int(seed)
        self._key = tuple(_key)
        seq = np.random.SeedSequence(self.seed & 0xFFFFFFFFFFFFFFFF, spawn_key=self._key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def fork(self, *key: int) -> "RngStream":
        """Derive an independent stream from this one's seed and ``key``."""
        return RngStream(self.seed, self._key + tuple(int(k) for k in key))

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(mean, std, size=shape)

    def uniform(self, low=0.0, high=1.0, shape=()):
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low, high=None, shape=None):
        return self._gen.integers(low, high, size=shape)

    def bits(self, shape, p: float = 0.5) -> np.ndarray:
        return (self._gen.random(size=shape) < p).astype(DTYPE)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, key={self._key})"


def gaussian_sample(rng: RngStream, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """I.i.d. normal draws; ``std == 0`` yields the constant ``mean``."""
    if std < 0:
        raise ParameterError(f"standard deviation must be non-negative, got {std}")
    if std == 0:
        return np.full(shape, float(mean), dtype=DTYPE)
    return rng.normal(shape, mean, std)
