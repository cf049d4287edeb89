"""Datasets: piano-roll sequences, raw-signal windows, synthetic generators and splits.

File formats
------------
Piano-roll text (``pianoroll v1``)::

    pianoroll v1 dim=88
    0,2;1;-
    5;5,7

One sequence per line; timesteps separated by ``;``; active note indices
within a timestep separated by ``,``; an empty timestep is written ``-``.
Blank lines and lines starting with ``#`` are ignored.

Signal text (``signal v1``)::

    signal v1 count=2
    0.1 0.25 -0.3 ...
    ...

Signal binary: a 16-byte little-endian header ``b"SGNL"``, ``uint32`` version
(1), ``uint64`` sequence count; then per sequence a ``uint32`` sample count
followed by that many ``float32`` samples.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .exceptions import DataError, ParameterError, ParseError
from .model import SequenceBatchItem
from .numerics import DTYPE, RngStream

Timestep = Tuple[int, ...]

PIANOROLL_MAGIC = "pianoroll v1"
SIGNAL_MAGIC = "signal v1"
SIGNAL_BINARY_MAGIC = b"SGNL"
SIGNAL_BINARY_VERSION = 1


# -- piano-roll --------------------------------------------------------------

@dataclass
class PianoRollDataset:
    dim: int
    sequences: List[List[Timestep]]
    name: str = "pianoroll"

    def __post_init__(self):
        if self.dim < 1:
            raise DataError(f"piano-roll dimension must be positive, got {self.dim}")
        clean = []
        for s, seq in enumerate(self.sequences):
            if len(seq) < 2:
                raise DataError(f"sequence {s} has {len(seq)} steps; at least 2 are needed")
            steps = []
            for step in seq:
                idx = tuple(sorted(set(int(i) for i in step)))
                if idx and (idx[0] < 0 or idx[-1] >= self.dim):
                    raise DataError(f"sequence {s}: index outside [0, {self.dim}) in {idx}")
                steps.append(idx)
            clean.append(steps)
        self.sequences = clean

    def __len__(self):
        return len(self.sequences)

    def subset(self, indices: Iterable[int]) -> "PianoRollDataset":
        return PianoRollDataset(self.dim, [self.sequences[i] for i in indices], self.name)

    def items(self) -> List[SequenceBatchItem]:
        return [pianoroll_item(seq, self.dim) for seq in self.sequences]


def binarize_step(active: Iterable[int], dim: int) -> np.ndarray:
    """0/1 vector of length ``dim`` with ones at ``active``."""
    v = np.zeros(dim, dtype=DTYPE)
    for i in active:
        if not 0 <= i < dim:
            raise DataError(f"index {i} outside [0, {dim})")
        v[i] = 1.0
    return v


def active_indices(frame) -> Timestep:
    return tuple(int(i) for i in np.flatnonzero(np.asarray(frame) > 0.5))


def pianoroll_item(seq: Sequence[Timestep], dim: int) -> SequenceBatchItem:
    """Next-step pairing: input step ``t`` predicts step ``t + 1``."""
    frames = np.stack([binarize_step(step, dim) for step in seq])
    return SequenceBatchItem(frames[:-1], frames[1:])


def format_pianoroll(ds: PianoRollDataset) -> str:
    lines = [f"{PIANOROLL_MAGIC} dim={ds.dim}"]
    for seq in ds.sequences:
        lines.append(";".join(",".join(map(str, step)) if step else "-" for step in seq))
    return "\n".join(lines) + "\n"


def _header(lines: Sequence[str], magic: str, key: str) -> Tuple[int, int]:
    """Parse ``<magic> <key>=<int>`` on the first non-comment line.

    Returns the integer and the number of lines consumed.
    """
    for idx, raw in enumerate(lines):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head = line.split()
        if " ".join(head[:2]) != magic or len(head) != 3 or not head[2].startswith(key + "="):
            raise ParseError(f"expected header '{magic} {key}=<n>'", line=idx + 1)
        try:
            return int(head[2][len(key) + 1:]), idx + 1
        except ValueError:
            raise ParseError(f"bad {key} {head[2]!r}", line=idx + 1) from None
    raise ParseError(f"missing '{magic}' header", line=max(len(lines), 1))


def parse_pianoroll(text: str, name: str = "pianoroll") -> PianoRollDataset:
    lines = text.splitlines()
    dim, start = _header(lines, PIANOROLL_MAGIC, "dim")
    sequences = []
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        seq = []
        for token in line.split(";"):
            token = token.strip()
            if token == "-":
                seq.append(())
                continue
            if not token:
                raise ParseError("empty timestep (write '-' for silence)", line=lineno)
            try:
                step = tuple(int(i) for i in token.split(","))
            except ValueError:
                raise ParseError(f"bad timestep {token!r}", line=lineno) from None
            bad = [i for i in step if not 0 <= i < dim]
            if bad:
                raise DataError(f"line {lineno}: index {bad[0]} outside [0, {dim})")
            seq.append(step)
        if len(seq) < 2:
            raise DataError(f"line {lineno}: sequence needs at least 2 timesteps")
        sequences.append(seq)
    return PianoRollDataset(dim, sequences, name)


def load_pianoroll(path) -> PianoRollDataset:
    path = Path(path)
    return parse_pianoroll(path.read_text(), name=path.stem)


def save_pianoroll(ds: PianoRollDataset, path) -> Path:
    path = Path(path)
    path.write_text(format_pianoroll(ds))
    return path


# -- raw signal --------------------------------------------------------------

@dataclass
class SignalDataset:
    sequences: List[np.ndarray]
    sample_mean: float = 0.0
    sample_std: float = 1.0
    name: str = "signal"

    def __post_init__(self):
        self.sequences = [np.asarray(s, dtype=DTYPE).ravel() for s in self.sequences]

    def __len__(self):
        return len(self.sequences)

    def subset(self, indices: Iterable[int]) -> "SignalDataset":
        return SignalDataset([self.sequences[i] for i in indices],
                             self.sample_mean, self.sample_std, self.name)

    def items(self, in_len: int = 20, out_len: int = 10,
              stride: Optional[int] = None) -> List[SequenceBatchItem]:
        return [window_signal(s, in_len, out_len, stride) for s in self.sequences]


def window_signal(seq, in_len: int = 20, out_len: int = 10,
                  stride: Optional[int] = None) -> SequenceBatchItem:
    """Slide a window over ``seq``: read ``in_len`` samples, predict the next ``out_len``.

    The window advances by ``stride`` (default ``out_len``, so every predicted
    sample is predicted exactly once).
    """
    seq = np.asarray(seq, dtype=DTYPE).ravel()
    stride = out_len if stride is None else stride
    if in_len < 1 or out_len < 1 or stride < 1:
        raise ParameterError("window lengths and stride must be positive")
    if len(seq) < in_len + out_len:
        raise DataError(f"sequence of length {len(seq)} is shorter than one window "
                        f"({in_len} + {out_len})")
    steps = (len(seq) - in_len - out_len) // stride + 1
    starts = np.arange(steps) * stride
    inputs = np.stack([seq[s:s + in_len] for s in starts])
    targets = np.stack([seq[s + in_len:s + in_len + out_len] for s in starts])
    return SequenceBatchItem(inputs, targets)


def signal_stats(sequences: Sequence[np.ndarray]) -> Tuple[float, float]:
    allv = np.concatenate([np.asarray(s, dtype=DTYPE).ravel() for s in sequences])
    return float(allv.mean()), float(allv.std())


def normalize_signal(ds: SignalDataset, reference: Optional[Iterable[int]] = None) -> SignalDataset:
    """Shift and scale every sequence by statistics of ``reference`` sequences.

    With ``reference=None`` the whole dataset is used. The applied mean/std are
    recorded (composed with any earlier normalization).
    """
    ref = ds.sequences if reference is None else [ds.sequences[i] for i in reference]
    mean, std = signal_stats(ref)
    if not std > 0:
        raise DataError("cannot normalize a constant signal")
    out = [(s - mean) / std for s in ds.sequences]
    return SignalDataset(out, ds.sample_mean + ds.sample_std * mean, ds.sample_std * std, ds.name)


def format_signal(ds: SignalDataset) -> str:
    lines = [f"{SIGNAL_MAGIC} count={len(ds)}"]
    lines += [" ".join(repr(float(v)) for v in s) for s in ds.sequences]
    return "\n".join(lines) + "\n"


def parse_signal(text: str, name: str = "signal") -> SignalDataset:
    lines = text.splitlines()
    count, start = _header(lines, SIGNAL_MAGIC, "count")
    seqs = []
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        try:
            seqs.append(np.array([float(tok) for tok in raw.split()], dtype=DTYPE))
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
    if len(seqs) != count:
        raise DataError(f"header announces {count} sequences, found {len(seqs)}")
    return SignalDataset(seqs, name=name)


def save_signal_binary(ds: SignalDataset, path) -> Path:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(SIGNAL_BINARY_MAGIC + struct.pack("<IQ", SIGNAL_BINARY_VERSION, len(ds)))
        for s in ds.sequences:
            fh.write(struct.pack("<I", len(s)))
            fh.write(np.asarray(s, dtype="<f4").tobytes())
    return path


def load_signal_binary(path) -> SignalDataset:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < 16 or blob[:4] != SIGNAL_BINARY_MAGIC:
        raise ParseError(f"{path}: missing {SIGNAL_BINARY_MAGIC!r} header")
    version, count = struct.unpack_from("<IQ", blob, 4)
    if version != SIGNAL_BINARY_VERSION:
        raise ParseError(f"{path}: unsupported version {version}")
    pos, seqs = 16, []
    for k in range(count):
        if pos + 4 > len(blob):
            raise ParseError(f"{path}: truncated before sequence {k}")
        (length,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        end = pos + 4 * length
        if end > len(blob):
            raise ParseError(f"{path}: sequence {k} truncated")
        seqs.append(np.frombuffer(blob[pos:end], dtype="<f4").astype(DTYPE))
        pos = end
    if pos != len(blob):
        raise ParseError(f"{path}: {len(blob) - pos} trailing bytes")
    return SignalDataset(seqs, name=path.stem)


def load_signal(path) -> SignalDataset:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == SIGNAL_BINARY_MAGIC:
        return load_signal_binary(path)
    return parse_signal(path.read_text(), name=path.stem)


def save_signal(ds: SignalDataset, path) -> Path:
    path = Path(path)
    path.write_text(format_signal(ds))
    return path


# -- synthetic generators ----------------------------------------------------

@dataclass
class LagTaskDataset:
    """Binary delayed-recall sequences.

    ``inputs`` and ``targets`` have shape ``(num_seq, T, dim)``. Inputs are
    fair coin flips; the target at step ``t`` (0-based) is the input from
    ``lag`` steps earlier, and the all-zero frame while ``t < lag``.
    """

    dim: int
    lag: int
    inputs: np.ndarray
    targets: np.ndarray
    name: str = "lag"

    def __len__(self):
        return len(self.inputs)

    def subset(self, indices: Iterable[int]) -> "LagTaskDataset":
        idx = list(indices)
        return LagTaskDataset(self.dim, self.lag, self.inputs[idx], self.targets[idx], self.name)

    def items(self) -> List[SequenceBatchItem]:
        return [SequenceBatchItem(x, y) for x, y in zip(self.inputs, self.targets)]

    def as_pianoroll(self) -> PianoRollDataset:
        """The input streams as a piano-roll dataset."""
        return PianoRollDataset(self.dim, [[active_indices(f) for f in seq] for seq in self.inputs],
                                self.name)


def gen_lag_task(rng: RngStream, num_seq: int, T: int, lag: int, dim: int) -> LagTaskDataset:
    if not T > lag:
        raise ParameterError(f"sequence length {T} must exceed the lag {lag}")
    if lag < 0 or dim < 1 or num_seq < 1:
        raise ParameterError("lag must be non-negative; dim and num_seq positive")
    x = rng.bits((num_seq, T, dim))
    y = np.zeros_like(x)
    y[:, lag:] = x[:, : T - lag]
    return LagTaskDataset(dim, lag, x, y)


def gen_synthetic_signal(rng: RngStream, num_seq: int, length: int, num_tones: int,
                         noise_frac: float = 0.1) -> SignalDataset:
    """Sums of random sinusoids plus Gaussian noise, normalized to zero mean and unit std.

    Each tone has amplitude in [0.5, 1.5], frequency in [0.005, 0.1] cycles
    per sample and uniform phase. The noise std is ``noise_frac`` times the
    clean signal's RMS, or 1 when there are no tones.
    """
    if length < 30:
        raise ParameterError(f"signal length must be at least 30, got {length}")
    if num_seq < 1 or num_tones < 0:
        raise ParameterError("need num_seq >= 1 and num_tones >= 0")
    t = np.arange(length, dtype=DTYPE)
    seqs = []
    for _ in range(num_seq):
        clean = np.zeros(length)
        for _ in range(num_tones):
            amp = rng.uniform(0.5, 1.5)
            freq = rng.uniform(0.005, 0.1)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            clean += amp * np.sin(2.0 * math.pi * freq * t + phase)
        rms = float(np.sqrt(np.mean(clean ** 2))) if num_tones else 0.0
        sigma = noise_frac * rms if rms > 0 else 1.0
        seqs.append(clean + rng.normal(length, 0.0, sigma))
    return normalize_signal(SignalDataset(seqs, name="synthetic-signal"))


# -- splits ------------------------------------------------------------------

class Split(NamedTuple):
    train: List[int]
    valid: List[int]
    test: List[int]


def split_sizes(total: int, fractions: Sequence[float]) -> List[int]:
    """Largest-remainder apportionment, then every part topped up to at least one."""
    raw = [total * f for f in fractions]
    sizes = [int(math.floor(r)) for r in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[: total - sum(sizes)]:
        sizes[i] += 1
    for i in range(len(sizes)):
        while sizes[i] == 0:
            donor = max(range(len(sizes)), key=lambda j: (sizes[j], -j))
            sizes[donor] -= 1
            sizes[i] += 1
    return sizes


def make_split(dataset, seed: int, fractions: Sequence[float] = (0.8, 0.1, 0.1)) -> Split:
    """Deterministic shuffled train/valid/test partition of ``dataset`` (or a count)."""
    total = dataset if isinstance(dataset, int) else len(dataset)
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1) > 1e-9:
        raise ParameterError(f"fractions must be three positive numbers summing to 1: {fractions}")
    if total < 3:
        raise DataError(f"need at least 3 sequences to split, got {total}")
    order = RngStream(seed).fork(0x5917).permutation(total).tolist()
    a, b, _ = split_sizes(total, fractions)
    return Split(sorted(order[:a]), sorted(order[a:a + b]), sorted(order[a + b:]))
