"""CSV and text-table emission for results and learning curves."""
from __future__ import annotations

import csv
import dataclasses
from pathlib import Path
from typing import Dict, Iterable, List, Sequence

from .experiment import LearningCurveRecord, ResultRow

RESULT_COLUMNS = [f.name for f in dataclasses.fields(ResultRow)]
CURVE_COLUMNS = [f.name for f in dataclasses.fields(LearningCurveRecord)]
CELL_ORDER = ("tanh", "gru", "lstm")


def fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _write_csv(path: Path, columns: Sequence[str], records: Iterable) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for rec in records:
                writer.writerow([fmt(getattr(rec, c)) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def write_results_csv(rows: Sequence[ResultRow], path) -> Path:
    return _write_csv(Path(path), RESULT_COLUMNS, rows)


def write_curve_csv(curve: Sequence[LearningCurveRecord], path) -> Path:
    return _write_csv(Path(path), CURVE_COLUMNS, curve)


def _read_csv(path, cls, columns):
    types = {f.name: f.type for f in dataclasses.fields(cls)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != columns:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        for rec in reader:
            values = {}
            for name in columns:
                t = str(types[name])
                values[name] = (int(rec[name]) if t == "int" else
                                float(rec[name]) if t == "float" else rec[name])
            out.append(cls(**values))
    return out


def read_results_csv(path) -> List[ResultRow]:
    return _read_csv(path, ResultRow, RESULT_COLUMNS)


def read_curve_csv(path) -> List[LearningCurveRecord]:
    return _read_csv(path, LearningCurveRecord, CURVE_COLUMNS)


def format_table(rows: Sequence[ResultRow]) -> str:
    """Plain-text grid: one block per dataset, train/test rows, one column per cell kind."""
    cells = [c for c in CELL_ORDER if any(r.cell == c for r in rows)]
    cells += sorted({r.cell for r in rows} - set(cells))
    by_key: Dict[tuple, ResultRow] = {(r.dataset, r.cell): r for r in rows}
    datasets = list(dict.fromkeys(r.dataset for r in rows))
    width = max([len(d) for d in datasets] + [7])
    header = f"{'dataset':<{width}}  {'split':<5}" + "".join(f"  {c:>9}" for c in cells)
    lines = [header, "-" * len(header)]
    for ds in datasets:
        for split in ("train", "test"):
            label = ds if split == "train" else ""
            vals = []
            for c in cells:
                row = by_key.get((ds, c))
                vals.append(f"  {getattr(row, split + '_nll'):>9.4f}" if row else f"  {'-':>9}")
            lines.append(f"{label:<{width}}  {split:<5}" + "".join(vals))
    return "\n".join(lines) + "\n"


def emit_outputs(rows: Sequence[ResultRow], curves: Dict[str, Sequence[LearningCurveRecord]],
                 out_dir) -> List[Path]:
    """Write ``results.csv``, one ``curve_<run>.csv`` per run, and ``table.txt``."""
    out = Path(out_dir)
    written = [write_results_csv(rows, out / "results.csv")]
    for run, curve in curves.items():
        written.append(write_curve_csv(curve, out / f"curve_{run}.csv"))
    table = out / "table.txt"
    try:
        table.write_text(format_table(rows))
    except OSError as exc:
        raise OSError(f"cannot write {table}: {exc.strerror or exc}") from exc
    written.append(table)
    return written
