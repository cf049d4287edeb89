"""Command-line entry point: ``gatedrnn <subcommand> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical divergence.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import pickle
import sys
from pathlib import Path
from typing import List, Optional

from .. import data as data_mod
from ..cells import KINDS, count_params, param_budget_to_units
from ..exceptions import (ContractError, DataError, DivergenceError, GatedRNNError,
                          ParameterError)
from ..model import load_checkpoint, save_checkpoint
from ..numerics import RngStream
from .config import FIELD_TYPES, TASKS, ExperimentConfig, coerce, format_config, load_config
from .experiment import prepare_data, result_row, run_experiment, run_lr_search
from .outputs import emit_outputs, write_results_csv

log = logging.getLogger("gatedrnn")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4

_FLAG_HELP = {
    "task": f"one of {', '.join(TASKS)}",
    "cell": "tanh, lstm or gru; a comma list trains each in turn",
    "hidden": "hidden units (exclusive with --budget)",
    "budget": "recurrent parameter budget; picks the largest fitting hidden size",
    "gru_variant": "candidate (U(r*h)) or projection (r*(Uh))",
    "lr": "fixed learning rate; skips the search",
    "full_search": "train every candidate for max_epochs and keep the winner",
}


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key=value configuration file")
    for name, kind in FIELD_TYPES.items():
        flag = "--" + name.replace("_", "-")
        if "bool" in str(kind):
            p.add_argument(flag, dest=name, action="store_const", const="true",
                           help=_FLAG_HELP.get(name))
        else:
            p.add_argument(flag, dest=name, help=_FLAG_HELP.get(name))


def _config_from(args, **force) -> ExperimentConfig:
    overrides = {}
    for name in FIELD_TYPES:
        raw = getattr(args, name, None)
        if raw is not None:
            overrides[name] = raw if name == "cell" else coerce(name, raw)
    overrides.update(force)
    return load_config(args.config, **overrides)


def _cells(args) -> List[str]:
    raw = getattr(args, "cell", None)
    return [c.strip() for c in raw.split(",")] if raw else [None]


def run_name(config: ExperimentConfig) -> str:
    return f"{config.dataset_name}_{config.cell}_s{config.seed}"


def cmd_train(args) -> int:
    rows, curves = [], {}
    for cell in _cells(args):
        force = {"cell": cell} if cell else {}
        config = _config_from(args, **force)
        outcome = run_experiment(config)
        name = run_name(config)
        out = Path(config.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(outcome.training.model, out / f"model_{name}.npz",
                        extra={"lr": outcome.row.best_lr, "seed": config.seed,
                               "best_epoch": outcome.training.best_epoch})
        (out / f"config_{name}.txt").write_text(format_config(config))
        rows.append(outcome.row)
        curves[name] = outcome.training.curves
        print(f"{name}: n={outcome.row.n} params={outcome.row.param_count} "
              f"lr={outcome.row.best_lr:.4g} train={outcome.row.train_nll:.4f} "
              f"test={outcome.row.test_nll:.4f}")
        out_dir = out
    emit_outputs(rows, curves, out_dir)
    return EXIT_OK


def cmd_eval(args) -> int:
    config = _config_from(args)
    model = load_checkpoint(args.checkpoint)
    if model.kind != config.cell:
        config = config.replace(cell=model.kind, hidden=model.n, budget=None)
    prepared = prepare_data(config)
    meta_lr = float(args.lr) if args.lr else float("nan")
    row = result_row(config, prepared, model, meta_lr)
    print(f"{row.dataset} {row.cell}: train={row.train_nll:.4f} test={row.test_nll:.4f}")
    if args.out:
        write_results_csv([row], args.out)
    return EXIT_OK


def cmd_lr_search(args) -> int:
    config = _config_from(args)
    search = run_lr_search(config)
    print("candidate,lr,best_valid_nll,best_epoch,diverged")
    for k, (lr, run) in enumerate(zip(search.candidates, search.summaries)):
        print(f"{k},{lr:.6g},{run.best_valid:.6g},{run.best_epoch},{run.diverged}")
    print(f"best_lr={search.best_lr:.6g}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from ..gradcheck import run_suite
    reports = run_suite(seeds=args.seeds, epsilon=args.epsilon)
    worst = 0.0
    for (cell, variant, head, seed), rep in reports:
        worst = max(worst, rep.max_rel_error)
        if args.verbose or not rep.passed(args.tol):
            print(f"{cell:5s} {variant:10s} {head:9s} seed={seed}: {rep}")
    ok = worst < args.tol
    print(f"{len(reports)} checks, worst relative error {worst:.3e}: "
          f"{'PASS' if ok else 'FAIL'} (tol {args.tol:g})")
    return EXIT_OK if ok else 1


def cmd_count_params(args) -> int:
    if (args.hidden is None) == (args.budget is None):
        raise ParameterError("give exactly one of --hidden / --budget")
    kinds = KINDS if args.cell == "all" else [args.cell]
    for kind in kinds:
        n = args.hidden if args.hidden is not None else param_budget_to_units(
            kind, args.input_dim, args.budget)
        print(f"{kind}: n={n} params={count_params(kind, n, args.input_dim)}")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    rng = RngStream(args.seed)
    out = Path(args.out)
    if args.task == "lag":
        ds = data_mod.gen_lag_task(rng, args.num_seq, args.seq_len, args.lag, args.dim)
        data_mod.save_pianoroll(ds.as_pianoroll(), out)
    else:
        ds = data_mod.gen_synthetic_signal(rng, args.num_seq, args.seq_len, args.num_tones)
        if args.binary:
            data_mod.save_signal_binary(ds, out)
        else:
            data_mod.save_signal(ds, out)
    print(f"wrote {len(ds)} sequences to {out}")
    return EXIT_OK


class _PlainUnpickler(pickle.Unpickler):
    # the published corpus pickles hold only dicts, lists and numbers
    def find_class(self, module, name):
        raise DataError(f"refusing to unpickle {module}.{name}")


def convert_corpus(source, out_dir, offset: Optional[int] = None,
                   dim: Optional[int] = None) -> List[Path]:
    """Split dict ``{"train": [...], "valid": [...], "test": [...]}`` -> pianoroll files.

    Each sequence is a list of timesteps, each a list of MIDI note numbers.
    Notes are shifted by ``offset`` (default: the lowest note present) and the
    dimension defaults to the span of notes seen.
    """
    source = Path(source)
    raw = source.read_bytes()
    if source.suffix == ".json":
        corpus = json.loads(raw)
    else:
        try:
            import io
            corpus = _PlainUnpickler(io.BytesIO(raw)).load()
        except pickle.UnpicklingError as exc:
            raise DataError(f"{source}: not a pickle ({exc})") from exc
    if not isinstance(corpus, dict):
        raise DataError(f"{source}: expected a dict of splits")
    notes = [int(n) for split in corpus.values() for seq in split for step in seq for n in step]
    if not notes:
        raise DataError(f"{source}: no notes found")
    offset = min(notes) if offset is None else offset
    dim = (max(notes) - offset + 1) if dim is None else dim
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for split, seqs in corpus.items():
        sequences = [[tuple(int(n) - offset for n in step) for step in seq]
                     for seq in seqs if len(seq) >= 2]
        ds = data_mod.PianoRollDataset(dim, sequences, name=f"{source.stem}_{split}")
        written.append(data_mod.save_pianoroll(ds, out / f"{source.stem}_{split}.txt"))
    return written


def cmd_convert(args) -> int:
    for path in convert_corpus(args.source, args.out_dir, args.offset, args.dim):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gatedrnn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="LR search + training + evaluation")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the train and test splits")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="write a one-row results CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("lr-search", help="run only the learning-rate search")
    _add_config_flags(p)
    p.set_defaults(func=cmd_lr_search)

    p = sub.add_parser("gradcheck", help="certify BPTT against finite differences")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("count-params", help="recurrent parameter count / budget matching")
    p.add_argument("--cell", default="all", choices=list(KINDS) + ["all"])
    p.add_argument("--input-dim", type=int, required=True)
    p.add_argument("--hidden", type=int)
    p.add_argument("--budget", type=int)
    p.set_defaults(func=cmd_count_params)

    p = sub.add_parser("gen-data", help="write a synthetic dataset file")
    p.add_argument("task", choices=["lag", "signal"])
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-seq", type=int, default=200)
    p.add_argument("--seq-len", type=int, default=500)
    p.add_argument("--lag", type=int, default=20)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--num-tones", type=int, default=3)
    p.add_argument("--binary", action="store_true", help="signal: float32 binary format")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("convert-pianoroll",
                       help="convert a split dict of MIDI note lists to pianoroll v1 files")
    p.add_argument("source", help=".pickle/.pkl or .json file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--offset", type=int, help="subtracted from every note (default: min note)")
    p.add_argument("--dim", type=int, help="frame dimension (default: note span)")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ContractError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except GatedRNNError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
