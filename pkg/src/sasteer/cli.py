"""Command-line driver.

Exit codes: 0 success, 1 I/O or file format, 2 usage/validation,
3 training divergence, 4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .attention import NormalizerKind
from .data import CueMode, GeneratorConfig, generate_sequence, read_dataset, write_dataset
from .ensemble import (
    DataMode,
    Ensemble,
    aggregate_predict,
    attention_correlation,
    sparsity_from_maps,
    train_ensemble,
)
from .errors import FormatError, InvalidInputError, TrainingDivergedError
from .persistence import export_attention_pgm, read_checkpoint, write_checkpoint, write_csv
from .pipeline import AttentionMap, TrainConfig, fit, init_model, predict_sequence
from .verify import run_suite

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4

log = logging.getLogger("sasteer")


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def _grid(text):
    parts = text.lower().split("x")
    try:
        dims = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected M or MxN, got {text!r}")
    if len(dims) == 1:
        dims *= 2
    if len(dims) != 2:
        raise argparse.ArgumentTypeError(f"expected M or MxN, got {text!r}")
    return tuple(dims)


def write_manifest(out_path, command, config, seeds, inputs, outputs, started, extra=None):
    """``<out>.manifest.json``; everything except ``side`` is deterministic."""
    doc = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "seeds": seeds,
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
    }
    if extra:
        doc["extra"] = extra
    doc["side"] = {"duration_s": round(time.perf_counter() - started, 3)}
    path = Path(f"{out_path}.manifest.json")
    path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args):
    started = time.perf_counter()
    M, N = args.mn
    cfg = GeneratorConfig(M=M, N=N, K=args.k, frames=args.frames, frame_rate_hz=args.hz,
                          cue_mode=CueMode(args.mode), horizon=args.horizon, sigma=args.sigma,
                          smoothing=args.smoothing, n_cues=args.cues, beacon=args.beacon, seed=args.seed)
    seq = generate_sequence(cfg, id=Path(args.out).stem)
    write_dataset(seq, args.out)
    config = {k: (v.value if hasattr(v, "value") else v) for k, v in vars(cfg).items()}
    write_manifest(args.out, "generate", config, [args.seed], [], [args.out], started)
    return EXIT_OK


def _train_config(args, seed):
    return TrainConfig(lr=args.lr, epochs=args.epochs, bptt=args.bptt, delay_frames=args.delay_frames,
                       seed=seed, kind=NormalizerKind(args.attention), use_lstm=not args.no_lstm,
                       linear_head=args.linear_head, hidden=args.hidden, fcn_hidden=args.fcn_hidden)


def _config_dict(cfg: TrainConfig):
    return {k: (v.value if hasattr(v, "value") else v) for k, v in vars(cfg).items()}


def _load_sequences(paths):
    return [read_dataset(p) for p in paths]


def cmd_train(args):
    started = time.perf_counter()
    train_seqs = _load_sequences(args.data)
    valid_seqs = _load_sequences(args.valid or [])
    config = _train_config(args, args.seed)
    model, history = fit(train_seqs, valid_seqs, config)
    write_checkpoint(model, args.out)
    metrics = args.metrics or f"{args.out}.epochs.csv"
    write_csv(metrics, ["epoch", "train_mae", "valid_mae"],
              [(r.epoch, r.train_mae, r.valid_mae) for r in history])
    write_manifest(args.out, "train", _config_dict(config), [args.seed],
                   args.data + (args.valid or []), [args.out, metrics], started)
    return EXIT_OK


def cmd_train_ensemble(args):
    started = time.perf_counter()
    seeds = args.seeds if args.seeds is not None else list(range(args.n))
    if len(seeds) != args.n:
        raise UsageError(f"--n {args.n} needs {args.n} seeds, got {len(seeds)}")
    if len(set(seeds)) != len(seeds):
        raise UsageError(f"duplicate seeds in {seeds}")
    train_seqs = _load_sequences(args.data)
    valid_seqs = _load_sequences(args.valid or [])
    config = _train_config(args, seeds[0])
    ens = train_ensemble(args.n, config, seeds, train_seqs, valid_seqs, DataMode(args.mode), args.workers)
    write_checkpoint(ens, args.out)
    write_manifest(args.out, "train-ensemble", {**_config_dict(config), "n": args.n, "mode": args.mode},
                   seeds, args.data + (args.valid or []), [args.out], started,
                   extra={"member_sequences": ens.member_sequences})
    return EXIT_OK


def _as_ensemble(obj):
    return obj if isinstance(obj, Ensemble) else Ensemble([obj])


def cmd_eval(args):
    started = time.perf_counter()
    seqs = _load_sequences(args.data)
    shortest = min(len(s) for s in seqs)
    for d in args.delays:
        if d < 0 or d >= shortest:
            raise UsageError(f"delay {d} frames needs sequences longer than {shortest} frames")
    rows, trace_rows = [], []
    for path in args.model:
        obj = read_checkpoint(path)
        model_id = Path(path).stem
        ens = _as_ensemble(obj)
        for d in args.delays:
            traces = [aggregate_predict(ens, seq, d) for seq in seqs]
            targets = np.concatenate([t.targets for t in traces])
            member_preds = np.concatenate([t.member_predictions for t in traces], axis=1)
            for i in range(len(ens)):
                rows.append((model_id, str(i), d, float(np.mean(np.abs(member_preds[i] - targets)))))
            if isinstance(obj, Ensemble):
                agg = member_preds.mean(axis=0)
                rows.append((model_id, "aggregate", d, float(np.mean(np.abs(agg - targets)))))
            for seq, trace in zip(seqs, traces):
                for t in range(len(trace)):
                    trace_rows.append((model_id, seq.id, d, t, trace.predictions[t], trace.targets[t]))
    write_csv(args.out, ["model_id", "member", "delay_frames", "mae"], rows)
    outputs = [args.out]
    if args.trace:
        write_csv(args.trace, ["model_id", "sequence_id", "delay_frames", "t", "prediction", "target"], trace_rows)
        outputs.append(args.trace)
    write_manifest(args.out, "eval", {"delays": args.delays}, [], args.data + args.model, outputs, started)
    return EXIT_OK


def cmd_analyze_attention(args):
    started = time.perf_counter()
    seq = read_dataset(args.data)
    ens = _as_ensemble(read_checkpoint(args.model))
    if len(ens) < 2 and not args.no_correlation:
        raise UsageError("correlation needs an ensemble of at least two members (or pass --no-correlation)")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    trace = aggregate_predict(ens, seq, 0)
    outputs = []
    extra = {}

    if not args.no_correlation:
        corr = attention_correlation(ens, seq)
        path = out / "correlation.csv"
        write_csv(path, ["member"] + [f"m{j}" for j in range(len(ens))],
                  [[f"m{i}"] + list(corr.values[i]) for i in range(len(ens))])
        outputs.append(path)
        extra["mean_off_diagonal"] = corr.mean_off_diagonal()
        extra["degenerate_members"] = [int(i) for i in np.flatnonzero(corr.degenerate)]
        if corr.warning:
            log.warning("zero-variance attention stream for members %s", extra["degenerate_members"])

    rows = []
    for i in range(len(ens)):
        support, zero_fraction = sparsity_from_maps(trace.member_maps[i])
        rows.append((f"m{i}", ens.members[i].kind.value, support, zero_fraction))
    path = out / "sparsity.csv"
    write_csv(path, ["member", "kind", "mean_support", "zero_fraction"], rows)
    outputs.append(path)

    for t in args.dump_maps or []:
        if not 0 <= t < len(seq):
            raise UsageError(f"frame {t} outside a {len(seq)}-frame sequence")
        for i in range(len(ens)):
            path = out / f"map_m{i}_t{t}.pgm"
            export_attention_pgm(AttentionMap(trace.member_maps[i, t], trace.grid_shape), path)
            outputs.append(path)
    write_manifest(out / "analysis", "analyze-attention", {"dump_maps": args.dump_maps or []}, [],
                   [args.data, args.model], outputs, started, extra)
    return EXIT_OK


def cmd_gradcheck(args):
    kinds = tuple(NormalizerKind) if args.kind == "all" else (NormalizerKind(args.kind),)
    results = run_suite(args.seed, kinds, args.instances, flip_sign=args.inject_fault)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print("FAILED: " + ", ".join(failed) if failed else "all checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_training_flags(p):
    p.add_argument("--data", nargs="+", required=True, help="training SASQ files")
    p.add_argument("--valid", nargs="*", help="validation SASQ files (default: select on training MAE)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--attention", choices=[k.value for k in NormalizerKind], default="sparse")
    p.add_argument("--no-lstm", action="store_true", help="feed the context straight to the head")
    p.add_argument("--linear-head", action="store_true", help="no tanh between the two head layers")
    p.add_argument("--delay-frames", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--bptt", type=int, default=20)
    p.add_argument("--hidden", type=int, default=32, help="LSTM hidden size")
    p.add_argument("--fcn-hidden", type=int, default=32, help="width of the first head layer")


def build_parser():
    parser = argparse.ArgumentParser(prog="sasteer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic SASQ sequence")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=[m.value for m in CueMode], default="moving")
    p.add_argument("--mn", type=_grid, default=(7, 7), help="grid size, M or MxN")
    p.add_argument("--k", type=int, default=16, help="feature channels")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--horizon", type=int, default=10, help="cue lead in frames")
    p.add_argument("--hz", type=float, default=20.0)
    p.add_argument("--smoothing", type=int, default=10)
    p.add_argument("--cues", type=int, default=3, help="number of redundant cue locations")
    p.add_argument("--beacon", type=float, default=2.0, help="marker height at cue locations")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one model")
    _add_training_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metrics", help="per-epoch CSV (default: <out>.epochs.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-ensemble", help="train N members and write one ensemble checkpoint")
    _add_training_flags(p)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--seeds", type=_int_list, help="comma-separated distinct seeds (default 0..n-1)")
    p.add_argument("--mode", choices=[m.value for m in DataMode], default="same")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_train_ensemble)

    p = sub.add_parser("eval", help="MAE per model, member and delay")
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--model", nargs="+", required=True)
    p.add_argument("--delays", type=_int_list, default=[0], help="comma-separated frame offsets")
    p.add_argument("--out", required=True, help="metrics CSV")
    p.add_argument("--trace", help="optional per-frame CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze-attention", help="map correlation, sparsity and PGM dumps")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dump-maps", type=_int_list, help="comma-separated frame indices")
    p.add_argument("--no-correlation", action="store_true")
    p.set_defaults(func=cmd_analyze_attention)

    p = sub.add_parser("gradcheck", help="finite-difference and oracle verification")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=[k.value for k in NormalizerKind] + ["all"], default="all")
    p.add_argument("--instances", type=int, default=20)
    p.add_argument("--inject-fault", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        print(f"sasteer {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDivergedError as exc:
        print(f"sasteer {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, FormatError) as exc:
        print(f"sasteer {args.command}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
