"""Full synthetic protocol: variant comparison, delay sweeps, single vs aggregate, map analytics.

    python3 scripts/run_experiments.py --out results/ [--seeds 0,1,2,3,4] [--epochs 30]

delay_sweep.csv scores each delay-10 model at every offset; retrain_sweep.csv
trains a fresh model per delay (slow: one extra model per seed and delay).

Writes plot-ready CSVs into --out.
"""

import argparse
import logging
from dataclasses import replace
from pathlib import Path

from sasteer.ensemble import DataMode, train_ensemble
from sasteer.experiments import (
    VARIANTS,
    Protocol,
    delay_sweep,
    ensemble_of,
    ensemble_report,
    retrain_sweep,
    run_variants,
)
from sasteer.persistence import export_attention_pgm, write_csv
from sasteer.pipeline import AttentionMap, predict_sequence


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--variants", default=",".join(VARIANTS))
    ap.add_argument("--retrain", default="sparse", help="variants for the per-delay retraining sweep ('' to skip)")
    ap.add_argument("--asar", action="store_true", help="also train bootstrap-resampled soft/sparse ensembles")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    protocol = Protocol(model_seeds=tuple(int(s) for s in args.seeds.split(",")),
                        training=replace(Protocol().training, epochs=args.epochs))
    split = protocol.split()
    train, valid, test = split
    result = run_variants(protocol, args.variants.split(","), split)
    seq = test[0]

    write_csv(out / "variants.csv", ["variant", "seed", "test_mae"],
              [(name, s, mae) for name, run in result.runs.items()
               for s, mae in zip(protocol.model_seeds, run.test_mae)])

    rows = []
    for name, run in result.runs.items():
        for s, model in zip(protocol.model_seeds, run.models):
            for d, mae in delay_sweep(model, seq).items():
                rows.append((name, s, d, mae))
    write_csv(out / "delay_sweep.csv", ["variant", "seed", "delay_frames", "mae"], rows)

    rows = []
    for name in filter(None, args.retrain.split(",")):
        sweep = retrain_sweep(protocol, name, split=split, reuse=result.runs.get(name))
        rows += [(name, s, d, mae) for d, maes in sweep.items() for s, mae in zip(protocol.model_seeds, maes)]
    write_csv(out / "retrain_sweep.csv", ["variant", "seed", "delay_frames", "test_mae"], rows)

    ensembles = {name: ensemble_of(run) for name, run in result.runs.items() if len(run.models) >= 3}
    if args.asar:
        for name in ("sparse", "soft"):
            if name in result.runs:
                cfg = replace(protocol.training, kind=VARIANTS[name][0], use_lstm=VARIANTS[name][1])
                ensembles[name + "_bootstrap"] = train_ensemble(3, cfg, protocol.model_seeds[:3], train, valid,
                                                                DataMode.BOOTSTRAP)
    agg_rows, corr_rows, sparsity_rows = [], [], []
    for name, ens in ensembles.items():
        report = ensemble_report(ens, seq)
        for row in report["mae"]:
            for i, mae in enumerate(row["members"]):
                agg_rows.append((name, f"m{i}", row["delay"], mae))
            agg_rows.append((name, "aggregate", row["delay"], row["aggregate"]))
        corr = report["correlation"]
        for i in range(len(ens)):
            for j in range(len(ens)):
                corr_rows.append((name, i, j, corr.values[i, j]))
        for i, (support, zero_fraction) in enumerate(report["sparsity"]):
            sparsity_rows.append((name, i, support, zero_fraction))
        for i, model in enumerate(ens.members):
            trace = predict_sequence(model, seq, 0)
            export_attention_pgm(AttentionMap(trace.maps[200], trace.grid_shape), out / f"{name}_m{i}_t200.pgm")
    write_csv(out / "single_vs_aggregate.csv", ["ensemble", "member", "delay_frames", "mae"], agg_rows)
    write_csv(out / "correlation.csv", ["ensemble", "i", "j", "pearson"], corr_rows)
    write_csv(out / "sparsity.csv", ["ensemble", "member", "mean_support", "zero_fraction"], sparsity_rows)

    for name, run in result.runs.items():
        print(f"{name:10s} median test MAE {run.median_test_mae:.4f}  ({run.seconds:.0f}s)")
    for name, ens in ensembles.items():
        corr = ensemble_report(ens, seq, delays=(10,))["correlation"]
        print(f"{name:10s} mean off-diagonal map correlation {corr.mean_off_diagonal():+.3f}")


if __name__ == "__main__":
    main()
