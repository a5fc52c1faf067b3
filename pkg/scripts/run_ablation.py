#!/usr/bin/env python3
"""Four-setting component ablation repeated over several seeds.

Each seed trains No.1 (backbone), No.2 (+PPD), No.3 (+RA) and No.4 (full)
on the same synthetic data. Per-seed tables and the median summary go to
``--output-dir``; the ordering check is No.4 >= No.1 and No.4 >= No.2 - 0.02
on median test meanDice.
"""

import argparse
import statistics
import sys
from pathlib import Path

from pranet import harness, jsonfmt
from pranet.harness import DataSource, RunConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--output-dir", default="runs/ablation")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args(argv)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)

    source = DataSource("synthetic", n=250, size=64, seed=1)
    per_seed = {}
    for seed in args.seeds:
        rows = harness.cmd_ablate(
            RunConfig(epochs=args.epochs, seed=seed, data_source=source),
            on_row=lambda r: print(f"seed {seed} {r['setting']} meanDice {r['meanDice']:.4f}", flush=True))
        per_seed[seed] = rows
        (out / f"ablation_seed{seed}.txt").write_text(harness.format_ablation(rows) + "\n")

    labels = [s[0] for s in harness.ABLATION_SETTINGS]
    medians = {lab: statistics.median(r["meanDice"] for rows in per_seed.values()
                                      for r in rows if r["setting"] == lab) for lab in labels}
    ok = medians["No.4"] >= medians["No.1"] and medians["No.4"] >= medians["No.2"] - 0.02
    (out / "ablation_summary.json").write_text(jsonfmt.dumps(
        {"seeds": args.seeds, "medianMeanDice": medians, "orderingHolds": ok,
         "runs": {str(k): v for k, v in per_seed.items()}}))
    print("median meanDice: " + ", ".join(f"{k} {v:.4f}" for k, v in medians.items()))
    print("ordering " + ("PASS" if ok else "FAIL"))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
