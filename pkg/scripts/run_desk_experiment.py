#!/usr/bin/env python3
"""Train the full desk model on the standard synthetic set and report test scores.

Writes checkpoints, the epoch log, the split and ``test_report.json`` to
``--output-dir``, then prints the learning criterion verdict
(test meanDice >= 0.75, test MAE <= 0.08).
"""

import argparse
import logging
import sys
import time

from pranet import harness
from pranet.harness import DataSource, RunConfig


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--output-dir", default="runs/desk")
    ap.add_argument("--seed", type=int, default=0, help="run seed (init, split, shuffling)")
    ap.add_argument("--data-seed", type=int, default=1)
    ap.add_argument("--n", type=int, default=250)
    ap.add_argument("--epochs", type=int, default=20)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    config = RunConfig(epochs=args.epochs, seed=args.seed, output_dir=args.output_dir,
                       data_source=DataSource("synthetic", n=args.n, size=64, seed=args.data_seed))
    start = time.perf_counter()
    result = harness.cmd_train(config)
    minutes = (time.perf_counter() - start) / 60
    rep = result.test_report
    ok = rep.mean_dice >= 0.75 and rep.mae <= 0.08
    print(f"best epoch {result.best_epoch}; test meanDice {rep.mean_dice:.4f}, meanIoU {rep.mean_iou:.4f}, "
          f"wFbeta {rep.wfbeta:.4f}, sAlpha {rep.s_alpha:.4f}, eMax {rep.e_max:.4f}, MAE {rep.mae:.4f}; "
          f"{minutes:.1f} min -> {'PASS' if ok else 'FAIL'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
