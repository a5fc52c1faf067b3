"""Command-line entry point: ``pranet {train,eval,infer,bench,ablate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness, jsonfmt
from .errors import InvalidArgument, PraNetError


def _synthetic_spec(text: str) -> harness.DataSource:
    try:
        n, size, seed = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("expected n,size,seed (three integers)")
    return harness.DataSource("synthetic", n=n, size=size, seed=seed)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pranet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a JSON run config")
    p.add_argument("--config", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--image-dir")
    src.add_argument("--synthetic", type=_synthetic_spec, metavar="N,SIZE,SEED")
    p.add_argument("--mask-dir")
    p.add_argument("--report", help="where to write the JSON report "
                                    "(default: eval_report.json next to the checkpoint)")

    p = sub.add_parser("infer", help="write a probability map PNG for one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("bench", help="time repeated inference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--size", type=int, default=352)
    p.add_argument("--iters", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)

    p = sub.add_parser("ablate", help="train and score the four component settings")
    p.add_argument("--config", required=True)
    return parser


def _run(args) -> int:
    if args.command == "train":
        config = harness.RunConfig.load(args.config)
        result = harness.cmd_train(config, on_epoch=lambda row: print(
            f"epoch {row['epoch']:3d}  loss {row['meanLoss']:.6f}  val dice {row['valDice']:.6f}",
            file=sys.stderr))
        summary = {"outputDir": config.output_dir, "bestEpoch": result.best_epoch,
                   "epochs": result.log}
        if result.test_report is not None:
            summary["test"] = {k: v for k, v in result.test_report.to_dict().items()
                               if k not in ("perImage",)}
        sys.stdout.write(jsonfmt.dumps(summary))
    elif args.command == "eval":
        if args.image_dir:
            if not args.mask_dir:
                raise InvalidArgument("--image-dir requires --mask-dir")
            source = harness.DataSource("directories", image_dir=args.image_dir, mask_dir=args.mask_dir)
        else:
            source = args.synthetic
        report = harness.cmd_eval(args.checkpoint, source)
        path = args.report or Path(args.checkpoint).with_name("eval_report.json")
        sys.stdout.write(harness.write_report(path, report))
    elif args.command == "infer":
        harness.cmd_infer(args.checkpoint, args.input, args.output)
    elif args.command == "bench":
        sys.stdout.write(jsonfmt.dumps(harness.cmd_bench(args.checkpoint, args.size, args.iters, args.warmup)))
    elif args.command == "ablate":
        config = harness.RunConfig.load(args.config)
        rows = harness.cmd_ablate(config)
        text = harness.format_ablation(rows)
        out = Path(config.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(jsonfmt.dumps({"seed": config.seed, "rows": rows}))
        (out / "ablation.txt").write_text(text + "\n")
        sys.stdout.write(jsonfmt.dumps({"seed": config.seed, "rows": rows}))
        print(text, file=sys.stderr)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _run(args)
    except PraNetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
