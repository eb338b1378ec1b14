"""Desk-scale end-to-end run: synthesize, train, evaluate, invert one record.

Everything goes through the CLI so the run is reproducible from the echoed
config.json in each output directory.  With the defaults this takes a few
minutes on a laptop; pass --epochs 5 for a quick smoke run.
"""

from __future__ import annotations

import argparse
import sys

from ellipsinv.cli import main as cli_main


def run(argv: list[str]) -> None:
    print("+ ellipsinv " + " ".join(argv))
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk", help="base directory for all stages")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--loss-weights", default="1.0,0.03",
                    help="w_fit,w_recon for training (default balances the "
                    "physics term against normalized-label gradients)")
    args = ap.parse_args()

    data = f"{args.out}/dataset"
    model = f"{args.out}/model"
    common = ["--seed", str(args.seed)]

    run(["synth", *common, "--out", data])
    run(["train", *common, "--set", f"train.epochs={args.epochs}",
         "--loss-weights", args.loss_weights, "--data", data, "--out", model])
    run(["eval", *common, "--data", data, "--checkpoint", f"{model}/checkpoint.bin",
         "--split", "test", "--out", f"{args.out}/eval"])
    run(["invert", *common, "--data", data, "--index", "0", "--out", f"{args.out}/invert"])


if __name__ == "__main__":
    main()
