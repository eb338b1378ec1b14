"""Train the four network variants on one desk dataset and print the table.

Heavier than the other scripts: four full training runs on ~50k records
(expect 10-20 minutes with the defaults).  The reconstruction weight default
below matters; see the note on gradient balance in the training docs.
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
    ap.add_argument("--out", default="runs/ablation")
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--loss-weights", default="1.0,0.03")
    args = ap.parse_args()

    data = f"{args.out}/dataset"
    sets = [
        "--set", "synthesis.films=" + '["film_const_a","film_const_b","film_cauchy_a",'
        '"film_cauchy_b","film_cauchy_c","film_cauchy_d"]',
        "--set", 'synthesis.substrates=["sub_glass","sub_crystal"]',
        "--set", "synthesis.n_lambda=65",
        "--set", "synthesis.n_thickness=65",
    ]
    run(["synth", "--seed", str(args.seed), *sets, "--out", data])
    run(["ablate", "--seed", str(args.seed), "--set", f"train.epochs={args.epochs}",
         "--loss-weights", args.loss_weights, "--data", data, "--out", f"{args.out}/table"])


if __name__ == "__main__":
    main()
