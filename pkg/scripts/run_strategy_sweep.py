"""Train the same model with each backward strategy and compare.

Runs implicit, jfb, npg, and gdeq sequentially under one shared
configuration, writes the usual per-run artifacts into OUT/<variant>/,
and prints a closing table of final accuracies and wall times.  The
defaults are sized to finish in a couple of minutes; pass --epochs 200
--train-n 2000 for the full-scale comparison.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from deqkit.backward import STRATEGIES
from deqkit.cli import main as cli_main


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/sweep", help="root output directory")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--train-n", type=int, default=1000)
    ap.add_argument("--test-n", type=int, default=400)
    ap.add_argument("--d-z", type=int, default=32)
    ap.add_argument("--probe-every", type=int, default=50,
                    help="gradient fidelity probe interval in steps")
    ap.add_argument("--set", action="append", dest="overrides", default=[],
                    metavar="KEY=VALUE", help="extra config overrides")
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    root = Path(args.out)
    rows = []
    for variant in STRATEGIES:
        out = root / variant
        argv = [
            "train", "--seed", str(args.seed), "--out", str(out),
            "--set", f"strategy.variant={variant}",
            "--set", f"train.epochs={args.epochs}",
            "--set", f"train.fidelity_every={args.probe_every}",
            "--set", f"data.train_n={args.train_n}",
            "--set", f"data.test_n={args.test_n}",
            "--set", f"model.d_z={args.d_z}",
        ]
        for item in args.overrides:
            argv += ["--set", item]
        print(f"=== {variant} ===")
        code = cli_main(argv)
        if code != 0:
            print(f"{variant} failed with exit code {code}", file=sys.stderr)
            return code
        totals = json.loads((out / "manifest.json").read_text())["totals"]
        rows.append((variant, totals))

    base_wall = dict(rows).get("implicit", {}).get("wall_seconds")
    print(f"\n{'variant':10s} {'train_acc':>9s} {'test_acc':>8s} "
          f"{'wall_s':>7s} {'vs implicit':>11s}")
    for variant, totals in rows:
        rel = (f"{base_wall / totals['wall_seconds']:10.2f}x"
               if base_wall else f"{'n/a':>11s}")
        print(f"{variant:10s} {totals['final_train_acc']:9.3f} "
              f"{totals['final_test_acc']:8.3f} "
              f"{totals['wall_seconds']:7.1f} {rel}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
