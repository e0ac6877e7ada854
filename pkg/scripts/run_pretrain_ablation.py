"""Compare training with and without unrolled pre-training.

Both arms share the seed, data, and strategy; the only difference is
whether the cell is first trained for a few epochs as an explicit
depth-D unrolled network.  Final accuracies and the delta are printed;
per-arm artifacts land in OUT/{with,without}/.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from deqkit.cli import main as cli_main


def parse_args() -> argparse.Namespace:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/pretrain-ablation")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--epochs", type=int, default=60)
    ap.add_argument("--train-n", type=int, default=1000)
    ap.add_argument("--test-n", type=int, default=400)
    ap.add_argument("--strategy", default="implicit")
    ap.add_argument("--unroll-depth", type=int, default=8)
    ap.add_argument("--pretrain-epochs", type=int, default=10)
    ap.add_argument("--set", action="append", dest="overrides", default=[],
                    metavar="KEY=VALUE", help="extra config overrides")
    return ap.parse_args()


def main() -> int:
    args = parse_args()
    root = Path(args.out)
    finals = {}
    for label, enabled in (("without", "false"), ("with", "true")):
        out = root / label
        argv = [
            "train", "--seed", str(args.seed), "--out", str(out),
            "--set", f"pretrain.enabled={enabled}",
            "--set", f"pretrain.unroll_depth={args.unroll_depth}",
            "--set", f"pretrain.epochs={args.pretrain_epochs}",
            "--set", f"strategy.variant={args.strategy}",
            "--set", f"train.epochs={args.epochs}",
            "--set", f"data.train_n={args.train_n}",
            "--set", f"data.test_n={args.test_n}",
        ]
        for item in args.overrides:
            argv += ["--set", item]
        print(f"=== {label} pre-training ===")
        code = cli_main(argv)
        if code != 0:
            print(f"{label} arm failed with exit code {code}",
                  file=sys.stderr)
            return code
        totals = json.loads((out / "manifest.json").read_text())["totals"]
        finals[label] = totals

    delta = (finals["with"]["final_test_acc"]
             - finals["without"]["final_test_acc"])
    for label in ("without", "with"):
        t = finals[label]
        print(f"{label:8s} train_acc {t['final_train_acc']:.3f}  "
              f"test_acc {t['final_test_acc']:.3f}  "
              f"wall {t['wall_seconds']:.1f}s")
    print(f"test accuracy delta (with - without): {delta:+.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
