"""Fine-tune WSM at replacement depth 2 for each window half-width k and tabulate held-out TER."""

import argparse
import csv
import sys
from pathlib import Path

from wsmix.encoder import AsrModel, ReplacementPlan, apply_replacement, build_pretrained_stack
from wsmix.mixing import BOUNDARY_MODES, MixingConfig
from wsmix.training import DatasetSpec, TrainConfig, finetune, make_synthetic_dataset, split_dataset


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--ks", type=lambda s: [int(x) for x in s.split(",")], default=[3, 5, 7, 9])
    ap.add_argument("--depth", type=int, default=2)
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--warmup-steps", type=int, default=400)
    ap.add_argument("--boundary-mode", choices=BOUNDARY_MODES, default="valid-count")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/window_sweep.csv"))
    args = ap.parse_args(argv)

    train, held = split_dataset(make_synthetic_dataset(DatasetSpec(), seed=args.seed), 64)
    stack = build_pretrained_stack(seed=args.seed, warmup_steps=args.warmup_steps)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_k", "depth", "final_ter", "final_loss", "wall_ms"])
        for k in args.ks:
            mixing = MixingConfig(window_k=k, boundary_mode=args.boundary_mode)
            model = AsrModel(apply_replacement(stack, ReplacementPlan(args.depth, "WSM", args.seed, mixing)),
                             seed=args.seed)
            m = finetune(model, train, held, TrainConfig(epochs=args.epochs, seed=args.seed))
            w.writerow([k, args.depth, f"{m.final_ter:.6f}", f"{m.final_loss:.6f}", f"{m.wall_ms:.1f}"])
            print(f"k={k}: held-out TER {m.final_ter:.4f}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
