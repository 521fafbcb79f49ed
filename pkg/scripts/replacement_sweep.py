"""Replace the last 1..4 layers (and All, for pretrained attention) with each variant."""

import argparse
import sys
from pathlib import Path

from wsmix.encoder import build_pretrained_stack
from wsmix.mixing import MixingConfig
from wsmix.training import (
    DatasetSpec,
    TrainConfig,
    make_synthetic_dataset,
    run_grid,
    split_dataset,
    write_grid_csv,
    write_run_csv,
)
from wsmix.training.loop import RunMetrics


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--variants", default="SM,WSM,Att-PT,Att-scratch")
    ap.add_argument("--depths", default="1,2,3,4,All")
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--warmup-steps", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out-dir", type=Path, default=Path("runs/replacement_sweep"))
    args = ap.parse_args(argv)

    depths = [d if d == "All" else int(d) for d in args.depths.split(",")]
    train, held = split_dataset(make_synthetic_dataset(DatasetSpec(), seed=args.seed), 64)
    stack = build_pretrained_stack(seed=args.seed, warmup_steps=args.warmup_steps)
    cells = run_grid(stack, args.variants.split(","), depths, train, held,
                     TrainConfig(epochs=args.epochs, seed=args.seed), MixingConfig(),
                     log=lambda msg: print(msg, file=sys.stderr))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_grid_csv(args.out_dir / "grid.csv", cells)
    write_run_csv(args.out_dir / "grid_runs.csv", [c for c in cells if isinstance(c, RunMetrics)])
    return 0


if __name__ == "__main__":
    sys.exit(main())
