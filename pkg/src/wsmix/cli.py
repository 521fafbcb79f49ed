"""Command-line entry point: bench, train, grid, gradcheck, oracle, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import bench as benchmod
from . import suites
from .encoder import AsrModel, ReplacementPlan, apply_replacement, build_pretrained_stack, save_checkpoint
from .mixing import BOUNDARY_MODES, MixingConfig
from .training import (
    DatasetSpec,
    TrainConfig,
    finetune,
    make_synthetic_dataset,
    run_grid,
    split_dataset,
    write_grid_csv,
    write_run_csv,
    write_snapshot,
)
from .training.loop import RunMetrics


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x)


def _strs(text: str) -> tuple[str, ...]:
    return tuple(x for x in text.split(",") if x)


def _depths(text: str) -> tuple:
    return tuple(x if x == "All" else int(x) for x in text.split(",") if x)


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--seed", type=int, help="master seed", **({"default": 0} | kw))
    p.add_argument("--out-dir", type=Path, help="directory for outputs", **({"default": Path("runs")} | kw))
    p.add_argument("--config", type=Path, help="JSON file of flag values (flags win)", **({"default": None} | kw))


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--n-samples", type=int, default=512)
    p.add_argument("--held-out", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.3)
    p.add_argument("--warmup-steps", type=int, default=400, help="masked-reconstruction pretraining steps")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--window-k", type=int, default=5)
    p.add_argument("--boundary-mode", choices=BOUNDARY_MODES, default="valid-count")
    p.add_argument("--epochs", type=int, default=25)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr-head", type=float, default=1e-3)
    p.add_argument("--lr-replaced", type=float, default=3e-3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wsmix", description=__doc__)
    _add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="runtime/memory scaling of the mixing blocks")
    _add_globals(p, suppress=True)
    p.add_argument("--variants", type=_strs, default=("SM", "WSM", "Attention"))
    p.add_argument("--lengths", type=_ints, default=benchmod.BenchSpec.lengths)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--window-k", type=int, default=5)
    p.add_argument("--memory-lengths", type=_ints, default=(512, 1024, 2048, 4096),
                   help="lengths for the measured activation-memory table")

    p = sub.add_parser("train", help="fine-tune one replacement plan")
    _add_globals(p, suppress=True)
    _add_model_flags(p)
    p.add_argument("--variant", choices=("SM", "WSM", "Att-PT", "Att-scratch", "All-Att-PT"), default="WSM")
    p.add_argument("--depth", type=int, default=2)

    p = sub.add_parser("grid", help="variant x replacement-depth table")
    _add_globals(p, suppress=True)
    _add_model_flags(p)
    p.add_argument("--variants", type=_strs, default=("SM", "WSM", "Att-PT", "Att-scratch"))
    p.add_argument("--depths", type=_depths, default=(1, 2))

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    _add_globals(p, suppress=True)

    p = sub.add_parser("oracle", help="window-summary and CTC oracle suites")
    _add_globals(p, suppress=True)
    p.add_argument("--window-cases", type=int, default=1000)
    p.add_argument("--ctc-cases", type=int, default=1000)

    p = sub.add_parser("report", help="merge CSV outputs into one long-format CSV")
    _add_globals(p, suppress=True)
    p.add_argument("inputs", nargs="+", type=Path)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            parser.error(f"cannot read config {args.config}: {exc}")
        # one file may serve every subcommand; keys other subcommands use are ignored here
        unknown = sorted(k for k in values if k.replace("-", "_") not in _all_dests(parser))
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        used = set(vars(args))
        explicit = _explicit_dests(parser, argv)
        for key, val in values.items():
            dest = key.replace("-", "_")
            if dest in used and dest not in explicit:
                if isinstance(val, list):
                    val = tuple(val)
                if dest in ("out_dir",):
                    val = Path(val)
                setattr(args, dest, val)
    return args


def _all_actions(parser: argparse.ArgumentParser) -> list[argparse.Action]:
    actions = list(parser._actions)
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                actions.extend(sp._actions)
    return actions


def _all_dests(parser: argparse.ArgumentParser) -> set[str]:
    return {a.dest for a in _all_actions(parser) if a.option_strings and a.dest != "help"}


def _explicit_dests(parser: argparse.ArgumentParser, argv) -> set[str]:
    """Destinations set on the command line, so they can override the config file."""
    flags = {a.split("=", 1)[0] for a in argv if a.startswith("--")}
    return {a.dest for a in _all_actions(parser) if any(opt in flags for opt in a.option_strings)}


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _dataset(args):
    spec = DatasetSpec(n=args.n_samples, noise=args.noise)
    data = make_synthetic_dataset(spec, seed=args.seed)
    train, held = split_dataset(data, args.held_out)
    out = args.out_dir
    write_snapshot(out / "train.wsmds", train, spec, args.seed)
    write_snapshot(out / "held_out.wsmds", held, spec, args.seed)
    return spec, train, held


def _stack(args):
    stack = build_pretrained_stack(
        d_model=args.d_model, n_layers=args.layers, heads=args.heads, seed=args.seed,
        warmup_steps=args.warmup_steps,
    )
    if stack.pretrain_report:
        r = stack.pretrain_report
        _log(f"pretraining: held-out reconstruction {r['held_out_before']:.4f} -> "
             f"{r['held_out_after']:.4f} ({100 * r['reduction']:.1f}% lower)")
    return stack


def _mixing(args) -> MixingConfig:
    return MixingConfig(d_model=args.d_model, window_k=args.window_k, boundary_mode=args.boundary_mode,
                        heads=args.heads)


def _train_config(args) -> TrainConfig:
    return TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr_head=args.lr_head,
                       lr_replaced=args.lr_replaced, seed=args.seed)


def cmd_bench(args) -> int:
    spec = benchmod.BenchSpec(variants=tuple(args.variants), lengths=tuple(args.lengths),
                              repeats=args.repeats, d_model=args.d_model, window_k=args.window_k,
                              heads=args.heads, seed=args.seed)
    records = benchmod.run_scaling_bench(spec, log=_log)
    benchmod.write_bench_csv(args.out_dir / "bench.csv", records, spec)
    for v in spec.variants:
        try:
            _log(f"{v}: log-log slope {benchmod.fit_loglog_slope(records, v):.3f}")
        except benchmod.FitError as exc:
            _log(str(exc))
    if args.memory_lengths:
        with open(args.out_dir / "memory.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["variant", "T", "analytic_bytes", "tape_bytes", "allocator_bytes"])
            for v in spec.variants:
                for T in args.memory_lengths:
                    m = benchmod.measure_activation_memory(v, T, spec.mixing_config(v), seed=args.seed)
                    w.writerow([v, T, m["analytic"], m["tape"], m["allocator"]])
    return 0


def cmd_train(args) -> int:
    _, train, held = _dataset(args)
    stack = _stack(args)
    depth = args.layers if args.variant == "All-Att-PT" else args.depth
    plan = ReplacementPlan(depth, args.variant, args.seed, _mixing(args))
    model = AsrModel(apply_replacement(stack, plan), seed=args.seed)
    metrics = finetune(model, train, held, _train_config(args), log=_log)
    write_run_csv(args.out_dir / "run.csv", [metrics])
    save_checkpoint(args.out_dir / "model.ckpt", model, seeds={"seed": args.seed},
                    extra={"final_ter": metrics.final_ter})
    _log(f"final held-out token error rate {metrics.final_ter:.4f}")
    return 0


def cmd_grid(args) -> int:
    _, train, held = _dataset(args)
    stack = _stack(args)
    cells = run_grid(stack, args.variants, args.depths, train, held, _train_config(args),
                     _mixing(args), log=_log)
    write_grid_csv(args.out_dir / "grid.csv", cells)
    write_run_csv(args.out_dir / "grid_runs.csv", [c for c in cells if isinstance(c, RunMetrics)])
    return 0


def _write_results(path: Path, results) -> int:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(suites.RESULT_FIELDS)
        for r in results:
            w.writerow(suites.result_row(r))
            print(r.line())
    return 0 if all(r.passed for r in results) else 1


def cmd_gradcheck(args) -> int:
    return _write_results(args.out_dir / "gradcheck.csv", suites.gradient_suite(seed=args.seed))


def cmd_oracle(args) -> int:
    results = [
        suites.window_oracle_suite(args.window_cases, seed=args.seed),
        suites.ctc_oracle_suite(args.ctc_cases, seed=args.seed),
    ]
    return _write_results(args.out_dir / "oracle.csv", results)


def cmd_report(args) -> int:
    """Long format: source,variant,axis,x,seconds,metric,value."""
    rows = []
    for path in args.inputs:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            fields = reader.fieldnames or []
            axis = "T" if "T" in fields else "depth" if "depth" in fields else None
            for rec in reader:
                x = rec.get(axis, "") if axis else ""
                seconds = f"{int(x) / benchmod.FRAMES_PER_SECOND:g}" if axis == "T" else ""
                for metric in fields:
                    if metric in ("variant", axis, "suite"):
                        continue
                    rows.append([path.name, rec.get("variant", rec.get("suite", "")), axis or "", x,
                                 seconds, metric, rec[metric]])
    with open(args.out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source", "variant", "axis", "x", "seconds", "metric", "value"])
        w.writerows(rows)
    return 0


COMMANDS = {
    "bench": cmd_bench,
    "train": cmd_train,
    "grid": cmd_grid,
    "gradcheck": cmd_gradcheck,
    "oracle": cmd_oracle,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parse_args(argv)
    args.out_dir = Path(args.out_dir)
    args.out_dir.mkdir(parents=True, exist_ok=True)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
