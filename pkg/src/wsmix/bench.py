"""Runtime and activation-memory scaling of the mixing blocks against sequence length.

Timing runs are forward-only with the tape off; memory is the bytes of
activations a training-mode tape retains after one forward pass, reported
three ways: closed-form accounting, the tape's own counter, and the Python
allocator's high-water mark (tracemalloc).
"""

from __future__ import annotations

import csv
import gc
import json
import platform
import statistics
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np

from .mixing import MixingConfig, build_block
from .numerics import Tensor, mac_count, no_grad, reset_macs, track_activations

FRAMES_PER_SECOND = 50
BENCH_FIELDS = ["variant", "T", "median_ns", "macs", "peak_bytes", "skipped"]


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class BenchSpec:
    variants: tuple[str, ...] = ("SM", "WSM", "Attention")
    lengths: tuple[int, ...] = (256, 512, 1024, 2048, 4096, 8192, 16384)
    repeats: int = 5
    d_model: int = 64
    window_k: int = 5
    heads: int = 4
    seed: int = 0

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.lengths, self.lengths[1:])):
            raise ValueError("lengths must be strictly increasing")
        if self.repeats < 3:
            raise ValueError("repeats must be >= 3")

    def mixing_config(self, variant: str) -> MixingConfig:
        return MixingConfig(
            d_model=self.d_model, window_k=self.window_k, heads=self.heads, variant=variant, dropout=0.0
        )


@dataclass
class BenchRecord:
    variant: str
    T: int
    median_ns: int = 0
    macs: int = 0
    peak_bytes: int = 0
    skipped: bool = False


def _block(config: MixingConfig, seed: int):
    block = build_block(config, np.random.default_rng(seed))
    block.eval()
    return block


def run_scaling_bench(spec: BenchSpec, log=None) -> list[BenchRecord]:
    """Median forward wall time and counted MACs per (variant, T), one warm-up pass discarded."""
    records = []
    for variant in spec.variants:
        cfg = spec.mixing_config(variant)
        block = _block(cfg, spec.seed)
        block.set_trainable(False)
        for T in spec.lengths:
            rec = BenchRecord(variant, T, peak_bytes=peak_activation_memory(variant, T, cfg))
            try:
                H = Tensor(np.random.default_rng([spec.seed, T]).normal(size=(1, T, spec.d_model)))
                with no_grad():
                    block(H)
                    times = []
                    for _ in range(spec.repeats):
                        reset_macs()
                        gc.collect()
                        t0 = time.perf_counter_ns()
                        block(H)
                        times.append(time.perf_counter_ns() - t0)
                        rec.macs = mac_count()
                rec.median_ns = int(statistics.median(times))
            except MemoryError:
                rec.skipped = True
            records.append(rec)
            if log is not None:
                log(f"{variant:9s} T={T:6d} median {rec.median_ns / 1e6:10.2f} ms"
                    f"{'  (skipped: out of memory)' if rec.skipped else ''}")
    return records


def fit_loglog_slope(records: list[BenchRecord], variant: str, last: int = 4) -> float:
    """Least-squares slope of log(time) on log(T) over the ``last`` largest usable lengths."""
    pts = sorted((r.T, r.median_ns) for r in records if r.variant == variant and not r.skipped and r.median_ns > 0)
    if len(pts) < last:
        raise FitError(f"{variant}: need {last} usable lengths, have {len(pts)}")
    x = np.log([p[0] for p in pts[-last:]])
    y = np.log([p[1] for p in pts[-last:]])
    return float(np.polyfit(x, y, 1)[0])


def peak_activation_memory(variant: str, T: int, config: MixingConfig, batch: int = 1) -> int:
    """Closed-form bytes retained by the tape after one unmasked forward pass of a block.

    Attention keeps a T x T score and probability matrix per head; the summary
    blocks keep only (T, width) intermediates.
    """
    d, s = config.d_model, config.d_summary
    if variant == "Attention":
        words = batch * (7 * T * d + 2 * config.heads * T * T)
    elif variant == "SM":
        words = batch * (6 * T * s + s + 2 * T * d)
    elif variant == "WSM":
        ff_words = 4 * T * s if config.share_summary else 6 * T * s
        norm = T if config.boundary_mode == "valid-count" else 0
        words = batch * (ff_words + s + T * s + norm + 3 * T * s + 2 * T * d)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return 8 * words


def measure_activation_memory(variant: str, T: int, config: MixingConfig, seed: int = 0) -> dict:
    """Analytic, tape-counted and allocator-measured activation bytes for one forward pass."""
    cfg = config.replace(variant=variant, dropout=0.0)
    block = _block(cfg, seed)
    block.set_trainable(True)
    H = Tensor(np.random.default_rng([seed, T]).normal(size=(1, T, cfg.d_model)))
    block(H)
    gc.collect()
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    try:
        with track_activations() as tracker:
            base, _ = tracemalloc.get_traced_memory()
            tracemalloc.reset_peak()
            Y = block(H)
            _, peak = tracemalloc.get_traced_memory()
            tape = tracker.peak
            del Y
    finally:
        if not was_tracing:
            tracemalloc.stop()
    return {
        "variant": variant,
        "T": T,
        "analytic": peak_activation_memory(variant, T, cfg),
        "tape": tape,
        "allocator": peak - base,
    }


def write_bench_csv(path, records: list[BenchRecord], spec: BenchSpec) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_FIELDS)
        for r in records:
            w.writerow([r.variant, r.T, r.median_ns, r.macs, r.peak_bytes, int(r.skipped)])
    meta = {
        "frames_per_second": FRAMES_PER_SECOND,
        "batch_size": 1,
        "spec": asdict(spec),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(str(path) + ".meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def read_bench_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        return [
            BenchRecord(r["variant"], int(r["T"]), int(r["median_ns"]), int(r["macs"]),
                        int(r["peak_bytes"]), bool(int(r["skipped"])))
            for r in csv.DictReader(fh)
        ]
