"""Selective fine-tuning loop and the variant x depth grid."""

from __future__ import annotations

import csv
import hashlib
import sys
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ..encoder.model import AsrModel, EncoderStack, ReplacementPlan, apply_replacement, trainable_parameters
from ..mixing import MixingConfig, SequenceMask
from ..numerics import NonFiniteError, Tensor, no_grad, track_activations
from .ctc import ctc_loss, edit_distance, greedy_decode
from .data import BLANK, LabeledSequence
from .optim import Adam


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 25
    lr_head: float = 1e-3
    lr_replaced: float = 3e-3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.lr_head <= 0 or self.lr_replaced <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class RunMetrics:
    variant: str
    depth: int | str
    step_losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    epoch_ter: list[float] = field(default_factory=list)
    epoch_wall_ms: list[float] = field(default_factory=list)
    final_ter: float = float("nan")
    wall_ms: float = 0.0
    peak_bytes: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]

    @property
    def loss_reduction(self) -> float:
        """Relative drop from the very first step's loss to the last epoch's mean loss."""
        return 1.0 - self.epoch_losses[-1] / self.step_losses[0]


def collate(samples: Sequence[LabeledSequence]) -> tuple[Tensor, SequenceMask, list[tuple[int, ...]]]:
    """Right-pad a list of samples into a (B, T_max, d_in) batch."""
    lengths = [s.valid_length for s in samples]
    T = max(lengths)
    X = np.zeros((len(samples), T, samples[0].features.shape[1]))
    for i, s in enumerate(samples):
        X[i, : s.valid_length] = s.features
    return Tensor(X), SequenceMask(lengths), [s.labels for s in samples]


def batch_loss(model: AsrModel, samples: Sequence[LabeledSequence]) -> Tensor:
    X, mask, labels = collate(samples)
    return ctc_loss(model(X, mask), labels, BLANK, mask.valid_lengths)


def token_error_rate(model: AsrModel, samples: Sequence[LabeledSequence], batch_size: int = 32) -> float:
    """Corpus-level edit distance over reference length, with greedy decoding."""
    was_training = model.training
    model.eval()
    errors = total = 0
    with no_grad():
        for i in range(0, len(samples), batch_size):
            chunk = samples[i : i + batch_size]
            X, mask, labels = collate(chunk)
            lp = model(X, mask).data
            for b, s in enumerate(chunk):
                hyp = greedy_decode(lp[b, : s.valid_length], BLANK)
                errors += edit_distance(hyp, labels[b])
                total += len(labels[b])
    model.train(was_training)
    return errors / total


def parameter_digest(params) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


def finetune(
    model: AsrModel,
    train: Sequence[LabeledSequence],
    held_out: Sequence[LabeledSequence],
    config: TrainConfig = TrainConfig(),
    log=None,
) -> RunMetrics:
    """Train only the replaced layers, the layer weights and the head with CTC + Adam."""
    if not train:
        raise ValueError("empty training set")
    plan = model.plan
    groups = model.parameter_groups()
    opt = Adam({"head": (groups["head"], config.lr_head), "replaced": (groups["replaced"], config.lr_replaced)})
    opt.check_covers(trainable_parameters(model))
    metrics = RunMetrics(plan.variant, plan.replace_last_n)
    model.train()
    start = time.perf_counter()
    step = 0
    with track_activations() as tracker:
        for epoch in range(config.epochs):
            order = np.random.default_rng([config.seed, epoch]).permutation(len(train))
            total = 0.0
            n_batches = 0
            for i in range(0, len(order), config.batch_size):
                batch = [train[j] for j in order[i : i + config.batch_size]]
                opt.zero_grad()
                try:
                    loss = batch_loss(model, batch)
                    loss.backward()
                except NonFiniteError as exc:
                    raise DivergenceError(f"non-finite value at epoch {epoch}, step {step}: {exc}") from exc
                value = loss.item()
                del loss
                if not np.isfinite(value):
                    raise DivergenceError(f"loss is {value} at epoch {epoch}, step {step}")
                opt.step()
                metrics.step_losses.append(value)
                total += value
                n_batches += 1
                step += 1
            metrics.epoch_losses.append(total / n_batches)
            metrics.epoch_ter.append(token_error_rate(model, held_out) if held_out else float("nan"))
            metrics.epoch_wall_ms.append((time.perf_counter() - start) * 1e3)
            if log is not None:
                log(f"{plan.variant} n={plan.replace_last_n} epoch {epoch + 1}: "
                    f"loss {metrics.epoch_losses[-1]:.4f} ter {metrics.epoch_ter[-1]:.4f}")
        metrics.peak_bytes = tracker.peak
    model.eval()
    metrics.final_ter = metrics.epoch_ter[-1]
    metrics.wall_ms = (time.perf_counter() - start) * 1e3
    return metrics


GRID_FIELDS = ["variant", "depth", "final_ter", "final_loss", "wall_ms", "peak_bytes"]
RUN_FIELDS = ["variant", "depth", "epoch", "loss", "ter", "wall_ms", "peak_bytes"]


def grid_cell_plan(variant: str, depth, n_layers: int, seed: int, mixing: MixingConfig) -> ReplacementPlan | None:
    """Plan for one table cell, or None where the cell is undefined (All with a fresh block)."""
    if depth == "All" or depth == n_layers and variant == "All-Att-PT":
        if variant not in ("Att-PT", "All-Att-PT"):
            return None
        return ReplacementPlan(n_layers, "All-Att-PT", seed, mixing)
    return ReplacementPlan(int(depth), variant, seed, mixing)


def run_grid(
    stack: EncoderStack,
    variants: Iterable[str],
    depths: Iterable,
    train: Sequence[LabeledSequence],
    held_out: Sequence[LabeledSequence],
    config: TrainConfig = TrainConfig(),
    mixing: MixingConfig | None = None,
    log=None,
) -> list[RunMetrics | tuple[str, object]]:
    """One fine-tuning run per (variant, depth); undefined cells come back as (variant, depth)."""
    mixing = mixing or MixingConfig(d_model=stack.cfg.d_model)
    out: list = []
    for variant in variants:
        for depth in depths:
            plan = grid_cell_plan(variant, depth, stack.cfg.n_layers, config.seed, mixing)
            if plan is None:
                print(f"skipping {variant} x {depth}: only pretrained attention is trained on all layers",
                      file=sys.stderr)
                out.append((variant, depth))
                continue
            model = AsrModel(apply_replacement(stack, plan), seed=config.seed)
            metrics = finetune(model, train, held_out, config, log=log)
            metrics.depth = depth
            metrics.variant = variant
            out.append(metrics)
    return out


def write_grid_csv(path_or_file, cells: list) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_FIELDS)
        for c in cells:
            if isinstance(c, tuple):
                w.writerow([c[0], c[1], "-", "-", "-", "-"])
            else:
                w.writerow([c.variant, c.depth, f"{c.final_ter:.6f}", f"{c.final_loss:.6f}",
                            f"{c.wall_ms:.1f}", c.peak_bytes])
    finally:
        if own:
            fh.close()


def write_run_csv(path_or_file, runs: list[RunMetrics]) -> None:
    own = isinstance(path_or_file, (str, bytes)) or hasattr(path_or_file, "__fspath__")
    fh = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_FIELDS)
        for r in runs:
            for e, (loss, ter, ms) in enumerate(zip(r.epoch_losses, r.epoch_ter, r.epoch_wall_ms), 1):
                w.writerow([r.variant, r.depth, e, f"{loss:.6f}", f"{ter:.6f}", f"{ms:.1f}", r.peak_bytes])
    finally:
        if own:
            fh.close()
