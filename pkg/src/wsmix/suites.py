"""Randomized verification suites shared by the CLI and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder.model import PredictionHead, WeightedLayerSum, aggregate
from .mixing import MixingConfig, SequenceMask, build_block, window_mean
from .numerics import Parameter, Tensor, finite_diff_check, log_softmax, mul, sum_all
from .oracles import brute_force_ctc, naive_window_mean
from .training.ctc import ctc_loss, min_frames

GRAD_TOL = 1e-4
ORACLE_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    cases: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.cases} cases, max error {self.max_error:.3e} (tol {self.tolerance:g})"


RESULT_FIELDS = ["suite", "cases", "max_error", "tolerance", "passed"]


def result_row(r: CheckResult) -> list:
    return [r.name, r.cases, f"{r.max_error:.6e}", f"{r.tolerance:g}", int(r.passed)]


# ---------------------------------------------------------------- oracle suites


def window_oracle_suite(cases: int = 1000, seed: int = 0, max_T: int = 512) -> CheckResult:
    """Prefix-sum window mean vs the double-loop oracle on random padded batches of two."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for i in range(cases):
        T = int(rng.integers(1, max_T + 1))
        c = int(rng.integers(1, 17))
        k = int(rng.choice([3, 5, 7, 9]))
        mode = ("valid-count", "zero-pad")[i % 2]
        valid = [T, int(rng.integers(1, T + 1))]
        z = rng.normal(size=(2, T, c))
        m = SequenceMask(valid).frames(T)
        got = window_mean(Tensor(z), None if m.all() else m, k, mode).data
        for b in range(2):
            want = naive_window_mean(z[b], valid[b], k, mode)
            worst = max(worst, float(np.abs(got[b] - want).max()))
    return CheckResult("window-summary oracle", cases, worst, ORACLE_TOL)


def ctc_oracle_suite(cases: int = 600, seed: int = 0) -> CheckResult:
    """Forward-recursion CTC vs exhaustive enumeration of all V**T frame labellings."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    done = 0
    while done < cases:
        T = int(rng.integers(1, 7))
        V = int(rng.integers(2, 5))
        n = int(rng.integers(1, 4))
        labels = [int(x) for x in rng.integers(1, V, size=n)]
        if min_frames(labels) > T:
            continue
        logits = rng.normal(scale=2.0, size=(T, V))
        lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
        got = ctc_loss(Tensor(lp), labels, blank_id=0).item()
        want = brute_force_ctc(lp, labels, blank=0)
        worst = max(worst, abs(got - want))
        done += 1
    return CheckResult("ctc oracle", cases, worst, ORACLE_TOL)


# ---------------------------------------------------------------- gradient suites


def _block_check(config: MixingConfig, seed: int, T: int = 12, d: int = 8) -> float:
    rng = np.random.default_rng(seed)
    block = build_block(config, rng)
    block.eval()
    H = Parameter(rng.normal(size=(2, T, d)), name="input")
    mask = SequenceMask([T, T - 3])
    target = Tensor(rng.normal(size=(2, T, d)))

    def f():
        return sum_all(mul(block(H, mask), target))

    return max(finite_diff_check(f, p) for p in [H, *block.parameters()])


def gradient_suite(seed: int = 0) -> list[CheckResult]:
    d = 8
    results = []
    blocks = [
        ("SM block", MixingConfig(d_model=d, variant="SM", dropout=0.0)),
        ("WSM block valid-count", MixingConfig(d_model=d, variant="WSM", window_k=3, dropout=0.0)),
        ("WSM block zero-pad", MixingConfig(d_model=d, variant="WSM", window_k=3, dropout=0.0,
                                           boundary_mode="zero-pad")),
        ("attention block", MixingConfig(d_model=d, variant="Attention", heads=2, dropout=0.0)),
    ]
    for name, cfg in blocks:
        results.append(CheckResult(f"gradcheck {name}", 1, _block_check(cfg, seed), GRAD_TOL))
    results.append(CheckResult("gradcheck weighted sum + head", 1, _head_check(seed), GRAD_TOL))
    results.append(CheckResult("gradcheck ctc loss", 1, _ctc_check(seed), GRAD_TOL))
    return results


def _head_check(seed: int, n_layers: int = 3, T: int = 10, d: int = 8, vocab: int = 5) -> float:
    rng = np.random.default_rng(seed)
    feats = [Parameter(rng.normal(size=(2, T, d)), name=f"layer{i}") for i in range(n_layers + 1)]
    wls = WeightedLayerSum(n_layers + 1)
    wls.logits.data[:] = rng.normal(size=n_layers + 1)
    head = PredictionHead(d, 6, vocab, rng)
    target = Tensor(rng.normal(size=(2, T, vocab)))

    def f():
        return sum_all(mul(log_softmax(head(aggregate(feats, wls)), axis=-1), target))

    params = [wls.logits, *head.parameters(), *feats]
    return max(finite_diff_check(f, p) for p in params)


def _ctc_check(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = Parameter(rng.normal(size=(5, 4)), name="logits")
    single = finite_diff_check(lambda: ctc_loss(log_softmax(logits, axis=-1), [1, 2, 1], 0), logits)
    batch = Parameter(rng.normal(size=(3, 7, 4)), name="batch_logits")
    labels = [[1, 2, 1], [3], [2, 2]]
    batched = finite_diff_check(
        lambda: ctc_loss(log_softmax(batch, axis=-1), labels, 0, lengths=[5, 7, 3]), batch
    )
    return max(single, batched)
