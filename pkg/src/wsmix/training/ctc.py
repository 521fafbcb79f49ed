"""CTC loss (log-space forward/backward recursions) and greedy decoding."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..numerics import Tensor, make_result
from ..numerics.tensor import DimensionError


class InfeasibleTargetError(ValueError):
    """The label sequence cannot be emitted in the available frames."""


def min_frames(labels: Sequence[int]) -> int:
    """Frames needed to emit ``labels``: one per label plus a blank between repeats."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def ctc_loss(
    log_probs: Tensor,
    labels,
    blank_id: int = 0,
    lengths: Sequence[int] | None = None,
) -> Tensor:
    """Negative log-likelihood of ``labels`` under CTC.

    ``log_probs`` is (T, V) with one label sequence, or (B, T, V) with a list
    of label sequences and optional per-sequence frame counts; batched losses
    are averaged over sequences.
    """
    lp = log_probs.data
    single = lp.ndim == 2
    if single:
        lp = lp[None]
        labels = [labels]
    if lp.ndim != 3:
        raise DimensionError(f"ctc_loss expects (T, V) or (B, T, V), got {log_probs.shape}")
    B, T, V = lp.shape
    if len(labels) != B:
        raise DimensionError(f"{len(labels)} label sequences for a batch of {B}")
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths, dtype=int)
    for b, lab in enumerate(labels):
        if any(c == blank_id or not 0 <= c < V for c in lab):
            raise ValueError(f"labels {list(lab)} contain the blank or out-of-vocabulary ids")
        if not 1 <= lengths[b] <= T:
            raise DimensionError(f"frame count {lengths[b]} outside [1, {T}]")
        if min_frames(lab) > lengths[b]:
            raise InfeasibleTargetError(
                f"labels of length {len(lab)} need {min_frames(lab)} frames, only {lengths[b]} given"
            )

    L = max(len(lab) for lab in labels)
    S = 2 * L + 1
    ext = np.full((B, S), blank_id)
    n_states = np.array([2 * len(lab) + 1 for lab in labels])
    for b, lab in enumerate(labels):
        ext[b, 1 : 2 * len(lab) : 2] = lab
    valid_state = np.arange(S)[None, :] < n_states[:, None]
    skip = np.zeros((B, S), dtype=bool)
    skip[:, 2:] = (ext[:, 2:] != blank_id) & (ext[:, 2:] != ext[:, :-2])
    skip &= valid_state

    emit = np.take_along_axis(lp, np.broadcast_to(ext[:, None, :], (B, T, S)), axis=2)
    neg_inf = -np.inf

    alpha = np.full((B, T, S), neg_inf)
    alpha[:, 0, 0] = emit[:, 0, 0]
    alpha[:, 0, 1] = np.where(n_states > 1, emit[:, 0, 1], neg_inf)
    for t in range(1, T):
        prev = alpha[:, t - 1]
        acc = prev.copy()
        np.logaddexp(acc[:, 1:], prev[:, :-1], out=acc[:, 1:])
        acc[:, 2:] = np.where(skip[:, 2:], np.logaddexp(acc[:, 2:], prev[:, :-2]), acc[:, 2:])
        acc += emit[:, t]
        acc[~valid_state] = neg_inf
        alpha[:, t] = acc

    rows = np.arange(B)
    last = alpha[rows, lengths - 1]
    final = last[rows, n_states - 1]
    second = np.where(n_states > 1, last[rows, np.maximum(n_states - 2, 0)], neg_inf)
    log_p = np.logaddexp(final, second)

    # beta[t, s]: log-probability of finishing from state s at frame t, emission at t excluded
    end_state = np.full((B, S), neg_inf)
    end_state[rows, n_states - 1] = 0.0
    end_state[rows[n_states > 1], n_states[n_states > 1] - 2] = 0.0
    beta = np.full((B, T, S), neg_inf)
    t_last = lengths - 1
    for t in range(T - 1, -1, -1):
        if t < T - 1:
            nxt = beta[:, t + 1] + emit[:, t + 1]
            acc = nxt.copy()
            np.logaddexp(acc[:, :-1], nxt[:, 1:], out=acc[:, :-1])
            acc[:, :-2] = np.where(skip[:, 2:], np.logaddexp(acc[:, :-2], nxt[:, 2:]), acc[:, :-2])
            acc[~valid_state] = neg_inf
        else:
            acc = np.full((B, S), neg_inf)
        here = (t == t_last)[:, None]
        after = (t > t_last)[:, None]
        beta[:, t] = np.where(here, end_state, np.where(after, neg_inf, acc))

    frames = (np.arange(T)[None, :] < lengths[:, None])[..., None]
    with np.errstate(invalid="ignore"):
        post = np.exp(alpha + beta - log_p[:, None, None])
    post = np.where(frames & valid_state[:, None, :], post, 0.0)
    onehot = np.zeros((B, S, V))
    onehot[rows[:, None], np.arange(S)[None, :], ext] = valid_state
    grad = -np.matmul(post, onehot)

    losses = -log_p
    if single:
        out = np.asarray(losses[0])
        return make_result(out, (log_probs,), lambda g: (g * grad[0],), "ctc_loss", grad.nbytes)
    out = np.asarray(losses.mean())
    return make_result(out, (log_probs,), lambda g: (g * grad / B,), "ctc_loss", grad.nbytes)


def greedy_decode(log_probs, blank_id: int = 0) -> list[int]:
    """Best path: per-frame argmax, merge repeats, drop blanks."""
    data = log_probs.data if isinstance(log_probs, Tensor) else np.asarray(log_probs)
    path = np.argmax(data, axis=-1)
    out: list[int] = []
    prev = None
    for c in path.tolist():
        if c != prev and c != blank_id:
            out.append(c)
        prev = c
    return out


def edit_distance(a: Sequence[int], b: Sequence[int]) -> int:
    row = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        prev_diag, row[0] = row[0], i
        for j, y in enumerate(b, 1):
            prev_diag, row[j] = row[j], min(row[j] + 1, row[j - 1] + 1, prev_diag + (x != y))
    return row[-1]
