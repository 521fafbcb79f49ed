"""Masked-frame reconstruction warm-up that seasons the all-attention stack.

It stands in for self-supervised pretraining so that pretrained attention and
freshly initialized attention are distinguishable.
"""

from __future__ import annotations

import numpy as np

from ..mixing import SequenceMask
from ..numerics import Linear, Tensor, mul, no_grad, sum_all
from .model import EncoderStack, forward_features

MASK_RATE = 0.15


def _batch(samples, rng: np.random.Generator):
    T = max(s.valid_length for s in samples)
    d = samples[0].features.shape[1]
    X = np.zeros((len(samples), T, d))
    for i, s in enumerate(samples):
        X[i, : s.valid_length] = s.features
    lengths = [s.valid_length for s in samples]
    valid = np.arange(T)[None, :] < np.array(lengths)[:, None]
    hidden = (rng.random(valid.shape) < MASK_RATE) & valid
    hidden[np.arange(len(samples)), 0] |= ~hidden.any(axis=1)
    corrupted = X * ~hidden[..., None]
    return Tensor(corrupted), SequenceMask(lengths), X, hidden


def _loss(stack: EncoderStack, recon: Linear, batch) -> Tensor:
    X_in, mask, target, hidden = batch
    pred = recon(forward_features(stack, X_in, mask)[-1])
    w = hidden[..., None] / (hidden.sum() * target.shape[-1])
    return sum_all(mul(mul(pred - Tensor(target), pred - Tensor(target)), Tensor(w)))


def masked_reconstruction_warmup(
    stack: EncoderStack, steps: int, seed: int, batch_size: int = 8, lr: float = 1e-3
) -> dict:
    """Train every stack parameter to rebuild masked input frames; leaves the stack frozen.

    Returns the held-out reconstruction loss before and after.
    """
    from ..training.data import DatasetSpec, make_synthetic_dataset
    from ..training.optim import Adam

    spec = DatasetSpec(n=steps * batch_size + 32, d_in=stack.cfg.d_in, label_len=(3, 8))
    data = make_synthetic_dataset(spec, seed=10_000 + seed)
    train, held = data[:-32], data[-32:]
    rng = np.random.default_rng([seed, 31])
    recon = Linear(stack.cfg.d_model, stack.cfg.d_in, rng)
    held_batch = _batch(held, np.random.default_rng([seed, 37]))

    def held_loss() -> float:
        stack.eval()
        with no_grad():
            return _loss(stack, recon, held_batch).item()

    before = held_loss()
    stack.set_trainable(True)
    params = stack.parameters() + recon.parameters()
    opt = Adam({"all": (params, lr)})
    for step in range(steps):
        stack.train()
        opt.zero_grad()
        batch = _batch(train[step * batch_size : (step + 1) * batch_size], rng)
        _loss(stack, recon, batch).backward()
        opt.step()
    stack.set_trainable(False)
    stack.zero_grad()
    after = held_loss()
    return {"steps": steps, "held_out_before": before, "held_out_after": after,
            "reduction": 1.0 - after / before}
