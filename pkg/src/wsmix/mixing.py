"""Sequence-mixing blocks: SummaryMixing, Windowed SummaryMixing and self-attention.

All blocks map a (B, T, d) or (T, d) tensor to the same shape. Padded frames
(beyond each sequence's valid length) never influence valid outputs and are
returned as zeros.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    DimensionError,
    Dropout,
    FeedForward,
    Linear,
    Module,
    Tensor,
    concat,
    count_macs,
    expand,
    is_grad_enabled,
    make_result,
    matmul,
    mul,
    narrow,
    reshape,
    scale,
    softmax,
    swapaxes,
)

VARIANTS = ("SM", "WSM", "Attention")
BOUNDARY_MODES = ("valid-count", "zero-pad")


class EmptySequenceError(ValueError):
    """A sequence has no valid frames to summarize."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class MixingConfig:
    d_model: int = 64
    d_summary: int | None = None  # defaults to d_model
    window_k: int = 5
    boundary_mode: str = "valid-count"
    variant: str = "WSM"
    heads: int = 4
    dropout: float = 0.1
    share_summary: bool = True

    def __post_init__(self) -> None:
        if self.d_summary is None:
            object.__setattr__(self, "d_summary", self.d_model)
        if self.d_model < 1 or self.d_summary < 1:
            raise ConfigError("d_model and d_summary must be >= 1")
        if self.window_k < 1:
            raise ConfigError(f"window_k must be >= 1, got {self.window_k}")
        if self.boundary_mode not in BOUNDARY_MODES:
            raise ConfigError(f"boundary_mode must be one of {BOUNDARY_MODES}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def window_length(self) -> int:
        return 2 * self.window_k + 1

    def replace(self, **changes) -> "MixingConfig":
        from dataclasses import replace

        return replace(self, **changes)


@dataclass(frozen=True)
class SequenceMask:
    """Per-sequence valid frame counts of a right-padded batch."""

    valid_lengths: tuple[int, ...] = field(default_factory=tuple)

    def __init__(self, valid_lengths) -> None:
        object.__setattr__(self, "valid_lengths", tuple(int(n) for n in valid_lengths))

    @classmethod
    def full(cls, batch: int, T: int) -> "SequenceMask":
        return cls([T] * batch)

    def frames(self, T: int) -> np.ndarray:
        """Boolean (B, T) array, True on valid frames."""
        lengths = np.asarray(self.valid_lengths)
        if (lengths < 1).any():
            raise EmptySequenceError("every sequence needs at least one valid frame")
        if (lengths > T).any():
            raise DimensionError(f"valid lengths {self.valid_lengths} exceed padded length {T}")
        return np.arange(T)[None, :] < lengths[:, None]


def _as_batch(H: Tensor) -> tuple[Tensor, bool]:
    if H.ndim == 2:
        return reshape(H, (1, *H.shape)), True
    if H.ndim != 3:
        raise DimensionError(f"expected (T, d) or (B, T, d) input, got {H.shape}")
    return H, False


def _frame_mask(mask: SequenceMask | None, B: int, T: int) -> np.ndarray | None:
    if T < 1:
        raise EmptySequenceError("sequence has zero frames")
    if mask is None:
        return None
    if len(mask.valid_lengths) != B:
        raise DimensionError(f"mask covers {len(mask.valid_lengths)} sequences, batch has {B}")
    m = mask.frames(T)
    return None if m.all() else m


def _zero_padding(Y: Tensor, m: np.ndarray | None) -> Tensor:
    if m is None:
        return Y
    return mul(Y, Tensor(m[..., None].astype(np.float64)))


def _unbatch(Y: Tensor, squeeze: bool) -> Tensor:
    return reshape(Y, Y.shape[1:]) if squeeze else Y


# ---------------------------------------------------------------- pooling ops


def masked_mean(z: Tensor, m: np.ndarray | None) -> Tensor:
    """Mean over the time axis of (B, T, c) restricted to valid frames -> (B, 1, c)."""
    B, T, _ = z.shape
    count_macs(z.size)
    if m is None:
        out = z.data.sum(axis=1, keepdims=True)
        out /= T
        return make_result(out, (z,), lambda g: (np.broadcast_to(g / T, z.shape),), "masked_mean")
    counts = m.sum(axis=1)
    if (counts == 0).any():
        raise EmptySequenceError("global summary over zero valid frames")
    w = (m / counts[:, None])[..., None]
    out = np.matmul(np.swapaxes(w, 1, 2), z.data)
    return make_result(out, (z,), lambda g: (g * w,), "masked_mean", saved_bytes=w.nbytes)


def window_mean(z: Tensor, m: np.ndarray | None, k: int, mode: str = "valid-count") -> Tensor:
    """Centered (2k+1)-frame moving average along time of (B, T, c), via prefix sums.

    Out-of-range and padded frames contribute zero. ``valid-count`` divides by
    the number of contributing frames; ``zero-pad`` always divides by 2k+1.
    Output rows at padded frames are zero. Cost is O(B*T*c), independent of k.
    """
    if mode not in BOUNDARY_MODES:
        raise ConfigError(f"unknown boundary mode {mode!r}")
    B, T, c = z.shape
    if m is not None and (m.sum(axis=1) == 0).any():
        raise EmptySequenceError("window summary over zero valid frames")
    mf = None if m is None else m[..., None].astype(np.float64)

    buf = np.empty((B, T + 1, c))
    buf[:, 0] = 0.0
    if mf is None:
        buf[:, 1:] = z.data
    else:
        np.multiply(z.data, mf, out=buf[:, 1:])
    np.cumsum(buf, axis=1, out=buf)
    out = _window_diff(buf, k, T)
    del buf

    if mode == "zero-pad":
        norm: np.ndarray | float = 1.0 / (2 * k + 1)
        out *= norm
    else:
        if mf is None:
            n = np.minimum(np.arange(T) + k, T - 1) - np.maximum(np.arange(T) - k, 0) + 1
            norm = np.broadcast_to((1.0 / n)[None, :, None], (B, T, 1)).copy()
        else:
            cm = np.concatenate([np.zeros((B, 1, 1)), np.cumsum(mf, axis=1)], axis=1)
            n = _window_diff(cm, k, T)
            norm = np.divide(1.0, n, out=np.zeros_like(n), where=n > 0)
        out *= norm
    if mf is not None:
        out *= mf
    count_macs(3 * B * T * c)

    def backward(g):
        # the window is symmetric, so the adjoint is the same window applied to g * norm
        u = g * norm
        if mf is not None:
            u *= mf
        gb = np.empty((B, T + 1, c))
        gb[:, 0] = 0.0
        gb[:, 1:] = u
        np.cumsum(gb, axis=1, out=gb)
        gz = _window_diff(gb, k, T)
        if mf is not None:
            gz *= mf
        return (gz,)

    saved = norm.nbytes if isinstance(norm, np.ndarray) else 0
    if mf is not None:
        saved += mf.nbytes
    return make_result(out, (z,), backward, "window_mean", saved_bytes=saved)


def _window_diff(prefix: np.ndarray, k: int, T: int) -> np.ndarray:
    """out[:, t] = prefix[:, min(t+k+1, T)] - prefix[:, max(t-k, 0)] using slices only."""
    out = np.empty((prefix.shape[0], T, prefix.shape[2]))
    split = max(T - k - 1, 0)
    if split:
        out[:, :split] = prefix[:, k + 1 : T]
    out[:, split:] = prefix[:, T : T + 1]
    lead = min(k, T)
    out[:, :lead] -= prefix[:, 0:1]
    if T > k:
        out[:, k:] -= prefix[:, : T - k]
    return out


# ---------------------------------------------------------------- blocks


class SummaryMixing(Module):
    """y_t = ff_out([ff_local(h_t), s_g]) with s_g the mean of ff_summary(h) over valid frames."""

    arity = 2

    def __init__(self, config: MixingConfig, rng: np.random.Generator) -> None:
        self.config = config
        d, ds = config.d_model, config.d_summary
        self.ff_local = FeedForward(d, ds, rng)
        self.ff_summary = FeedForward(d, ds, rng)
        self.ff_out = FeedForward(self.arity * ds, d, rng, rate=config.dropout)

    def __call__(self, H: Tensor, mask: SequenceMask | None = None) -> Tensor:
        return sm_forward(H, mask, self)


class WindowedSummaryMixing(SummaryMixing):
    """SummaryMixing plus a per-frame neighbourhood mean as a third ff_out input."""

    arity = 3

    def __init__(self, config: MixingConfig, rng: np.random.Generator) -> None:
        super().__init__(config, rng)
        self.ff_window = None if config.share_summary else FeedForward(
            config.d_model, config.d_summary, rng
        )

    def __call__(self, H: Tensor, mask: SequenceMask | None = None) -> Tensor:
        return wsm_forward(H, mask, self.config, self)


def global_summary(H: Tensor, mask: SequenceMask | None, params: SummaryMixing) -> Tensor:
    """Mean of ff_summary over the valid frames: (d_summary,) or (B, 1, d_summary)."""
    Hb, squeeze = _as_batch(H)
    m = _frame_mask(mask, Hb.shape[0], Hb.shape[1])
    s = masked_mean(params.ff_summary(Hb), m)
    return reshape(s, (s.shape[-1],)) if squeeze else s


def windowed_summary(
    H: Tensor, mask: SequenceMask | None, config: MixingConfig, params: SummaryMixing
) -> Tensor:
    """Per-frame mean of ff_summary over frames t-k..t+k: (T, d_summary) or (B, T, d_summary)."""
    Hb, squeeze = _as_batch(H)
    m = _frame_mask(mask, Hb.shape[0], Hb.shape[1])
    ff = getattr(params, "ff_window", None) or params.ff_summary
    return _unbatch(window_mean(ff(Hb), m, config.window_k, config.boundary_mode), squeeze)


def sm_forward(H: Tensor, mask: SequenceMask | None, params: SummaryMixing) -> Tensor:
    Hb, squeeze = _as_batch(H)
    B, T, _ = Hb.shape
    m = _frame_mask(mask, B, T)
    local = params.ff_local(Hb)
    s_g = masked_mean(params.ff_summary(Hb), m)
    Y = params.ff_out(concat([local, expand(s_g, local.shape)], axis=-1))
    return _unbatch(_zero_padding(Y, m), squeeze)


def wsm_forward(
    H: Tensor, mask: SequenceMask | None, config: MixingConfig, params: WindowedSummaryMixing
) -> Tensor:
    Hb, squeeze = _as_batch(H)
    B, T, _ = Hb.shape
    m = _frame_mask(mask, B, T)
    local = params.ff_local(Hb)
    z = params.ff_summary(Hb)
    s_g = masked_mean(z, m)
    if params.ff_window is not None:
        z = params.ff_window(Hb)
    s_w = window_mean(z, m, config.window_k, config.boundary_mode)
    Y = params.ff_out(concat([local, expand(s_g, local.shape), s_w], axis=-1))
    return _unbatch(_zero_padding(Y, m), squeeze)


class MultiHeadAttention(Module):
    """Multi-head scaled dot-product self-attention over valid keys.

    Heads are processed one at a time, so only one (B, T, T) score matrix is
    materialized at once when the tape is off.
    """

    def __init__(self, config: MixingConfig, rng: np.random.Generator) -> None:
        d, h = config.d_model, config.heads
        if h < 1 or d % h:
            raise ConfigError(f"d_model={d} is not divisible by heads={h}")
        self.config = config
        self.heads = h
        self.wq = Linear(d, d, rng)
        self.wk = Linear(d, d, rng)
        self.wv = Linear(d, d, rng)
        self.wo = Linear(d, d, rng)
        self.drop = Dropout(config.dropout, np.random.default_rng(rng.integers(2**63)))

    def __call__(self, H: Tensor, mask: SequenceMask | None = None) -> Tensor:
        return attention_forward(H, mask, self)


def attention_forward(H: Tensor, mask: SequenceMask | None, params: MultiHeadAttention) -> Tensor:
    Hb, squeeze = _as_batch(H)
    B, T, d = Hb.shape
    m = _frame_mask(mask, B, T)
    h = params.heads
    dh = d // h
    q = scale(params.wq(Hb), 1.0 / math.sqrt(dh))
    k = params.wk(Hb)
    v = params.wv(Hb)
    key_mask = None if m is None else m[:, None, :]
    # the score buffer may be overwritten in place only when nothing will replay it
    recording = is_grad_enabled() and (
        Hb.requires_grad or any(p.requires_grad for p in params.parameters())
    )
    outs = []
    for i in range(h):
        qi = narrow(q, -1, i * dh, dh)
        ki = narrow(k, -1, i * dh, dh)
        vi = narrow(v, -1, i * dh, dh)
        scores = matmul(qi, swapaxes(ki, -1, -2))
        probs = softmax(scores, axis=-1, mask=key_mask, overwrite=not recording)
        del scores
        outs.append(matmul(probs, vi))
        del probs
    Y = params.drop(params.wo(concat(outs, axis=-1)))
    return _unbatch(_zero_padding(Y, m), squeeze)


def build_block(config: MixingConfig, rng: np.random.Generator) -> Module:
    if config.variant == "SM":
        return SummaryMixing(config, rng)
    if config.variant == "WSM":
        return WindowedSummaryMixing(config, rng)
    return MultiHeadAttention(config, rng)
