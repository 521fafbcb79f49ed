"""Toy pretrained encoder, layer replacement, weighted layer sum and prediction head."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..mixing import MixingConfig, MultiHeadAttention, SequenceMask, build_block
from ..numerics import (
    Dropout,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    Tensor,
    gelu,
    log_softmax,
    no_grad,
    softmax,
    weighted_sum,
)
from ..numerics.tensor import ContractError

PLAN_VARIANTS = ("SM", "WSM", "Att-PT", "Att-scratch", "All-Att-PT")


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    d_in: int = 32
    d_model: int = 64
    n_layers: int = 6
    heads: int = 4
    d_ff: int = 256
    vocab_size: int = 29  # 28 characters + blank
    head_hidden: int = 64
    dropout: float = 0.1


@dataclass(frozen=True)
class ReplacementPlan:
    replace_last_n: int = 2
    variant: str = "WSM"
    seed: int = 0
    mixing: MixingConfig = field(default_factory=MixingConfig)

    def __post_init__(self) -> None:
        if self.variant not in PLAN_VARIANTS:
            raise PlanError(f"variant must be one of {PLAN_VARIANTS}, got {self.variant!r}")
        if self.replace_last_n < 0:
            raise PlanError("replace_last_n must be >= 0")

    def validate(self, n_layers: int, d_model: int) -> None:
        if self.mixing.d_model != d_model:
            raise PlanError(f"mixing width {self.mixing.d_model} != encoder width {d_model}")
        if self.replace_last_n > n_layers:
            raise PlanError(f"cannot replace {self.replace_last_n} of {n_layers} layers")
        if self.variant == "All-Att-PT" and self.replace_last_n != n_layers:
            raise PlanError("All-Att-PT fine-tunes every layer")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ReplacementPlan":
        d = dict(d)
        d["mixing"] = MixingConfig(**d.get("mixing", {}))
        return cls(**d)


class EncoderLayer(Module):
    """Pre-norm transformer layer whose token mixer can be any block variant."""

    def __init__(self, cfg: EncoderConfig, mixer: Module, rng: np.random.Generator) -> None:
        self.norm1 = LayerNorm(cfg.d_model)
        self.mixer = mixer
        self.norm2 = LayerNorm(cfg.d_model)
        self.ff1 = Linear(cfg.d_model, cfg.d_ff, rng)
        self.ff2 = Linear(cfg.d_ff, cfg.d_model, rng)
        self.drop = Dropout(cfg.dropout, np.random.default_rng(rng.integers(2**63)))

    def __call__(self, x: Tensor, mask: SequenceMask | None = None) -> Tensor:
        x = x + self.mixer(self.norm1(x), mask)
        return x + self.drop(self.ff2(gelu(self.ff1(self.norm2(x)))))


def sinusoidal_positions(T: int, d: int) -> np.ndarray:
    pos = np.arange(T)[:, None]
    freq = np.exp(-np.log(10000.0) * (np.arange(0, d, 2) / d))
    pe = np.zeros((T, d))
    pe[:, 0::2] = np.sin(pos * freq)
    pe[:, 1::2] = np.cos(pos * freq[: d // 2])
    return pe


class EncoderStack(Module):
    """Input projection plus fixed sinusoidal positions, followed by L encoder layers."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator) -> None:
        self.cfg = cfg
        self.embed = Linear(cfg.d_in, cfg.d_model, rng)
        attn = MixingConfig(
            d_model=cfg.d_model, variant="Attention", heads=cfg.heads, dropout=cfg.dropout
        )
        self.layers = [EncoderLayer(cfg, MultiHeadAttention(attn, rng), rng) for _ in range(cfg.n_layers)]
        self.plan = ReplacementPlan(replace_last_n=0, variant="Att-PT")
        self.pretrain_report: dict | None = None

    @property
    def layer_trainable(self) -> list[bool]:
        return [any(p.trainable for p in layer.parameters()) for layer in self.layers]

    def forward_features(self, X: Tensor, mask: SequenceMask | None = None) -> list[Tensor]:
        """Embedding output followed by every layer output (L+1 tensors)."""
        return forward_features(self, X, mask)


def forward_features(stack: EncoderStack, X: Tensor, mask: SequenceMask | None = None) -> list[Tensor]:
    if X.shape[-1] != stack.cfg.d_in:
        raise ContractError(f"input width {X.shape[-1]} != encoder input width {stack.cfg.d_in}")
    flags = stack.layer_trainable
    first = flags.index(True) if True in flags else len(flags)
    # the frozen prefix cannot receive gradient, so it runs off the tape
    with no_grad():
        outs = [stack.embed(X) + Tensor(sinusoidal_positions(X.shape[-2], stack.cfg.d_model))]
        for layer in stack.layers[:first]:
            outs.append(layer(outs[-1], mask))
    for layer in stack.layers[first:]:
        outs.append(layer(outs[-1], mask))
    return outs


class WeightedLayerSum(Module):
    def __init__(self, n_inputs: int) -> None:
        self.logits = Parameter(np.zeros(n_inputs))

    def weights(self) -> Tensor:
        return softmax(self.logits, axis=-1)

    def __call__(self, layer_outputs: list[Tensor]) -> Tensor:
        return aggregate(layer_outputs, self)


def aggregate(layer_outputs: list[Tensor], wls: WeightedLayerSum) -> Tensor:
    if len(layer_outputs) != wls.logits.shape[0]:
        raise ContractError(
            f"{len(layer_outputs)} layer outputs for {wls.logits.shape[0]} layer weights"
        )
    return weighted_sum(layer_outputs, wls.weights())


class PredictionHead(Module):
    """affine -> GeLU -> affine onto the vocabulary; frame count is preserved."""

    def __init__(self, d_model: int, hidden: int, vocab_size: int, rng: np.random.Generator) -> None:
        self.hidden = Linear(d_model, hidden, rng)
        self.out = Linear(hidden, vocab_size, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(gelu(self.hidden(x)))


class AsrModel(Module):
    """Encoder stack + learnable weighted layer sum + prediction head."""

    def __init__(self, stack: EncoderStack, seed: int = 0) -> None:
        rng = np.random.default_rng([seed, 7919])
        cfg = stack.cfg
        self.stack = stack
        self.wls = WeightedLayerSum(cfg.n_layers + 1)
        self.head = PredictionHead(cfg.d_model, cfg.head_hidden, cfg.vocab_size, rng)
        self.assign_names()

    @property
    def plan(self) -> ReplacementPlan:
        return self.stack.plan

    def train(self, mode: bool = True) -> "AsrModel":
        super().train(mode)
        # frozen layers behave as at inference time: no dropout
        for layer, flag in zip(self.stack.layers, self.stack.layer_trainable):
            if not flag:
                layer.eval()
        return self

    def __call__(self, X: Tensor, mask: SequenceMask | None = None) -> Tensor:
        """Per-frame log-probabilities over the vocabulary."""
        feats = forward_features(self.stack, X, mask)
        return log_softmax(self.head(aggregate(feats, self.wls)), axis=-1)

    def parameter_groups(self) -> dict[str, list[Parameter]]:
        """Trainable parameters split into the replaced-layer group and the head group."""
        head = [self.wls.logits, *self.head.parameters()]
        head_ids = {id(p) for p in head}
        replaced = [p for p in self.stack.parameters() if p.trainable and id(p) not in head_ids]
        return {"head": [p for p in head if p.trainable], "replaced": replaced}


def build_pretrained_stack(
    d_model: int = 64,
    n_layers: int = 6,
    heads: int = 4,
    seed: int = 0,
    warmup_steps: int = 0,
    **cfg_overrides,
) -> EncoderStack:
    """Seeded all-attention stack, optionally seasoned by masked-frame reconstruction."""
    if n_layers < 1:
        raise PlanError("need at least one layer")
    cfg = EncoderConfig(d_model=d_model, n_layers=n_layers, heads=heads, **cfg_overrides)
    stack = EncoderStack(cfg, np.random.default_rng(seed))
    stack.set_trainable(False)
    stack.assign_names("stack.")
    if warmup_steps > 0:
        from .pretrain import masked_reconstruction_warmup

        stack.pretrain_report = masked_reconstruction_warmup(stack, warmup_steps, seed)
    return stack


def apply_replacement(stack: EncoderStack, plan: ReplacementPlan) -> EncoderStack:
    """Copy of ``stack`` with its last ``plan.replace_last_n`` mixers swapped per ``plan``.

    Replaced layers (mixer, norms and feed-forward) become trainable; every
    other parameter, including the input embedding, is frozen.
    """
    cfg = stack.cfg
    plan.validate(cfg.n_layers, cfg.d_model)
    out = copy.deepcopy(stack)
    out.set_trainable(False)
    first = cfg.n_layers - plan.replace_last_n
    for i in range(first, cfg.n_layers):
        layer = out.layers[i]
        rng = np.random.default_rng([plan.seed, i])
        if plan.variant in ("SM", "WSM"):
            layer.mixer = build_block(plan.mixing.replace(variant=plan.variant, dropout=cfg.dropout), rng)
        elif plan.variant == "Att-scratch":
            layer.mixer = MultiHeadAttention(layer.mixer.config, rng)
        layer.set_trainable(True)
    out.plan = plan
    out.assign_names("stack.")
    return out


def trainable_parameters(model: AsrModel) -> list[Parameter]:
    """Replaced-layer parameters, weighted-sum logits and head parameters, nothing else."""
    return [p for p in model.parameters() if p.trainable]
