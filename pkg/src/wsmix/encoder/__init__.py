from .checkpoint import load_checkpoint, save_checkpoint
from .model import (
    PLAN_VARIANTS,
    AsrModel,
    EncoderConfig,
    EncoderLayer,
    EncoderStack,
    PlanError,
    PredictionHead,
    ReplacementPlan,
    WeightedLayerSum,
    aggregate,
    apply_replacement,
    build_pretrained_stack,
    forward_features,
    trainable_parameters,
)
