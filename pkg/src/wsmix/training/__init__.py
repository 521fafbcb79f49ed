from .ctc import InfeasibleTargetError, ctc_loss, edit_distance, greedy_decode, min_frames
from .data import (
    BLANK,
    DatasetSpec,
    LabeledSequence,
    make_synthetic_dataset,
    nearest_prototype_decode,
    read_snapshot,
    split_dataset,
    write_snapshot,
)
from .loop import (
    DivergenceError,
    RunMetrics,
    TrainConfig,
    batch_loss,
    collate,
    finetune,
    parameter_digest,
    run_grid,
    token_error_rate,
    write_grid_csv,
    write_run_csv,
)
from .optim import Adam, GroupingError
