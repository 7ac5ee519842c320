"""Targeted range attacks on scalar regression networks."""

from .attack import (
    PRESETS,
    AttackConfig,
    AttackError,
    AttackResult,
    TargetRange,
    attack,
    center_radius,
    in_range,
    in_range_reformulated,
    nearest_bound_distance,
    objective,
    project_delta,
    round_delta,
)
from .data import (
    LabeledDataset,
    PPMError,
    grand_mean,
    read_dataset,
    read_ppm,
    split,
    synth_dataset,
    synth_label,
    write_dataset,
    write_ppm,
)
from .metrics import (
    AttackRecord,
    boundary_projection,
    dither,
    lp_norms,
    read_report,
    record_from_result,
    summarize,
    trend_statistic,
    write_plot_tables,
    write_report,
)
from .tensor import Affine, Conv2d, ReLU, ShapeError
from .victim import (
    ModelFormatError,
    PreprocessSpec,
    TrainConfig,
    VictimNetwork,
    adam_step,
    default_victim,
    forward,
    input_gradient,
    load_model,
    predict_batch,
    save_model,
    train,
    value_and_gradient,
)

__version__ = "0.1.0"
