"""Python bindings for the advlab C++ core."""

from ._core import (
    Network,
    __version__,
    calibrate_threshold,
    deepfool,
    dense_path_sum,
    duality_gap,
    fgsm,
    grad_penalty_loss,
    hein_bound,
    read_records_csv,
    records_header,
    scaling_slope,
    step_l2,
    synth_gaussian,
    upsample_copy,
)

__all__ = [
    "Network",
    "__version__",
    "calibrate_threshold",
    "deepfool",
    "dense_path_sum",
    "duality_gap",
    "fgsm",
    "grad_penalty_loss",
    "hein_bound",
    "read_records_csv",
    "records_header",
    "scaling_slope",
    "step_l2",
    "synth_gaussian",
    "upsample_copy",
]
