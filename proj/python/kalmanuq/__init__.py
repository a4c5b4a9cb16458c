"""State estimation with model-based and learned Kalman filters.

The heavy lifting lives in the C++ core; this package re-exports the bound
operations: scenario models, dataset simulation, the extended Kalman filter,
training of the learned variants and the calibration metrics.
"""

from ._core import (
    ConfigError,
    Dataset,
    FilterResult,
    IoError,
    Model,
    NumericalError,
    TrainConfig,
    TrainError,
    TrainLogRow,
    TrainResult,
    TrainedFilter,
    Trajectory,
    apply_mismatch,
    compute_anees,
    compute_apec,
    compute_eec,
    compute_mse,
    derive_seed,
    generate_dataset,
    make_model,
    project_states,
    read_dataset_csv,
    run_ekf,
    simulate_trajectory,
    train_filter,
    train_filter_multi,
    write_dataset_csv,
)

__all__ = [
    "ConfigError",
    "Dataset",
    "FilterResult",
    "IoError",
    "Model",
    "NumericalError",
    "TrainConfig",
    "TrainError",
    "TrainLogRow",
    "TrainResult",
    "TrainedFilter",
    "Trajectory",
    "apply_mismatch",
    "compute_anees",
    "compute_apec",
    "compute_eec",
    "compute_mse",
    "derive_seed",
    "generate_dataset",
    "make_model",
    "project_states",
    "read_dataset_csv",
    "run_ekf",
    "simulate_trajectory",
    "train_filter",
    "train_filter_multi",
    "write_dataset_csv",
]

__version__ = "0.1.0"
