"""Fine-tuning, evaluation, checkpoint/config I/O and the command-line interface."""

from .checkpoint import (
    Checkpoint,
    CheckpointError,
    checkpoint_from_model,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
)
from .config import ConfigError, FinetuneConfig, RunConfig, config_digest, load_config, parse_config
from .evaluate import (
    EvalReport,
    evaluate_classification,
    evaluate_imputation,
    mean_impute_baseline,
    reports_from_json,
    reports_to_json,
    reports_to_table,
    run_missingness_sweep,
)
from .finetune import FinetuneResult, extract_features, finetune, predict_proba
from .metrics import accuracy, auc, rmse

__all__ = [
    "Checkpoint",
    "CheckpointError",
    "ConfigError",
    "EvalReport",
    "FinetuneConfig",
    "FinetuneResult",
    "RunConfig",
    "accuracy",
    "auc",
    "checkpoint_from_model",
    "config_digest",
    "evaluate_classification",
    "evaluate_imputation",
    "extract_features",
    "finetune",
    "load_checkpoint",
    "load_config",
    "mean_impute_baseline",
    "model_from_checkpoint",
    "parse_config",
    "predict_proba",
    "reports_from_json",
    "reports_to_json",
    "reports_to_table",
    "rmse",
    "run_missingness_sweep",
    "save_checkpoint",
]
