"""Classification and imputation evaluation, the mean baseline and missingness sweeps."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..data import MissingScenario, PairedDataset, apply_missing_scenario, frozen_mask
from ..model import TIPModel
from .config import ConfigError
from .finetune import EVAL_BATCH, predict_proba
from .metrics import accuracy, auc, rmse

METRICS = ("accuracy", "auc", "rmse")


@dataclass(frozen=True)
class EvalReport:
    task: str
    metric: str
    value: float | None  # None marks a skipped cell (nothing to score)
    scenario: str = "none"
    sigma: float = 0.0
    seed: int = 0
    config_digest: str = ""

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}")
        if self.value is not None and not math.isfinite(self.value):
            raise ValueError(f"non-finite {self.metric} value {self.value}")

    @property
    def empty(self) -> bool:
        return self.value is None

    def to_dict(self) -> dict:
        return asdict(self)


def reports_to_json(reports: list[EvalReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"


def reports_from_json(text: str) -> list[EvalReport]:
    return [EvalReport(**d) for d in json.loads(text)]


def reports_to_table(reports: list[EvalReport]) -> str:
    header = ["task", "scenario", "sigma", "seed", "metric", "value"]
    rows = [[r.task, r.scenario, f"{r.sigma:g}", str(r.seed), r.metric,
             "(empty)" if r.empty else f"{r.value:.4f}"] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(header)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows]
    return "\n".join(lines) + "\n"


# -- classification ---------------------------------------------------------------


def evaluate_classification(model: TIPModel, data: PairedDataset, scenario: MissingScenario | None = None,
                            seed: int = 0, metric: str | None = None, config_digest: str = "",
                            task: str = "classification") -> EvalReport:
    """Score the ensemble on ``data`` after applying ``scenario`` to its tabular part."""
    K = model.n_classes
    if K is None:
        raise ConfigError("model has no classifiers; fine-tune first")
    if metric is None:
        metric = "auc" if K == 2 else "accuracy"
    if metric == "auc" and K != 2:
        raise ConfigError("AUC is only defined here for binary tasks")
    if metric not in ("accuracy", "auc"):
        raise ConfigError(f"classification metric must be accuracy or auc, not {metric!r}")
    values = data.values
    mask = np.zeros(values.shape, np.uint8)
    if scenario is not None:
        values, mask = apply_missing_scenario(values, scenario, np.random.default_rng(seed))
    probs = predict_proba(model, data.images, values, mask)
    value = auc(probs[:, 1], data.labels) if metric == "auc" else accuracy(probs, data.labels)
    return EvalReport(task, metric, value,
                      scenario.kind if scenario is not None else "none",
                      scenario.sigma if scenario is not None else 0.0, seed, config_digest)


def run_missingness_sweep(model: TIPModel, data: PairedDataset, kinds, sigmas, seeds,
                          importance: list[int] | None = None, config_digest: str = "") -> list[EvalReport]:
    """Evaluate every (kind, σ, seed) combination; rows come out in that nesting order."""
    reports = []
    for kind in kinds:
        for sigma in sigmas:
            for seed in seeds:
                sc = MissingScenario(kind, float(sigma), tuple(importance) if importance is not None else None)
                reports.append(evaluate_classification(model, data, sc, seed=seed,
                                                       config_digest=config_digest, task="sweep"))
    return reports


# -- imputation -------------------------------------------------------------------


def imputation_mask(data: PairedDataset, sigma: float, seed: int, mask_categorical: bool = True) -> np.ndarray:
    """Frozen per ``(dataset shape, σ, seed)`` so the model and baselines see the same cells."""
    extra = range(data.schema.n_categorical) if mask_categorical else ()
    return frozen_mask(data.values.shape, sigma, seed, extra_columns=list(extra))


def _continuous_rmse(pred: np.ndarray, data: PairedDataset, mask: np.ndarray) -> float | None:
    na = data.schema.n_categorical
    return rmse(pred, data.values[:, na:], mask[:, na:])


def reconstruct_continuous(model: TIPModel, data: PairedDataset, mask: np.ndarray,
                           batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Continuous MTR predictions for every row, computed in batches."""
    out = []
    values = np.where(mask.astype(bool), 0.0, data.values).astype(np.float32)
    for s in range(0, len(data), batch_size):
        sl = slice(s, s + batch_size)
        _, cont = model.reconstruct(data.images[sl], values[sl], mask[sl])
        out.append(cont)
    return np.concatenate(out)


def evaluate_imputation(model: TIPModel, data: PairedDataset, sigmas, mask_categorical: bool = True,
                        seed: int = 0, config_digest: str = "") -> list[EvalReport]:
    """RMSE of the reconstructed continuous cells, one report per σ.

    A σ that masks no continuous cell yields a report whose value is ``None``.
    """
    reports = []
    for sigma in sigmas:
        mask = imputation_mask(data, sigma, seed, mask_categorical)
        na = data.schema.n_categorical
        value = None
        if mask[:, na:].any():
            value = _continuous_rmse(reconstruct_continuous(model, data, mask), data, mask)
        reports.append(EvalReport("imputation", "rmse", value, "RVM", float(sigma), seed, config_digest))
    return reports


def mean_impute_baseline(data: PairedDataset, sigma: float, seed: int = 0, mask_categorical: bool = True,
                         config_digest: str = "") -> EvalReport:
    """Predict the training mean (0 on z-scored columns) for every masked continuous cell."""
    mask = imputation_mask(data, sigma, seed, mask_categorical)
    pred = np.zeros((len(data), data.schema.n_continuous), np.float64)
    value = _continuous_rmse(pred, data, mask)
    return EvalReport("imputation_mean", "rmse", value, "RVM", float(sigma), seed, config_digest)
