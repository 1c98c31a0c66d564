"""Ensemble fine-tuning: linear probing on frozen features or full fine-tuning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data import PairedDataset, batch_iter
from ..model import TIPModel, ensemble_probs, init_classifiers
from ..numeric import OptimizerState, Tape, Tensor, adam_step, backward, clip_grad_norm, ops
from .config import ConfigError, FinetuneConfig
from .metrics import accuracy, auc

EVAL_BATCH = 256
# the projection, matching and reconstruction heads play no part in classification
FULL_PREFIXES = ("vision.", "tab.", "interact.", "cls.")


@dataclass
class FinetuneResult:
    model: TIPModel
    metric: str
    best_value: float
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def extract_features(model: TIPModel, images, values, mask=None,
                     batch_size: int = EVAL_BATCH) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(pooled image, tabular [CLS], multimodal [CLS])`` arrays, computed batch by batch."""
    if mask is None:
        mask = np.zeros(values.shape, np.uint8)
    out = [], [], []
    for s in range(0, values.shape[0], batch_size):
        f = model.features(images[s : s + batch_size], values[s : s + batch_size], mask[s : s + batch_size])
        out[0].append(f.pooled.data)
        out[1].append(f.T.data[:, 0, :])
        out[2].append(f.F.data[:, 0, :])
    return tuple(np.concatenate(o) for o in out)


def ensemble_nll(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy of the averaged ensemble probabilities."""
    picked = probs[np.arange(labels.shape[0]), labels]
    return ops.scale(ops.mean(ops.log(picked)), -1.0)


def probs_from_features(model: TIPModel, feats) -> np.ndarray:
    pooled, t_cls, f_cls = (Tensor(x) for x in feats)
    return ensemble_probs(model.params, pooled, t_cls, f_cls).data


def predict_proba(model: TIPModel, images, values, mask=None, batch_size: int = EVAL_BATCH) -> np.ndarray:
    return probs_from_features(model, extract_features(model, images, values, mask, batch_size))


def score(probs: np.ndarray, labels: np.ndarray) -> tuple[str, float]:
    """Validation metric used for early stopping: AUC for two classes, else accuracy."""
    if probs.shape[1] == 2:
        return "auc", auc(probs[:, 1], labels)
    return "accuracy", accuracy(probs, labels)


def finetune(model: TIPModel, train: PairedDataset, val: PairedDataset, cfg: FinetuneConfig,
             n_classes: int | None = None, log: Callable[[dict], None] | None = None) -> FinetuneResult:
    """Attach fresh classifiers and train them (and, in ``full`` mode, the backbone).

    Training stops once the validation metric has not improved by more than
    ``cfg.min_delta`` for ``cfg.patience`` epochs; the best parameters are restored.
    """
    if train.labels is None or val.labels is None:
        raise ConfigError("fine-tuning needs labelled train and validation data")
    labels = np.asarray(train.labels, dtype=np.int64)
    K = int(n_classes if n_classes is not None else max(labels.max(), val.labels.max()) + 1)
    if K < 2:
        raise ConfigError("fine-tuning needs at least two classes")

    params = model.params
    params.rng = np.random.default_rng(cfg.seed)
    init_classifiers(params, model.cfg, K)
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState(lr=cfg.lr, weight_decay=0.0)  # fine-tuning runs without weight decay
    full = cfg.mode == "full"
    if full:
        trainable = {k: v for k, v in params.items() if k.startswith(FULL_PREFIXES)}
    else:
        trainable = {k: v for k, v in params.items() if k.startswith("cls.")}
        cached = extract_features(model, train.images, train.values)
        val_cached = extract_features(model, val.images, val.values)
    best_value, best_epoch, best_state, bad = -np.inf, -1, None, 0
    history = []
    metric = "auc" if K == 2 else "accuracy"
    n = len(train)
    for epoch in range(cfg.epochs):
        losses = []
        for idx in batch_iter(n, min(cfg.batch_size, n), shuffle=True, rng=rng):
            with Tape():
                if full:
                    mask = np.zeros((idx.size, train.values.shape[1]), np.uint8)
                    f = model.features(train.images[idx], train.values[idx], mask)
                    probs = ensemble_probs(params, f.pooled, f.T[:, 0, :], f.F[:, 0, :])
                else:
                    feats = [Tensor(c[idx]) for c in cached]
                    probs = ensemble_probs(params, *feats)
                loss = ensemble_nll(probs, labels[idx])
            backward(loss)
            if full:
                clip_grad_norm(trainable, 1.0)
            adam_step(trainable, opt)
            losses.append(loss.item())

        val_feats = extract_features(model, val.images, val.values) if full else val_cached
        metric, value = score(probs_from_features(model, val_feats), val.labels)
        rec = {"epoch": epoch, "loss": float(np.mean(losses)), metric: value}
        history.append(rec)
        if log is not None:
            log(rec)
        if value > best_value + cfg.min_delta:
            best_value, best_epoch, bad = value, epoch, 0
            best_state = {k: v.data.copy() for k, v in trainable.items()}
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    if best_state is not None:
        for k, arr in best_state.items():
            params[k].data = arr
    return FinetuneResult(model, metric, float(best_value), best_epoch, history)
