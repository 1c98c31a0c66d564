"""Pre-training objectives (ITC, ITM with hard negatives, MTR) and the training loop."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import PairedDataset, batch_iter, corrupt_tabular, random_msk
from .data.schema import TabularSchema
from .model import (
    TIPModel,
    category_block_mask,
    itm_logits,
    mtr_heads,
    project_image,
    project_tabular,
)
from .numeric import OptimizerState, Tape, Tensor, adam_step, backward, clip_grad_norm, lr_at, ops
from .vision import augment_image


class PretrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    batch_size: int = 64
    temperature: float = 0.1
    mask_ratio: float = 0.5
    corruption_rate: float = 0.3
    lr: float = 1e-3
    warmup_epochs: int = 2
    weight_decay: float = 1.5e-6
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise PretrainConfigError("batch size must be >= 2")
        if not self.temperature > 0:
            raise PretrainConfigError("temperature must be positive")
        if not 0.0 <= self.mask_ratio <= 1.0:
            raise PretrainConfigError("mask ratio must lie in [0, 1]")
        if self.epochs < 0:
            raise PretrainConfigError("epochs must be non-negative")


@dataclass
class StepOutputs:
    l_itc: float
    l_itm: float
    l_mtr: float
    l_total: float
    similarity: np.ndarray
    lr: float = 0.0


# -- objectives -----------------------------------------------------------------


def itc_loss(z_img: Tensor, z_tab: Tensor, temperature: float) -> tuple[Tensor, np.ndarray]:
    """Symmetric contrastive loss over in-batch pairs.

    ``sim[j, k] = z_img_j · z_tab_k / τ``; the loss averages the image-to-tabular
    (row) and tabular-to-image (column) log-likelihoods of the matched pair.
    Returns the loss and the similarity matrix (a plain array).
    """
    zi, zt = z_img.data, z_tab.data
    for name, z in (("image", zi), ("tabular", zt)):
        norms = np.linalg.norm(z.astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-4), f"{name} projections must be unit-norm"
    B = zi.shape[0]
    sim = ops.scale(ops.matmul(z_img, ops.transpose(z_tab)), 1.0 / temperature)
    diag = (np.arange(B), np.arange(B))
    s_i2t = ops.log_softmax(sim, axis=1)[diag]
    s_t2i = ops.log_softmax(sim, axis=0)[diag]
    loss = ops.scale(ops.mean(ops.add(s_i2t, s_t2i)), -0.5)
    return loss, sim.data.copy()


def _negative_weights(sim: np.ndarray) -> np.ndarray:
    s = sim.astype(np.float64)
    s = s - s.max(axis=1, keepdims=True)
    w = np.exp(s)
    np.fill_diagonal(w, 0.0)
    return w / w.sum(axis=1, keepdims=True)


def hard_neg_sample(sim: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw one hard negative per row (``p``) and per column (``q``).

    Row ``j`` picks a tabular partner with probability ∝ softmax(sim[j]) with
    the matched entry removed; column ``j`` picks an image partner likewise.
    """
    sim = np.asarray(sim)
    B = sim.shape[0]
    if B < 2:
        raise PretrainConfigError("hard negative mining needs at least two samples")
    w_i2t = _negative_weights(sim)
    w_t2i = _negative_weights(sim.T)
    u = rng.random((2, B, 1))
    p = (np.cumsum(w_i2t, axis=1) < u[0]).sum(axis=1)
    q = (np.cumsum(w_t2i, axis=1) < u[1]).sum(axis=1)
    # cumsum rounding can leave the last bucket reachable past B-1 or on self
    p = _repair(np.minimum(p, B - 1), w_i2t)
    q = _repair(np.minimum(q, B - 1), w_t2i)
    return p, q


def _repair(idx: np.ndarray, w: np.ndarray) -> np.ndarray:
    rows = np.arange(idx.size)
    bad = w[rows, idx] == 0.0
    if bad.any():
        idx = idx.copy()
        idx[bad] = np.argmax(w[bad], axis=1)
    return idx


def itm_loss(logits_pos: Tensor, logits_neg1: Tensor, logits_neg2: Tensor) -> Tensor:
    """Matching cross-entropy over B positives and 2B negatives (label 1 = matched)."""
    B = logits_pos.shape[0]
    logits = ops.concat([logits_pos, logits_neg1, logits_neg2], axis=0)
    targets = np.concatenate([np.ones(B, np.int64), np.zeros(2 * B, np.int64)])
    return ops.cross_entropy_from_logits(logits, targets)


def mtr_loss_from_outputs(cat_logits: Tensor | None, cont_pred: Tensor | None, mask: np.ndarray,
                          targets: np.ndarray, schema: TabularSchema) -> tuple[Tensor, Tensor]:
    """``(L_cat, L_con)`` over masked cells only; a term with no masked cells is 0."""
    mask = np.asarray(mask).astype(bool)
    na = schema.n_categorical
    zero = Tensor(np.zeros((), dtype=np.float32))
    l_cat = l_con = zero
    if cat_logits is not None and mask[:, :na].any():
        B = mask.shape[0]
        block = category_block_mask(schema, cat_logits.data.dtype)
        logits = ops.add(cat_logits, block)  # other columns' classes get zero probability
        total = logits.shape[-1]
        codes = np.where(mask[:, :na], targets[:, :na], 0).astype(np.int64)
        flat_t = (codes + schema.offsets[None, :]).reshape(-1)
        l_cat = ops.cross_entropy_from_logits(
            ops.reshape(logits, (B * na, total)), flat_t, weights=mask[:, :na].reshape(-1))
    if cont_pred is not None and mask[:, na:].any():
        tgt = np.where(mask[:, na:], targets[:, na:], 0.0).astype(cont_pred.data.dtype)
        l_con = ops.mse(cont_pred, tgt, weights=mask[:, na:])
    return l_cat, l_con


def mtr_loss(F_masked: Tensor, mask: np.ndarray, targets: np.ndarray, params, schema: TabularSchema) -> Tensor:
    """``L_cat + L_con`` from the masked multimodal representation."""
    cat, cont = mtr_heads(params, schema, F_masked)
    l_cat, l_con = mtr_loss_from_outputs(cat, cont, mask, targets, schema)
    return ops.add(l_cat, l_con)


# -- training -------------------------------------------------------------------


def pretrain_losses(model: TIPModel, images: np.ndarray, values: np.ndarray, cfg: PretrainConfig,
                    rng: np.random.Generator, pool: np.ndarray | None = None,
                    augment: bool = True) -> tuple[Tensor, Tensor, Tensor, Tensor, np.ndarray]:
    """Forward pass of one pre-training minibatch.

    Returns ``(L, L_itc, L_itm, L_mtr, similarity)``.
    """
    params, schema = model.params, model.schema
    B = values.shape[0]
    masked, M = random_msk(values, cfg.mask_ratio, rng)
    imgs = augment_image(images, rng) if augment else images
    corrupted = corrupt_tabular(values, cfg.corruption_rate, rng, pool=pool)

    I, tokens, pooled = model.image_features(imgs)
    no_mask = np.zeros_like(M)
    both = model.tabular(np.concatenate([corrupted, masked]), np.concatenate([no_mask, M]))
    T, T_masked = both[:B], both[B:]

    z_img = project_image(params, pooled)
    z_tab = project_tabular(params, T)
    l_itc, sim = itc_loss(z_img, z_tab, cfg.temperature)
    p, q = hard_neg_sample(sim, rng)

    # F, F~, F' = psi(I_j, T_p), F'' = psi(I_q, T_j) in one batched pass
    tab_in = ops.concat([T, T_masked, T[p], T], axis=0)
    img_in = ops.concat([tokens, tokens, tokens, tokens[q]], axis=0)
    F_all = model.interact(tab_in, img_in)
    F_masked = F_all[B : 2 * B]
    cls = F_all[:, 0, :]
    logits = itm_logits(params, cls)
    l_itm = itm_loss(logits[:B], logits[2 * B : 3 * B], logits[3 * B :])
    l_mtr = mtr_loss(F_masked, M, values, params, schema)

    total = ops.scale(ops.add(ops.add(l_itc, l_itm), l_mtr), 1.0 / 3.0)
    return total, l_itc, l_itm, l_mtr, sim


def pretrain_step(model: TIPModel, images: np.ndarray, values: np.ndarray, cfg: PretrainConfig,
                  opt: OptimizerState, rng: np.random.Generator, lr: float | None = None,
                  pool: np.ndarray | None = None) -> StepOutputs:
    """One forward/backward/Adam update over all pre-training parameters."""
    if values.shape[0] < 2:
        raise PretrainConfigError("pre-training batch needs at least two samples")
    params = model.params
    with Tape():
        total, l_itc, l_itm, l_mtr, sim = pretrain_losses(model, images, values, cfg, rng, pool)
    backward(total)
    trainable = {k: v for k, v in params.items() if not k.startswith("cls.")}
    if cfg.grad_clip:
        clip_grad_norm(trainable, cfg.grad_clip)
    lr = opt.lr if lr is None else lr
    adam_step(trainable, opt, lr)
    return StepOutputs(l_itc.item(), l_itm.item(), l_mtr.item(), total.item(), sim, lr)


@dataclass
class PretrainResult:
    model: TIPModel
    optimizer: OptimizerState
    trace: list[dict] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def pretrain_loop(data: PairedDataset, model: TIPModel, cfg: PretrainConfig,
                  log: Callable[[dict], None] | None = None) -> PretrainResult:
    """Run ``cfg.epochs`` epochs of pre-training over ``data`` (already the training split).

    Every step appends a record ``{epoch, step, l_itc, l_itm, l_mtr, l_total, lr}``
    to the trace; ``log`` receives the same records as they are produced.
    """
    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    n = len(data)
    per_epoch = n // cfg.batch_size
    if per_epoch == 0 and cfg.epochs:
        raise PretrainConfigError("dataset smaller than one batch")
    total_steps = per_epoch * cfg.epochs
    warmup = min(per_epoch * cfg.warmup_epochs, max(total_steps - 1, 0))
    result = PretrainResult(model, opt)
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for idx in batch_iter(n, cfg.batch_size, shuffle=True, rng=rng, pretrain=True):
            lr = lr_at(step, total_steps, warmup, cfg.lr)
            out = pretrain_step(model, data.images[idx], data.values[idx], cfg, opt, rng, lr=lr,
                                pool=data.values)
            rec = {"epoch": epoch, "step": step, "l_itc": out.l_itc, "l_itm": out.l_itm,
                   "l_mtr": out.l_mtr, "l_total": out.l_total, "lr": lr}
            result.trace.append(rec)
            if log is not None:
                log(rec)
            losses.append(out.l_total)
            step += 1
        result.epoch_losses.append(float(np.mean(losses)))
    return result


def trace_to_jsonl(trace: list[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in trace)

