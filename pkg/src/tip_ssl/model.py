"""The TIP network: missing-aware tabular encoder, cross-modal interaction and heads.

Shapes: tabular sequences are ``[B, N+1, D]`` with the [CLS] slot at row 0;
image token sequences are ``[B, S, D]`` with ``S = H'·W'``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data.schema import TabularSchema
from .numeric import LARGE, Tensor, ops
from .params import ParamStore
from .vision import VisionConfig, encode_image, init_vision, pool_image, project_to_sequence


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    n_heads: int = 8
    tab_layers: int = 4
    interact_layers: int = 4
    proj_dim: int = 32
    gi_hidden: int = 256
    gt_hidden: int = 64
    ffn_mult: int = 4
    vision: VisionConfig = field(default_factory=VisionConfig)

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelConfigError("d_model must be divisible by n_heads")
        if self.tab_layers < 1 or self.interact_layers < 1:
            raise ModelConfigError("need at least one transformer layer per stack")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def as_dict(self) -> dict:
        return asdict(self)


# -- initialisation -----------------------------------------------------------


def _init_ln(store: ParamStore, name: str, d: int) -> None:
    store.ones(f"{name}.g", (d,))
    store.zeros(f"{name}.b", (d,))


def _init_attn(store: ParamStore, name: str, d: int) -> None:
    for proj in ("q", "k", "v", "o"):
        store.weight(f"{name}.W{proj}", (d, d))
        store.zeros(f"{name}.b{proj}", (d,))


def _init_ffn(store: ParamStore, name: str, d: int, mult: int) -> None:
    store.weight(f"{name}.W1", (d, mult * d))
    store.zeros(f"{name}.b1", (mult * d,))
    store.weight(f"{name}.W2", (mult * d, d))
    store.zeros(f"{name}.b2", (d,))


def _init_mlp(store: ParamStore, name: str, d_in: int, hidden: int, d_out: int) -> None:
    store.weight(f"{name}.W1", (d_in, hidden))
    store.zeros(f"{name}.b1", (hidden,))
    store.weight(f"{name}.W2", (hidden, d_out))
    store.zeros(f"{name}.b2", (d_out,))


def init_params(cfg: ModelConfig, schema: TabularSchema, seed: int = 0) -> ParamStore:
    """Allocate every pre-training parameter slot (classifiers come with fine-tuning)."""
    D, N = cfg.d_model, schema.n_columns
    store = ParamStore(seed)
    init_vision(store, cfg.vision, D)

    store.weight("tab.embed.A", (max(schema.total_categories, 1), D))
    store.weight("tab.embed.w_cont", (D,))
    store.zeros("tab.embed.b_cont", (D,))
    store.weight("tab.embed.msk", (D,))
    store.weight("tab.embed.cls", (D,))
    store.weight("tab.embed.U", (N + 1, D))
    for l in range(cfg.tab_layers):
        _init_ln(store, f"tab.{l}.ln1", D)
        _init_attn(store, f"tab.{l}.attn", D)
        _init_ln(store, f"tab.{l}.ln2", D)
        _init_ffn(store, f"tab.{l}.ffn", D, cfg.ffn_mult)
    _init_ln(store, "tab.ln_f", D)

    for l in range(cfg.interact_layers):
        _init_ln(store, f"interact.{l}.ln1", D)
        _init_attn(store, f"interact.{l}.self", D)
        _init_ln(store, f"interact.{l}.ln2", D)
        _init_attn(store, f"interact.{l}.cross", D)
        _init_ln(store, f"interact.{l}.ln3", D)
        _init_ffn(store, f"interact.{l}.ffn", D, cfg.ffn_mult)
    _init_ln(store, "interact.ln_f", D)

    _init_mlp(store, "head.gi", cfg.vision.out_channels, cfg.gi_hidden, cfg.proj_dim)
    _init_mlp(store, "head.gt", D, cfg.gt_hidden, cfg.proj_dim)
    store.weight("head.itm.W", (D, 2))
    store.zeros("head.itm.b", (2,))
    store.weight("head.mtr.W1", (max(schema.total_categories, 1), D))
    store.zeros("head.mtr.b1", (max(schema.total_categories, 1),))
    store.weight("head.mtr.W2", (1, D))
    store.zeros("head.mtr.b2", (1,))
    return store


def init_classifiers(store: ParamStore, cfg: ModelConfig, n_classes: int) -> None:
    """Attach the three linear classifiers used by ensemble fine-tuning."""
    if n_classes < 2:
        raise ModelConfigError("classification needs at least two classes")
    dims = {"image": cfg.vision.out_channels, "tab": cfg.d_model, "multi": cfg.d_model}
    for name, d in dims.items():
        if f"cls.{name}.W" in store:
            del store[f"cls.{name}.W"], store[f"cls.{name}.b"]
        store.weight(f"cls.{name}.W", (d, n_classes))
        store.zeros(f"cls.{name}.b", (n_classes,))


PARAM_GROUPS = {
    "image_encoder": "vision.",
    "tabular_encoder": "tab.",
    "interaction": "interact.",
    "g_image": "head.gi.",
    "g_tabular": "head.gt.",
    "itm_head": "head.itm.",
    "mtr_head": "head.mtr.",
}


# -- building blocks ------------------------------------------------------------


def _linear(x, W, b) -> Tensor:
    return ops.add(ops.matmul(x, W), b)


def _ln(params, name: str, x) -> Tensor:
    return ops.layer_norm(x, params[f"{name}.g"], params[f"{name}.b"])


def _split_heads(x: Tensor, h: int) -> Tensor:
    B, L, D = x.shape
    return ops.transpose(ops.reshape(x, (B, L, h, D // h)), (0, 2, 1, 3))


def multi_head_attention(params, name: str, xq: Tensor, xkv: Tensor, n_heads: int,
                         additive_mask: np.ndarray | None = None) -> Tensor:
    """``softmax(Q K^T / sqrt(d_k)) V`` per head, heads concatenated then mixed by ``W_o``.

    ``additive_mask`` is ``[B, Lq, Lk]`` (0 allowed, -LARGE blocked).
    """
    B, Lq, D = xq.shape
    dk = D // n_heads
    q = _split_heads(_linear(xq, params[f"{name}.Wq"], params[f"{name}.bq"]), n_heads)
    k = _split_heads(_linear(xkv, params[f"{name}.Wk"], params[f"{name}.bk"]), n_heads)
    v = _split_heads(_linear(xkv, params[f"{name}.Wv"], params[f"{name}.bv"]), n_heads)
    scores = ops.scale(ops.matmul(q, ops.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dk))
    mask = None if additive_mask is None else additive_mask[:, None, :, :]
    attn = ops.softmax_rows(scores, mask)
    ctx = ops.reshape(ops.transpose(ops.matmul(attn, v), (0, 2, 1, 3)), (B, Lq, D))
    return _linear(ctx, params[f"{name}.Wo"], params[f"{name}.bo"])


def _ffn(params, name: str, x) -> Tensor:
    hidden = ops.gelu(_linear(x, params[f"{name}.W1"], params[f"{name}.b1"]))
    return _linear(hidden, params[f"{name}.W2"], params[f"{name}.b2"])


# -- tabular path -----------------------------------------------------------------


def embed_tabular(params, schema: TabularSchema, values: np.ndarray, mask: np.ndarray) -> Tensor:
    """Token sequence ``E = S + U`` of shape ``[B, N+1, D]``.

    Masked cells are never read: they are zeroed before lookup and their token
    is replaced by the [MSK] embedding.
    """
    values = np.asarray(values, dtype=np.float32)
    mask = np.asarray(mask).astype(bool)
    B, N = values.shape
    if N != schema.n_columns:
        raise ModelConfigError(f"expected {schema.n_columns} columns, got {N}")
    D = params["tab.embed.U"].shape[1]
    na = schema.n_categorical
    clean = np.where(mask, 0.0, values).astype(np.float32)

    parts = []
    if na:
        codes = clean[:, :na]
        if np.any(codes != np.round(codes)) or np.any(codes < 0) or np.any(codes >= np.asarray(schema.cardinalities)):
            raise IndexError("categorical code outside [0, cardinality)")
        idx = codes.astype(np.int64) + schema.offsets[None, :]
        parts.append(ops.gather_rows(params["tab.embed.A"], idx))
    if N > na:
        cont = clean[:, na:, None]
        parts.append(ops.add(ops.mul(cont, params["tab.embed.w_cont"]), params["tab.embed.b_cont"]))
    feats = parts[0] if len(parts) == 1 else ops.concat(parts, axis=1)
    feats = ops.where(mask[:, :, None], params["tab.embed.msk"], feats)
    cls = ops.add(np.zeros((B, 1, D), dtype=feats.data.dtype), params["tab.embed.cls"])
    seq = ops.concat([cls, feats], axis=1)
    return ops.add(seq, params["tab.embed.U"])


def build_attention_mask(mask: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Additive ``[B, N+1, N+1]`` mask: query q sees key k iff q == k or k is present."""
    mask = np.asarray(mask).astype(bool)
    B, N = mask.shape
    missing = np.concatenate([np.zeros((B, 1), dtype=bool), mask], axis=1)  # [CLS] never missing
    blocked = np.broadcast_to(missing[:, None, :], (B, N + 1, N + 1)).copy()
    diag = np.arange(N + 1)
    blocked[:, diag, diag] = False
    return np.where(blocked, -LARGE, 0.0).astype(dtype)


def tabular_encode(params, cfg: ModelConfig, E: Tensor, additive_mask: np.ndarray) -> Tensor:
    """Pre-norm transformer stack with masked self-attention; returns T."""
    h = E
    for l in range(cfg.tab_layers):
        p = f"tab.{l}"
        x = _ln(params, f"{p}.ln1", h)
        h = ops.add(h, multi_head_attention(params, f"{p}.attn", x, x, cfg.n_heads, additive_mask))
        h = ops.add(h, _ffn(params, f"{p}.ffn", _ln(params, f"{p}.ln2", h)))
    return _ln(params, "tab.ln_f", h)


def encode_tabular(params, cfg: ModelConfig, schema: TabularSchema, values, mask) -> Tensor:
    E = embed_tabular(params, schema, values, mask)
    return tabular_encode(params, cfg, E, build_attention_mask(mask, E.data.dtype))


# -- multimodal interaction ------------------------------------------------------


def cross_attention(params, name: str, F_prev: Tensor, image_tokens: Tensor, n_heads: int) -> Tensor:
    """Tabular tokens query image tokens (Q from ``F_prev``, K/V from the image)."""
    return multi_head_attention(params, name, F_prev, image_tokens, n_heads)


def interaction_forward(params, cfg: ModelConfig, T: Tensor, image_tokens: Tensor) -> Tensor:
    """``F_0 = T``; each layer applies self-attention, cross-attention and an MLP."""
    F = T
    for l in range(cfg.interact_layers):
        p = f"interact.{l}"
        x = _ln(params, f"{p}.ln1", F)
        F = ops.add(F, multi_head_attention(params, f"{p}.self", x, x, cfg.n_heads))
        F = ops.add(F, cross_attention(params, f"{p}.cross", _ln(params, f"{p}.ln2", F), image_tokens, cfg.n_heads))
        F = ops.add(F, _ffn(params, f"{p}.ffn", _ln(params, f"{p}.ln3", F)))
    return _ln(params, "interact.ln_f", F)


# -- heads ----------------------------------------------------------------------


def _mlp(params, name: str, x) -> Tensor:
    hidden = ops.gelu(_linear(x, params[f"{name}.W1"], params[f"{name}.b1"]))
    return _linear(hidden, params[f"{name}.W2"], params[f"{name}.b2"])


def project_image(params, pooled: Tensor) -> Tensor:
    return ops.l2_normalize(_mlp(params, "head.gi", pooled))


def project_tabular(params, T: Tensor) -> Tensor:
    return ops.l2_normalize(_mlp(params, "head.gt", T[:, 0, :]))


def itm_logits(params, F_cls: Tensor) -> Tensor:
    return _linear(F_cls, params["head.itm.W"], params["head.itm.b"])


def category_block_mask(schema: TabularSchema, dtype=np.float32) -> np.ndarray:
    """``[N_a, N̄_a]`` additive mask keeping only each column's own logit block."""
    na, total = schema.n_categorical, max(schema.total_categories, 1)
    m = np.full((na, total), -LARGE, dtype=dtype)
    for j, (off, card) in enumerate(zip(schema.offsets, schema.cardinalities)):
        m[j, off : off + card] = 0.0
    return m


def mtr_heads(params, schema: TabularSchema, F_masked: Tensor) -> tuple[Tensor | None, Tensor | None]:
    """Raw MTR outputs on feature rows 1..N.

    Returns ``(cat_logits [B, N_a, N̄_a], cont_pred [B, N - N_a])``; the
    categorical logits are full-width, see :func:`mtr_predict` for the
    per-column slices.
    """
    na, N = schema.n_categorical, schema.n_columns
    B = F_masked.shape[0]
    cat = cont = None
    if na:
        f_cat = F_masked[:, 1 : na + 1, :]
        cat = ops.add(ops.matmul(f_cat, ops.transpose(params["head.mtr.W1"])), params["head.mtr.b1"])
    if N > na:
        f_con = F_masked[:, na + 1 :, :]
        cont = ops.add(ops.matmul(f_con, ops.transpose(params["head.mtr.W2"])), params["head.mtr.b2"])
        cont = ops.reshape(cont, (B, N - na))
    return cat, cont


def mtr_predict(params, schema: TabularSchema, F_masked: Tensor) -> tuple[list[np.ndarray], np.ndarray]:
    """Per-column predictions: a ``[B, cardinality]`` logit slice for each
    categorical column and a ``[B, N - N_a]`` matrix of continuous values."""
    cat, cont = mtr_heads(params, schema, F_masked)
    slices = []
    if cat is not None:
        for j, (off, card) in enumerate(zip(schema.offsets, schema.cardinalities)):
            slices.append(cat.data[:, j, off : off + card])
    cont_np = cont.data if cont is not None else np.zeros((F_masked.shape[0], 0), np.float32)
    return slices, cont_np


def classifier_logits(params, name: str, x: Tensor) -> Tensor:
    return _linear(x, params[f"cls.{name}.W"], params[f"cls.{name}.b"])


def ensemble_probs(params, pooled: Tensor, T_cls: Tensor, F_cls: Tensor) -> Tensor:
    """Mean of the image, tabular and multimodal classifiers' softmax outputs."""
    probs = [
        ops.softmax_rows(classifier_logits(params, "image", pooled)),
        ops.softmax_rows(classifier_logits(params, "tab", T_cls)),
        ops.softmax_rows(classifier_logits(params, "multi", F_cls)),
    ]
    return ops.scale(ops.add(ops.add(probs[0], probs[1]), probs[2]), 1.0 / 3.0)


# -- model facade ---------------------------------------------------------------


@dataclass
class Features:
    I: Tensor
    image_tokens: Tensor
    pooled: Tensor
    T: Tensor
    F: Tensor


class TIPModel:
    """Parameters plus the configuration and schema needed to run them."""

    def __init__(self, cfg: ModelConfig, schema: TabularSchema, seed: int = 0,
                 params: ParamStore | None = None):
        self.cfg = cfg
        self.schema = schema
        self.params = params if params is not None else init_params(cfg, schema, seed)

    @property
    def n_classes(self) -> int | None:
        W = self.params.get("cls.multi.W")
        return None if W is None else W.shape[1]

    def image_features(self, images) -> tuple[Tensor, Tensor, Tensor]:
        I = encode_image(self.params, self.cfg.vision, images)
        return I, project_to_sequence(self.params, I), pool_image(I)

    def tabular(self, values, mask) -> Tensor:
        return encode_tabular(self.params, self.cfg, self.schema, values, mask)

    def interact(self, T: Tensor, image_tokens: Tensor) -> Tensor:
        return interaction_forward(self.params, self.cfg, T, image_tokens)

    def features(self, images, values, mask) -> Features:
        I, tokens, pooled = self.image_features(images)
        T = self.tabular(values, mask)
        return Features(I, tokens, pooled, T, self.interact(T, tokens))

    def predict_proba(self, images, values, mask) -> Tensor:
        if self.n_classes is None:
            raise ModelConfigError("model has no classifiers; fine-tune first")
        f = self.features(images, values, mask)
        return ensemble_probs(self.params, f.pooled, f.T[:, 0, :], f.F[:, 0, :])

    def reconstruct(self, images, values, mask) -> tuple[list[np.ndarray], np.ndarray]:
        f = self.features(images, values, mask)
        return mtr_predict(self.params, self.schema, f.F)


def ensemble_classify(model: TIPModel, images, values, mask) -> np.ndarray:
    return model.predict_proba(images, values, mask).data
