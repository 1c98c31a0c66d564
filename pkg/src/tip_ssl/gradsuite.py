"""Finite-difference gradient suite over every differentiable op and model block.

Each case draws random shapes and values from a seed, reduces the output to a
scalar with a fixed random projection and compares the analytic gradient with
central differences at h = 1e-3. Single ops run in float32. Multi-layer blocks
run in float64: float32 rounding through several layers puts ~1e-3 noise on
the difference quotient itself, which would mask real errors rather than test them.

Key biases (``*.bk``) are left out: softmax is invariant to a per-query shift,
so their gradient is identically zero and a relative error is meaningless.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data.schema import ColumnSpec, TabularSchema
from .model import (
    ModelConfig,
    _ffn,
    build_attention_mask,
    embed_tabular,
    ensemble_probs,
    init_classifiers,
    init_params,
    interaction_forward,
    itm_logits,
    multi_head_attention,
    project_image,
    project_tabular,
    tabular_encode,
)
from .numeric import GradCheckResult, Tensor, check_gradients, ops, precision
from .numeric.tensor import current_dtype
from .vision import VisionConfig, encode_image, pool_image, project_to_sequence

TOL = 1e-3
H = 1e-3


def _t(rng, *shape, scale=1.0, name=None) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, name=name)


def _proj(out: Tensor, rng_seed: int) -> Tensor:
    R = np.random.default_rng(rng_seed).standard_normal(out.shape).astype(current_dtype())
    return ops.sum(ops.mul(out, R))


def _shape(rng, lo=2, hi=6):
    return int(rng.integers(lo, hi))


# -- elementwise and structural ops -------------------------------------------------


def case_add(rng):
    m, n = _shape(rng), _shape(rng)
    a, b = _t(rng, m, n), _t(rng, n)
    return lambda: _proj(ops.add(a, b), 1), [a, b]


def case_sub(rng):
    m, n = _shape(rng), _shape(rng)
    a, b = _t(rng, m, n), _t(rng, m, 1)
    return lambda: _proj(ops.sub(a, b), 1), [a, b]


def case_mul(rng):
    m, n = _shape(rng), _shape(rng)
    a, b = _t(rng, m, n), _t(rng, 1, n)
    return lambda: _proj(ops.mul(a, b), 1), [a, b]


def case_scale(rng):
    a = _t(rng, _shape(rng), _shape(rng))
    c = float(rng.uniform(-2, 2))
    return lambda: _proj(ops.scale(a, c), 1), [a]


def case_exp(rng):
    a = _t(rng, _shape(rng), _shape(rng), scale=0.5)
    return lambda: _proj(ops.exp(a), 1), [a]


def case_log(rng):
    a = Tensor(rng.uniform(0.5, 2.0, (_shape(rng), _shape(rng))), requires_grad=True)
    return lambda: _proj(ops.log(a), 1), [a]


def case_gelu(rng):
    a = _t(rng, _shape(rng), _shape(rng), scale=1.5)
    return lambda: _proj(ops.gelu(a), 1), [a]


def case_where(rng):
    m, n = _shape(rng), _shape(rng)
    a, b = _t(rng, m, n), _t(rng, n)
    cond = rng.random((m, n)) < 0.5
    return lambda: _proj(ops.where(cond, a, b), 1), [a, b]


def case_matmul(rng):
    m, k, n = _shape(rng, 2, 8), _shape(rng, 2, 8), _shape(rng, 2, 8)
    a, b = _t(rng, m, k), _t(rng, k, n)
    return lambda: _proj(ops.matmul(a, b), 1), [a, b]


def case_matmul_batched(rng):
    B, m, k, n = 2, _shape(rng), _shape(rng), _shape(rng)
    a, b, w = _t(rng, B, m, k), _t(rng, B, k, n), _t(rng, n, 3)
    return lambda: _proj(ops.matmul(ops.matmul(a, b), w), 1), [a, b, w]


def case_sum_mean(rng):
    a = _t(rng, _shape(rng), _shape(rng), _shape(rng))
    return lambda: ops.add(_proj(ops.sum(a, axis=1), 1), _proj(ops.mean(a, axis=(0, 2), keepdims=True), 2)), [a]


def case_reshape_transpose(rng):
    m, n, p = _shape(rng), _shape(rng), _shape(rng)
    a = _t(rng, m, n, p)
    return lambda: _proj(ops.swapaxes(ops.transpose(ops.reshape(a, (n, m, p)), (2, 0, 1)), 0, 1), 1), [a]


def case_getitem(rng):
    m, n = _shape(rng, 3, 7), _shape(rng, 3, 7)
    a = _t(rng, m, n)
    rows = rng.integers(0, m, size=5)  # repeats exercise accumulation
    return lambda: ops.add(_proj(a[1:, :2], 1), _proj(a[rows], 2)), [a]


def case_concat(rng):
    n = _shape(rng)
    a, b, c = _t(rng, 2, n), _t(rng, 3, n), _t(rng, _shape(rng), n)
    return lambda: _proj(ops.concat([a, b, c], axis=0), 1), [a, b, c]


def case_gather_rows(rng):
    table = _t(rng, 7, _shape(rng))
    idx = rng.integers(0, 7, size=(3, 4))
    return lambda: _proj(ops.gather_rows(table, idx), 1), [table]


def case_softmax(rng):
    m, n = _shape(rng), _shape(rng, 3, 7)
    a = _t(rng, m, n)
    mask = np.where(rng.random((m, n)) < 0.3, -1e9, 0.0).astype(np.float32)
    mask[:, 0] = 0.0
    return lambda: _proj(ops.softmax_rows(a, mask), 1), [a]


def case_log_softmax(rng):
    a = _t(rng, _shape(rng), _shape(rng), scale=2.0)
    return lambda: ops.add(_proj(ops.log_softmax(a, axis=1), 1), _proj(ops.log_softmax(a, axis=0), 2)), [a]


def case_layer_norm(rng):
    m, d = _shape(rng), _shape(rng, 3, 9)
    x, g, b = _t(rng, m, d), _t(rng, d), _t(rng, d)
    return lambda: _proj(ops.layer_norm(x, g, b), 1), [x, g, b]


def case_l2_normalize(rng):
    x = _t(rng, _shape(rng), _shape(rng, 3, 8))
    return lambda: _proj(ops.l2_normalize(x), 1), [x]


def case_cross_entropy(rng):
    m, k = _shape(rng, 3, 8), _shape(rng, 2, 6)
    x = _t(rng, m, k, scale=2.0)
    y = rng.integers(0, k, size=m)
    w = (rng.random(m) < 0.7).astype(np.float32)
    w[0] = 1.0
    return lambda: ops.cross_entropy_from_logits(x, y, weights=w), [x]


def case_mse(rng):
    m, n = _shape(rng), _shape(rng)
    x = _t(rng, m, n)
    y = rng.standard_normal((m, n)).astype(np.float32)
    w = (rng.random((m, n)) < 0.6).astype(np.float32)
    w[0, 0] = 1.0
    return lambda: ops.mse(x, y, weights=w), [x]


def case_im2col(rng):
    x = _t(rng, 2, 5, 5, _shape(rng, 1, 4))
    stride = int(rng.integers(1, 3))
    return lambda: _proj(ops.im2col(x, 3, stride, 1), 1), [x]


def case_mlp3(rng):
    """Composite 3-layer network with GELU and LayerNorm."""
    d = [_shape(rng, 3, 7) for _ in range(4)]
    x = Tensor(rng.standard_normal((5, d[0])))
    Ws = [_t(rng, d[i], d[i + 1], scale=0.7) for i in range(3)]
    bs = [_t(rng, d[i + 1], scale=0.1) for i in range(3)]
    g, b = _t(rng, d[2]), _t(rng, d[2])
    y = rng.integers(0, d[3], size=5)

    def f():
        h = ops.gelu(ops.add(ops.matmul(x, Ws[0]), bs[0]))
        h = ops.layer_norm(ops.add(ops.matmul(h, Ws[1]), bs[1]), g, b)
        return ops.cross_entropy_from_logits(ops.add(ops.matmul(ops.gelu(h), Ws[2]), bs[2]), y)

    return f, Ws + bs + [g, b]


# -- model blocks -------------------------------------------------------------------


def _tiny(rng, init_scale=0.3):
    schema = TabularSchema([
        ColumnSpec("c0", "categorical", 3, categories=("a", "b", "c")),
        ColumnSpec("c1", "categorical", 2, categories=("a", "b")),
        ColumnSpec("x0", "continuous"),
        ColumnSpec("x1", "continuous"),
        ColumnSpec("x2", "continuous"),
    ])
    cfg = ModelConfig(d_model=8, n_heads=2, tab_layers=1, interact_layers=1, proj_dim=4,
                      gi_hidden=8, gt_hidden=8, ffn_mult=2,
                      vision=VisionConfig(image_size=4, widths=(4, 4), strides=(1, 2)))
    params = init_params(cfg, schema, seed=int(rng.integers(1 << 31)))
    for p in params.values():  # larger weights than the default init so every path matters
        if p.data.ndim >= 1 and not p.name.endswith((".g", ".b")):
            p.data = (rng.standard_normal(p.shape) * init_scale).astype(current_dtype())
    B = 3
    values = np.column_stack([
        rng.integers(0, 3, B), rng.integers(0, 2, B), rng.standard_normal((B, 3)),
    ])
    mask = (rng.random((B, 5)) < 0.4).astype(np.uint8)
    images = Tensor(rng.random((B, 4, 4, 3)))
    return schema, cfg, params, values, mask, images


def _pick(params, *prefixes):
    names = [k for k in params if k.startswith(prefixes) and not k.endswith(".bk")]
    return [params[k] for k in names], names


def case_attention(rng):
    _, cfg, params, *_ = _tiny(rng)
    xq, xkv = _t(rng, 2, 4, 8), _t(rng, 2, 3, 8)
    mask = np.where(rng.random((2, 4, 3)) < 0.3, -1e9, 0.0).astype(np.float32)
    mask[:, :, 0] = 0.0
    ps, names = _pick(params, "tab.0.attn.")
    f = lambda: _proj(multi_head_attention(params, "tab.0.attn", xq, xkv, 2, mask), 1)
    return f, ps + [xq, xkv], names + ["xq", "xkv"]


def case_ffn(rng):
    _, cfg, params, *_ = _tiny(rng)
    x = _t(rng, 2, 3, 8)
    ps, names = _pick(params, "tab.0.ffn.")
    return lambda: _proj(_ffn(params, "tab.0.ffn", x), 1), ps + [x], names + ["x"]


def case_embed_tabular(rng):
    schema, cfg, params, values, mask, _ = _tiny(rng)
    mask[0, :] = 1  # guarantees the [MSK] token receives gradient
    ps, names = _pick(params, "tab.embed.")
    return lambda: _proj(embed_tabular(params, schema, values, mask), 1), ps, names


def case_tabular_encoder(rng):
    schema, cfg, params, values, mask, _ = _tiny(rng)
    E = _t(rng, values.shape[0], schema.n_columns + 1, 8)
    am = build_attention_mask(mask)
    ps, names = _pick(params, "tab.0.", "tab.ln_f")
    f = lambda: _proj(tabular_encode(params, cfg, E, am), 1)
    return f, ps + [E], names + ["E"]


def case_interaction(rng):
    schema, cfg, params, *_ = _tiny(rng)
    T, tok = _t(rng, 2, schema.n_columns + 1, 8), _t(rng, 2, 4, 8)
    ps, names = _pick(params, "interact.")
    f = lambda: _proj(interaction_forward(params, cfg, T, tok), 1)
    return f, ps + [T, tok], names + ["T", "image_tokens"]


def case_image_encoder(rng):
    _, cfg, params, _, _, images = _tiny(rng)
    ps, names = _pick(params, "vision.")

    def f():
        I = encode_image(params, cfg.vision, images)
        return ops.add(_proj(project_to_sequence(params, I), 1), _proj(pool_image(I), 2))

    return f, ps, names


def case_itc(rng):
    from .ssl import itc_loss
    _, cfg, params, *_ = _tiny(rng)
    pooled, tcls = _t(rng, 4, 4), _t(rng, 4, 1, 8)
    ps, names = _pick(params, "head.gi.", "head.gt.")
    f = lambda: itc_loss(project_image(params, pooled), project_tabular(params, tcls), 0.1)[0]
    return f, ps + [pooled, tcls], names + ["pooled", "T"]


def case_itm(rng):
    from .ssl import itm_loss
    _, cfg, params, *_ = _tiny(rng)
    F = _t(rng, 9, 8)
    ps, names = _pick(params, "head.itm.")

    def f():
        logits = itm_logits(params, F)
        return itm_loss(logits[:3], logits[3:6], logits[6:])

    return f, ps + [F], names + ["F_cls"]


def case_mtr(rng):
    from .ssl import mtr_loss
    schema, cfg, params, values, mask, _ = _tiny(rng)
    mask[0, :] = 1
    F = _t(rng, values.shape[0], schema.n_columns + 1, 8)
    ps, names = _pick(params, "head.mtr.")
    return lambda: mtr_loss(F, mask, values, params, schema), ps + [F], names + ["F"]


def case_ensemble(rng):
    from .harness.finetune import ensemble_nll
    _, cfg, params, *_ = _tiny(rng)
    init_classifiers(params, cfg, 3)
    for k in ("cls.image.W", "cls.tab.W", "cls.multi.W"):
        params[k].data = (rng.standard_normal(params[k].shape) * 0.5).astype(current_dtype())
    pooled, t, fc = _t(rng, 5, 4), _t(rng, 5, 8), _t(rng, 5, 8)
    y = rng.integers(0, 3, size=5)
    ps, names = _pick(params, "cls.")
    f = lambda: ensemble_nll(ensemble_probs(params, pooled, t, fc), y)
    return f, ps + [pooled, t, fc], names + ["pooled", "T_cls", "F_cls"]


COMPOSITE = frozenset({
    "mlp3", "attention", "ffn", "embed_tabular", "tabular_encoder", "interaction",
    "image_encoder", "itc", "itm", "mtr", "ensemble",
})

CASES: dict[str, Callable] = {
    name[5:]: fn for name, fn in sorted(globals().items()) if name.startswith("case_")
}


@dataclass
class SuiteResult:
    case: str
    seed: int
    checks: list[GradCheckResult]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def worst(self) -> float:
        return max((c.rel_error for c in self.checks), default=0.0)


def run_case(name: str, seed: int, tol: float = TOL, max_entries: int = 24) -> SuiteResult:
    rng = np.random.default_rng([seed, sorted(CASES).index(name)])
    with precision(np.float64 if name in COMPOSITE else np.float32):
        built = CASES[name](rng)
        f, params = built[0], built[1]
        names = built[2] if len(built) > 2 else None
        checks = check_gradients(f, params, h=H, tol=tol, max_entries=max_entries, rng=rng, names=names)
    return SuiteResult(name, seed, checks)


def run_suite(seeds=range(10), cases=None, tol: float = TOL,
              log: Callable[[SuiteResult], None] | None = None) -> tuple[list[SuiteResult], float]:
    """Run every case for every seed; returns the results and the wall time in seconds."""
    t0 = time.perf_counter()
    results = []
    for name in cases or sorted(CASES):
        for seed in seeds:
            r = run_case(name, seed, tol)
            results.append(r)
            if log is not None:
                log(r)
    return results, time.perf_counter() - t0
