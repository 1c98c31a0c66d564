import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tip_ssl.gradsuite import run_case
from tip_ssl.model import (
    ModelConfig,
    ModelConfigError,
    TIPModel,
    build_attention_mask,
    cross_attention,
    embed_tabular,
    ensemble_probs,
    init_classifiers,
    mtr_predict,
    project_image,
    project_tabular,
    tabular_encode,
)
from tip_ssl.numeric import LARGE, Tensor, ops

from conftest import TINY_MODEL


def batch(data, n=6, start=0):
    sl = slice(start, start + n)
    return data.images[sl], data.values[sl].copy()


def some_mask(shape, seed=0, rate=0.4):
    m = np.random.default_rng(seed).random(shape) < rate
    m[0, :] = True  # one fully missing row
    return m


# -- configuration ------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ModelConfigError):
        ModelConfig(d_model=10, n_heads=4)
    with pytest.raises(ModelConfigError):
        ModelConfig(tab_layers=0)
    cfg = ModelConfig()
    assert cfg.tab_layers == cfg.interact_layers == 4
    assert ModelConfig(d_model=64, n_heads=8).head_dim == 8


# -- embedding --------------------------------------------------------------------


def test_embedding_length_and_all_missing_rows(tiny_model, tiny_data):
    _, x = batch(tiny_data)
    N = tiny_data.schema.n_columns
    E = embed_tabular(tiny_model.params, tiny_data.schema, x, np.ones_like(x, bool)).data
    assert E.shape == (6, N + 1, TINY_MODEL.d_model)
    p = tiny_model.params
    expected = p["tab.embed.msk"].data + p["tab.embed.U"].data[1:]
    np.testing.assert_array_equal(E[:, 1:], np.broadcast_to(expected, E[:, 1:].shape))
    np.testing.assert_array_equal(E[:, 0], np.broadcast_to(p["tab.embed.cls"].data + p["tab.embed.U"].data[0],
                                                           E[:, 0].shape))


def test_embedding_lookup_rules(tiny_model, tiny_data):
    schema, p = tiny_data.schema, tiny_model.params
    _, x = batch(tiny_data, n=1)
    E = embed_tabular(p, schema, x, np.zeros_like(x, bool)).data[0]
    U = p["tab.embed.U"].data
    for j in range(schema.n_categorical):
        row = p["tab.embed.A"].data[schema.offsets[j] + int(x[0, j])]
        np.testing.assert_allclose(E[j + 1], row + U[j + 1], atol=1e-7)
    for j in range(schema.n_categorical, schema.n_columns):
        tok = x[0, j] * p["tab.embed.w_cont"].data + p["tab.embed.b_cont"].data
        np.testing.assert_allclose(E[j + 1], tok + U[j + 1], atol=1e-6)


def test_embedding_code_out_of_range(tiny_model, tiny_data):
    _, x = batch(tiny_data, n=1)
    x[0, 0] = tiny_data.schema.cardinalities[0]
    with pytest.raises(IndexError):
        embed_tabular(tiny_model.params, tiny_data.schema, x, np.zeros_like(x, bool))
    # the same bad code is fine when the cell is masked, because it is never read
    m = np.zeros_like(x, bool)
    m[0, 0] = True
    embed_tabular(tiny_model.params, tiny_data.schema, x, m)


# -- attention mask ---------------------------------------------------------------


def test_attention_mask_no_missing_is_all_allowed():
    assert np.all(build_attention_mask(np.zeros((2, 4), bool)) == 0.0)


def test_attention_mask_blocks_missing_column_except_self():
    M = np.zeros((1, 4), bool)
    M[0, 2] = True
    A = build_attention_mask(M)[0]
    j = 3  # token index of column 2 (position 0 is [CLS])
    for q in range(5):
        assert A[q, j] == (0.0 if q == j else -LARGE)
    allowed_in_row_j = {k for k in range(5) if A[j, k] == 0.0}
    assert allowed_in_row_j == {0, 1, 2, 4, j}


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_attention_mask_rule(n, seed):
    M = np.random.default_rng(seed).random((2, n)) < 0.5
    A = build_attention_mask(M)
    assert np.all(A[:, :, 0] == 0.0)  # [CLS] column is never blocked
    missing = np.concatenate([np.zeros((2, 1), bool), M], axis=1)
    for b in range(2):
        for q in range(n + 1):
            for k in range(n + 1):
                allowed = q == k or not missing[b, k]
                assert (A[b, q, k] == 0.0) == allowed


# -- tabular encoder ------------------------------------------------------------


def test_tabular_output_shape(tiny_model, tiny_data):
    _, x = batch(tiny_data)
    T = tiny_model.tabular(x, some_mask(x.shape))
    assert T.shape == (6, tiny_data.schema.n_columns + 1, TINY_MODEL.d_model)


def test_msk_token_perturbation_only_moves_missing_positions(tiny_model, tiny_data):
    _, x = batch(tiny_data)
    M = some_mask(x.shape, seed=2)
    M[1, :] = False
    p = tiny_model.params
    T0 = tiny_model.tabular(x, M).data
    delta = np.random.default_rng(0).standard_normal(p["tab.embed.msk"].shape).astype(np.float32)
    p["tab.embed.msk"].data += delta
    T1 = tiny_model.tabular(x, M).data
    present = np.concatenate([np.ones((6, 1), bool), ~M], axis=1)
    np.testing.assert_array_equal(T1[present], T0[present])
    missing = ~present
    assert np.all(np.abs(T1[missing] - T0[missing]).max(axis=-1) > 1e-4)


def test_missing_value_independence(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    M = some_mask(x.shape, seed=4)
    y = x.copy()
    y[M] = np.random.default_rng(9).standard_normal(M.sum()).astype(np.float32) * 50
    y[:, : tiny_data.schema.n_categorical][M[:, : tiny_data.schema.n_categorical]] = 0
    init_classifiers(tiny_model.params, TINY_MODEL, 3)
    fa, fb = tiny_model.features(images, x, M), tiny_model.features(images, y, M)
    assert fa.T.data.tobytes() == fb.T.data.tobytes()
    assert fa.F.data.tobytes() == fb.F.data.tobytes()
    pa, pb = tiny_model.predict_proba(images, x, M), tiny_model.predict_proba(images, y, M)
    assert pa.data.tobytes() == pb.data.tobytes()
    ra, rb = tiny_model.reconstruct(images, x, M), tiny_model.reconstruct(images, y, M)
    assert ra[1].tobytes() == rb[1].tobytes()


def test_unmasked_change_does_move_outputs(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    M = np.zeros_like(x, bool)
    y = x.copy()
    y[:, -1] += 1.0
    assert not np.array_equal(tiny_model.features(images, x, M).F.data, tiny_model.features(images, y, M).F.data)


# -- cross-attention and interaction -------------------------------------------------


def test_single_image_token_makes_cross_attention_query_independent(tiny_model):
    p = tiny_model.params
    D = TINY_MODEL.d_model
    rng = np.random.default_rng(0)
    img = Tensor(rng.standard_normal((2, 1, D)))
    out_a = cross_attention(p, "interact.0.cross", Tensor(rng.standard_normal((2, 5, D))), img, TINY_MODEL.n_heads).data
    out_b = cross_attention(p, "interact.0.cross", Tensor(rng.standard_normal((2, 5, D)) * 7), img,
                            TINY_MODEL.n_heads).data
    v = img.data[:, 0] @ p["interact.0.cross.Wv"].data + p["interact.0.cross.bv"].data
    expected = v @ p["interact.0.cross.Wo"].data + p["interact.0.cross.bo"].data
    for out in (out_a, out_b):
        np.testing.assert_allclose(out, np.broadcast_to(expected[:, None], out.shape), atol=1e-5)


def test_cross_attention_gradient_matches_finite_differences():
    r = run_case("attention", seed=0)
    assert r.passed, [(c.name, c.rel_error) for c in r.checks]


def test_interaction_keeps_shape_and_is_mask_free_when_nothing_missing(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    f = tiny_model.features(images, x, np.zeros_like(x, bool))
    assert f.F.shape == f.T.shape
    # a mask with no missing cells is the unmasked forward
    E = embed_tabular(tiny_model.params, tiny_data.schema, x, np.zeros_like(x, bool))
    T = tabular_encode(tiny_model.params, TINY_MODEL, E, np.zeros((6, x.shape[1] + 1, x.shape[1] + 1), np.float32))
    assert T.data.tobytes() == f.T.data.tobytes()


def test_masked_path_depends_only_on_mask_and_visible_cells(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    M = some_mask(x.shape, seed=6, rate=0.5)
    F = tiny_model.features(images, x, np.zeros_like(x, bool)).F.data
    F_masked = tiny_model.features(images, x, M).F.data
    assert not np.array_equal(F, F_masked)
    y = x.copy()
    cont = np.zeros_like(M)
    cont[:, tiny_data.schema.n_categorical:] = True
    y[M & cont] += 3.0
    assert tiny_model.features(images, y, M).F.data.tobytes() == F_masked.tobytes()


# -- projection heads ---------------------------------------------------------------


def test_projections_are_unit_norm(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    f = tiny_model.features(images, x, np.zeros_like(x, bool))
    zi, zt = project_image(tiny_model.params, f.pooled), project_tabular(tiny_model.params, f.T)
    assert zi.shape == zt.shape == (6, TINY_MODEL.proj_dim)
    np.testing.assert_allclose(np.linalg.norm(zi.data, axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(zt.data, axis=1), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100))
def test_cosine_similarity_ignores_positive_scaling(seed, c):
    r = np.random.default_rng(seed)
    z = ops.l2_normalize(r.standard_normal((1, 8))).data
    v = r.standard_normal((4, 8)).astype(np.float32)
    s1 = z @ ops.l2_normalize(v).data.T
    s2 = z @ ops.l2_normalize(v * np.float32(c)).data.T
    np.testing.assert_allclose(s1, s2, atol=1e-6)
    assert np.argmax(s1) == np.argmax(s2)


def test_zero_vector_normalisation_is_guarded():
    assert np.all(np.isfinite(ops.l2_normalize(np.zeros((2, 4), np.float32)).data))


def test_default_head_sizes():
    cfg = ModelConfig()
    assert cfg.proj_dim == 32 and cfg.gi_hidden == 256


# -- MTR head ---------------------------------------------------------------------


def test_mtr_predict_slices_by_cardinality(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    slices, cont = tiny_model.reconstruct(images, x, some_mask(x.shape))
    schema = tiny_data.schema
    assert [s.shape for s in slices] == [(6, c) for c in schema.cardinalities]
    assert cont.shape == (6, schema.n_columns - schema.n_categorical)


def test_mtr_zero_weights_predict_the_bias(tiny_model, tiny_data):
    p = tiny_model.params
    p["head.mtr.W2"].data[...] = 0.0
    p["head.mtr.b2"].data[...] = 1.25
    F = Tensor(np.random.default_rng(0).standard_normal((3, tiny_data.schema.n_columns + 1, TINY_MODEL.d_model)))
    _, cont = mtr_predict(p, tiny_data.schema, F)
    assert np.all(cont == np.float32(1.25))


# -- ensemble ---------------------------------------------------------------------


def fixed_classifiers(model, logits_by_head):
    init_classifiers(model.params, TINY_MODEL, len(logits_by_head["image"]))
    for name, logits in logits_by_head.items():
        model.params[f"cls.{name}.W"].data[...] = 0.0
        model.params[f"cls.{name}.b"].data[...] = logits


def ens(model, B=2):
    r = np.random.default_rng(0)
    D = TINY_MODEL.d_model
    C = TINY_MODEL.vision.out_channels
    return ensemble_probs(model.params, Tensor(r.standard_normal((B, C))), Tensor(r.standard_normal((B, D))),
                          Tensor(r.standard_normal((B, D)))).data


def test_ensemble_of_identical_heads(tiny_model):
    p = np.log(np.array([0.2, 0.5, 0.3], np.float32))
    fixed_classifiers(tiny_model, {"image": p, "tab": p, "multi": p})
    np.testing.assert_allclose(ens(tiny_model), [[0.2, 0.5, 0.3]] * 2, atol=1e-6)


def test_ensemble_majority_by_averaged_mass(tiny_model):
    a, b = np.log([0.9, 0.1]), np.log([0.1, 0.9])
    fixed_classifiers(tiny_model, {"image": a, "tab": a, "multi": b})
    out = ens(tiny_model)
    np.testing.assert_allclose(out[0], [1.9 / 3, 1.1 / 3], atol=1e-6)
    assert np.all(out.argmax(axis=1) == 0)


def test_ensemble_rows_sum_to_one(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    init_classifiers(tiny_model.params, TINY_MODEL, 4)
    for k in ("image", "tab", "multi"):
        tiny_model.params[f"cls.{k}.W"].data[...] = np.random.default_rng(1).standard_normal(
            tiny_model.params[f"cls.{k}.W"].shape)
    p = tiny_model.predict_proba(images, x, some_mask(x.shape)).data
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_predict_without_classifiers_fails(tiny_model, tiny_data):
    images, x = batch(tiny_data)
    assert tiny_model.n_classes is None
    with pytest.raises(ModelConfigError):
        tiny_model.predict_proba(images, x, np.zeros_like(x, bool))


# -- parameter slots ------------------------------------------------------------


def test_parameter_slots_are_named_and_unique(tiny_model):
    names = list(tiny_model.params)
    assert len(names) == len(set(names))
    for expected in ("tab.embed.A", "tab.embed.U", "tab.embed.msk", "tab.embed.cls", "interact.0.cross.Wq",
                     "head.gi.W1", "head.gt.W2", "head.itm.W", "head.mtr.W1", "head.mtr.b2", "vision.pos"):
        assert expected in names
    assert all(t.name == n for n, t in tiny_model.params.items())
    ids = {id(t) for t in tiny_model.params.values()}
    assert len(ids) == len(names)


def test_u_has_one_row_per_column_plus_cls(tiny_model, tiny_data):
    assert tiny_model.params["tab.embed.U"].shape[0] == tiny_data.schema.n_columns + 1
    assert tiny_model.params["tab.embed.A"].shape[0] == tiny_data.schema.total_categories


def test_same_seed_same_parameters(tiny_data):
    a = TIPModel(TINY_MODEL, tiny_data.schema, seed=7).params
    b = TIPModel(TINY_MODEL, tiny_data.schema, seed=7).params
    assert all(a[k].data.tobytes() == b[k].data.tobytes() for k in a)


def test_attention_scale_uses_head_dim():
    assert 1 / math.sqrt(ModelConfig(d_model=64, n_heads=8).head_dim) == pytest.approx(1 / math.sqrt(8))
