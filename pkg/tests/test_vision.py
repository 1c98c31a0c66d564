import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tip_ssl.gradsuite import run_case
from tip_ssl.numeric import Tensor
from tip_ssl.params import ParamStore
from tip_ssl.vision import (
    VisionConfig,
    VisionConfigError,
    augment_image,
    encode_image,
    init_vision,
    pool_image,
    project_to_sequence,
)

DESK = VisionConfig(image_size=16, widths=(8, 8, 8, 8), strides=(1, 2, 1, 2))


def make_params(cfg=DESK, d=8, seed=0):
    store = ParamStore(seed)
    init_vision(store, cfg, d)
    return store


# -- augmentation -----------------------------------------------------------------


def test_augment_identity_when_nothing_fires():
    img = np.random.default_rng(0).random((4, 8, 8, 3)).astype(np.float32)
    out = augment_image(img, np.random.default_rng(1), p_flip=0.0, p_noise=0.0, p_brightness=0.0)
    np.testing.assert_array_equal(out, img)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_augment_stays_in_unit_interval(seed):
    r = np.random.default_rng(seed)
    img = r.random((3, 8, 8, 3)).astype(np.float32)
    img[0] = 1.0
    img[1] = 0.0
    out = augment_image(img, r)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert out.shape == img.shape and out.dtype == img.dtype


def test_two_augmentations_differ_almost_always():
    img = np.random.default_rng(0).random((1, 16, 16, 3)).astype(np.float32)
    hits = 0
    for seed in range(500):
        r = np.random.default_rng(seed)
        a, b = augment_image(img, r), augment_image(img, r)
        hits += np.mean(a != b) >= 0.01
    assert hits / 500 > 0.99


def test_augment_does_not_modify_input():
    img = np.full((2, 4, 4, 3), 0.5, np.float32)
    augment_image(img, np.random.default_rng(0))
    assert np.all(img == 0.5)


# -- encoder --------------------------------------------------------------------


def test_sixteen_pixels_two_stride_two_stages_give_four_by_four():
    I = encode_image(make_params(), DESK, np.random.default_rng(0).random((2, 16, 16, 3)))
    assert I.shape == (2, 4, 4, 8)
    assert DESK.grid == 4 and DESK.downsample == 4


def test_zero_input_gives_finite_output():
    I = encode_image(make_params(), DESK, np.zeros((1, 16, 16, 3), np.float32))
    assert np.all(np.isfinite(I.data))


def test_indivisible_size_is_a_configuration_error():
    with pytest.raises(VisionConfigError):
        VisionConfig(image_size=10, widths=(4, 4), strides=(2, 2))
    with pytest.raises(VisionConfigError):
        VisionConfig(widths=(4, 4), strides=(2,))


def test_wrong_image_shape_is_rejected():
    with pytest.raises(VisionConfigError):
        encode_image(make_params(), DESK, np.zeros((1, 8, 8, 3), np.float32))


def test_encoder_is_deterministic():
    x = np.random.default_rng(3).random((2, 16, 16, 3)).astype(np.float32)
    p = make_params()
    assert encode_image(p, DESK, x).data.tobytes() == encode_image(p, DESK, x).data.tobytes()


def test_encoder_gradient_matches_finite_differences():
    r = run_case("image_encoder", seed=0)
    assert r.passed, [(c.name, c.rel_error) for c in r.checks]


# -- projection to a token sequence ---------------------------------------------


def test_sequence_length_is_grid_area():
    p = make_params()
    I = encode_image(p, DESK, np.random.default_rng(0).random((3, 16, 16, 3)))
    seq = project_to_sequence(p, I)
    assert seq.shape == (3, 16, 8)


def test_identity_projection_gives_flattened_grid_plus_position():
    p = make_params(d=8)
    p["vision.proj.W"].data[...] = np.eye(8, dtype=np.float32)
    I = Tensor(np.random.default_rng(0).standard_normal((2, 4, 4, 8)))
    seq = project_to_sequence(p, I).data
    expected = I.data.reshape(2, 16, 8) + p["vision.pos"].data
    np.testing.assert_allclose(seq, expected, rtol=0, atol=1e-6)


def test_spatial_permutation_permutes_rows_before_position():
    p = make_params(d=8)
    I = np.random.default_rng(0).standard_normal((1, 4, 4, 8)).astype(np.float32)
    perm = np.random.default_rng(1).permutation(16)
    I_perm = I.reshape(1, 16, 8)[:, perm].reshape(1, 4, 4, 8)
    a = project_to_sequence(p, Tensor(I), add_position=False).data
    b = project_to_sequence(p, Tensor(I_perm), add_position=False).data
    np.testing.assert_array_equal(b, a[:, perm])


def test_pool_is_spatial_mean():
    I = np.random.default_rng(0).standard_normal((2, 4, 4, 5)).astype(np.float32)
    np.testing.assert_allclose(pool_image(Tensor(I)).data, I.mean(axis=(1, 2)), atol=1e-6)
