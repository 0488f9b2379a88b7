import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctxaffect.context import (
    AttentionParams, ContextModel, EncoderConfig, multi_head_attention, pack_videos, predict_videos,
    scaled_dot_attention,
)
from ctxaffect.errors import ContractError, DimensionError


def small_model(seed=0, d_model=12):
    cfg = EncoderConfig(d_model, d_k=4, d_v=4, h=3, n_blocks=2)
    return ContextModel.init(np.random.default_rng(seed), cfg)


def test_default_head_layout_concat_is_512():
    cfg = EncoderConfig(120)
    assert cfg.d_ff == 480
    p = AttentionParams.init(np.random.default_rng(0), cfg)
    X = np.random.default_rng(1).normal(size=(5, 120))
    out, weights, concat = multi_head_attention(X, p, cfg, return_weights=True)
    assert concat.shape == (5, 512) == (5, 8 * 64)
    assert weights.shape == (8, 5, 5)
    assert out.shape == (5, 120)
    assert p.Wo.shape == (512, 120)


def test_attention_rows_sum_to_one_with_masks():
    rng = np.random.default_rng(2)
    Q, K, V = rng.normal(size=(2, 6, 4)), rng.normal(size=(2, 6, 4)), rng.normal(size=(2, 6, 3))
    mask = np.array([[1, 1, 1, 0, 0, 1], [1, 1, 1, 1, 1, 1]], dtype=bool)
    _, w = scaled_dot_attention(Q, K, V, mask, return_weights=True)
    np.testing.assert_allclose(w.data.sum(-1), 1.0, atol=1e-12)
    assert (w.data[0][:, ~mask[0]] == 0).all()


def test_fully_masked_row_is_a_contract_error():
    with pytest.raises(ContractError):
        scaled_dot_attention(np.ones((3, 2)), np.ones((3, 2)), np.ones((3, 2)), np.zeros(3, dtype=bool))


def test_padding_has_no_influence_on_valid_outputs():
    model = small_model()
    rng = np.random.default_rng(3)
    X = rng.normal(size=(2, 7, 12))
    mask = np.zeros((2, 7), dtype=bool)
    mask[0, :4] = True
    mask[1, :7] = True
    base = model.forward(X, mask).data
    X2 = X.copy()
    X2[0, 4:] = rng.normal(scale=100.0, size=(3, 12))
    moved = model.forward(X2, mask).data
    assert np.max(np.abs(moved[0, :4] - base[0, :4])) <= 1e-9
    np.testing.assert_array_equal(moved[1], base[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.integers(2, 8))
def test_permutation_equivariance(seed, T):
    model = small_model(seed % 7)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, 12))
    perm = rng.permutation(T)
    out = model.forward(X).data
    assert np.max(np.abs(model.forward(X[perm]).data - out[perm])) <= 1e-9


def test_single_utterance_video_is_supported():
    out = small_model().forward(np.ones((1, 12)))
    assert out.shape == (1, 2)


def test_width_mismatch_is_rejected():
    with pytest.raises(DimensionError):
        small_model().forward(np.ones((3, 10)))


def test_pack_and_predict_videos_agree_with_per_video_forward():
    model = small_model()
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(9, 12))
    videos = [np.array([0, 1, 2, 3]), np.array([4, 5]), np.array([6, 7, 8])]
    X, Y, mask = pack_videos(feats, np.zeros((9, 2)), videos)
    assert X.shape == (3, 4, 12) and mask.sum() == 9
    preds = predict_videos(model, feats, videos, batch_size=2)
    for rows in videos:
        np.testing.assert_allclose(preds[rows], model.forward(feats[rows]).data, atol=1e-12)
