import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ctxaffect.errors import InputError
from ctxaffect.losses import (
    ccc, ccc_value, format_report_line, masked_total_loss, mean_ccc, mse, pearson, total_loss,
)
from ctxaffect.tensor import Tensor, gradient_check

series = arrays(np.float64, st.integers(3, 12), elements=st.floats(-5, 5))


def test_mse_examples():
    assert mse([0.0, 0.0], [1.0, 1.0]).item() == 1.0
    assert mse([1.0, 2.0, 3.0], [2.0, 4.0, 6.0]).item() == pytest.approx(14 / 3, abs=1e-15)
    assert mse([1.5, -2.0], [1.5, -2.0]).item() == 0.0


def test_mse_length_mismatch():
    with pytest.raises(InputError):
        mse([1.0, 2.0], [1.0])


def test_ccc_closed_forms():
    assert abs(ccc_value([1, 2, 3], [2, 3, 4]) - 4 / 7) <= 1e-12
    assert ccc_value([-1, 1], [1, -1]) == pytest.approx(-1.0, abs=1e-15)
    assert ccc_value([0.3, 1.2, -4.0], [0.3, 1.2, -4.0]) == pytest.approx(1.0, abs=1e-15)


def test_ccc_degenerate_cases():
    assert ccc_value([2.0, 2.0, 2.0], [2.0, 2.0, 2.0]) == 1.0
    assert ccc_value([1.0, 1.0], [3.0, 3.0]) == 0.0


def test_ccc_needs_two_samples():
    with pytest.raises(InputError):
        ccc([1.0], [1.0])


def test_total_loss_closed_form_per_target():
    assert abs(total_loss([1.0, 2.0, 3.0], [2.0, 3.0, 4.0]).item() - 31 / 28) <= 1e-12
    two = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    assert abs(total_loss(two, two + 1.0).item() - 2 * 31 / 28) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(series, st.data())
def test_ccc_properties(x, data):
    y = data.draw(arrays(np.float64, x.shape, elements=st.floats(-5, 5)))
    shift = data.draw(st.floats(-10, 10))
    c = ccc_value(x, y)
    assert c == pytest.approx(ccc_value(y, x), abs=1e-12)
    if x.std() > 1e-3 and y.std() > 1e-3:
        assert abs(c) <= abs(pearson(x, y)) + 1e-12 <= 1 + 1e-12
        assert ccc_value(x + shift, y + shift) == pytest.approx(c, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(series, st.data())
def test_total_loss_nonnegative_and_zero_iff_equal(x, data):
    y = data.draw(arrays(np.float64, x.shape, elements=st.floats(-5, 5)))
    assert total_loss(x, y).item() >= -1e-12
    if x.std() > 1e-3:
        assert total_loss(x, x).item() == pytest.approx(0.0, abs=1e-12)


def test_total_loss_gradient_length_10():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=10))
    y = rng.normal(size=10)
    assert gradient_check(lambda x: total_loss(x, y), x) < 1e-6


def test_masked_loss_ignores_padding_and_matches_total_loss():
    rng = np.random.default_rng(1)
    pred, gold = rng.normal(size=(1, 5, 2)), rng.normal(size=(1, 5, 2))
    mask = np.array([[True, True, True, True, False]])
    garbage = pred.copy()
    garbage[0, 4] = 1e6
    ref = total_loss(pred[0, :4], gold[0, :4]).item()
    assert masked_total_loss(pred, gold, mask).item() == pytest.approx(ref, abs=1e-12)
    assert masked_total_loss(garbage, gold, mask).item() == pytest.approx(ref, abs=1e-12)


def test_masked_loss_scopes_differ_across_videos():
    rng = np.random.default_rng(2)
    pred, gold = rng.normal(size=(2, 4, 2)), rng.normal(size=(2, 4, 2))
    mask = np.ones((2, 4), dtype=bool)
    per_video = masked_total_loss(pred, gold, mask, ccc_scope="video").item()
    pooled = masked_total_loss(pred, gold, mask, ccc_scope="batch").item()
    flat = total_loss(pred.reshape(8, 2), gold.reshape(8, 2)).item()
    assert pooled == pytest.approx(flat, abs=1e-12)
    assert per_video != pytest.approx(pooled)


def test_mean_ccc_averages_targets():
    g = np.array([[0.1, 0.5], [0.4, 0.2], [0.9, 0.7]])
    p = g.copy()
    p[:, 1] = 0.3  # constant valence against varying gold -> 0
    a, v, m = mean_ccc(p, g)
    assert (a, v, m) == (pytest.approx(1.0), pytest.approx(0.0), pytest.approx(0.5))


def test_pooled_and_per_video_conventions_on_two_videos():
    # each video is perfectly ordered inside but offset by a constant
    g = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    p = g + np.array([[1.0], [1.0], [-1.0], [-1.0]])
    ids = ["a", "a", "b", "b"]
    per_video = mean_ccc(p, g, ids, "per_video")[2]
    pooled = mean_ccc(p, g, ids, "pooled")[2]
    # per video: var 0.25 each, cov 0.25, offset 1 -> 0.5 / 1.5
    assert per_video == pytest.approx(1 / 3, abs=1e-12)
    # pooled: p = [1, 2, 1, 2] so var_p 0.25, var_g 1.25, cov 0.25, equal means
    assert pooled == pytest.approx(0.5 / 1.5, abs=1e-12)
    g2 = np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 5.0], [6.0, 6.0]])
    p2 = g2 + np.array([[0.5], [0.5], [-0.5], [-0.5]])
    assert mean_ccc(p2, g2, ids, "pooled")[2] > mean_ccc(p2, g2, ids, "per_video")[2]


def test_report_line_has_five_fields():
    line = format_report_line("val", "context-text", (0.1, 0.2, 0.15))
    assert line == "val,context-text,0.100000,0.200000,0.150000"
    assert len(line.split(",")) == 5
