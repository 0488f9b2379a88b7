import numpy as np
import pytest

from ctxaffect.errors import DimensionError, InputError
from ctxaffect.visual import VisualEncoderParams, flatten_size, sample_frames, visual_stages


def test_sample_frames_even_spacing():
    video = np.arange(64.0)[None, :, None, None] * np.ones((3, 64, 2, 2))
    clip = sample_frames(video, 32)
    assert clip.shape == (3, 32, 2, 2)
    np.testing.assert_array_equal(clip[0, :, 0, 0], np.arange(0, 64, 2))


def test_sample_frames_repeats_short_videos():
    video = np.arange(10.0)[None, :, None, None] * np.ones((1, 10, 1, 1))
    idx = sample_frames(video, 32)[0, :, 0, 0]
    np.testing.assert_array_equal(idx, (np.arange(32) * 10) // 32)


def test_sample_frames_rejects_empty():
    with pytest.raises(InputError):
        sample_frames(np.zeros((3, 0, 4, 4)))


def test_flatten_size_default_is_864():
    assert flatten_size(32, 32, 32, (4, 3)) == 864 == 32 * 3 ** 3


def test_stage_shapes_at_default_size():
    p = VisualEncoderParams.init(np.random.default_rng(0))
    clip = np.random.default_rng(1).uniform(size=(3, 32, 32, 32))
    s = visual_stages(clip, p)
    assert s["conv1"].shape == (32, 32, 32, 32)
    assert s["pool1"].shape == (32, 8, 8, 8)
    assert s["conv2"].shape == (32, 8, 8, 8)
    assert s["pool2"].shape == (32, 3, 3, 3)
    assert s["flatten"].shape == (864,)
    assert s["features"].shape == (128,)
    assert s["prediction"].shape == (2,)


def test_rejects_wrong_channel_count():
    p = VisualEncoderParams.init(np.random.default_rng(0), frames=8, size=8, filters=2, pools=(2, 2))
    with pytest.raises(DimensionError):
        visual_stages(np.zeros((1, 8, 8, 8)), p)


def test_rejects_unexpected_clip_size():
    p = VisualEncoderParams.init(np.random.default_rng(0), frames=8, size=8, filters=2, pools=(2, 2))
    with pytest.raises(DimensionError):
        visual_stages(np.zeros((3, 12, 12, 12)), p)
