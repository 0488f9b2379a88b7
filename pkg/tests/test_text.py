import numpy as np
import pytest

from ctxaffect.errors import DimensionError, FormatError
from ctxaffect.text import (
    EmbeddingTable, TextEncoderParams, embed_sentence, read_transcripts, text_forward, tokens_to_indices,
)


@pytest.fixture
def table():
    vocab = {"good": 0, "bad": 1, "day": 2}
    return EmbeddingTable(vocab, np.arange(6.0).reshape(3, 2) + 1.0)


def test_window_pads_truncates_and_zeroes_unknown(table):
    win = embed_sentence(["good", "zzz", "day"], table, window=5)
    assert win.shape == (5, 2)
    np.testing.assert_array_equal(win[0], [1, 2])
    np.testing.assert_array_equal(win[1], [0, 0])
    np.testing.assert_array_equal(win[2], [5, 6])
    assert not win[3:].any()
    assert embed_sentence(["bad"] * 60, table, window=50).shape == (50, 2)


def test_indices_mark_padding_and_unknown(table):
    idx = tokens_to_indices([["good", "nope"], ["day"] * 4], table, window=3)
    np.testing.assert_array_equal(idx, [[0, -1, -1], [2, 2, 2]])


def test_feature_width_is_120():
    p = TextEncoderParams.init(np.random.default_rng(0), embed_dim=50)
    feats, pred = text_forward(np.random.default_rng(1).normal(size=(4, 50, 50)), p)
    assert feats.shape == (4, 120) and pred.shape == (4, 2)
    assert [b.kernels.shape[:2] for b in p.banks] == [(30, 3), (30, 4), (60, 2)]
    assert (feats.data >= 0).all()


def test_forward_rejects_wrong_window():
    p = TextEncoderParams.init(np.random.default_rng(0), embed_dim=4)
    with pytest.raises(DimensionError):
        text_forward(np.zeros((40, 4)), p)


def test_embedding_file_round_trip(tmp_path, table):
    path = tmp_path / "emb.txt"
    table.save(path)
    back = EmbeddingTable.load(path)
    assert back.vocabulary == table.vocabulary
    np.testing.assert_array_equal(back.vectors, table.vectors)


def test_embedding_file_without_header(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("a 1 2\nb 3 4\n", encoding="utf-8")
    t = EmbeddingTable.load(path)
    np.testing.assert_array_equal(t.lookup("b"), [3, 4])


def test_embedding_file_rejects_ragged_rows(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("a 1 2\nb 3\n", encoding="utf-8")
    with pytest.raises(FormatError):
        EmbeddingTable.load(path)


def test_transcripts_lowercase_and_split(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("Hello  World\nsecond line here\n", encoding="utf-8")
    assert read_transcripts(path) == [["hello", "world"], ["second", "line", "here"]]
