import numpy as np
import pytest

from crowdflux.features import (ForceFlowMatrix, VisualWord, assemble_matrix, build_force_flow, extract_words,
                                read_words_csv, words_matrix, write_words_csv)


def frames(n, cells=3):
    return [np.full(cells, float(t)) + np.arange(cells) for t in range(n)]


def test_non_overlapping_clips_drop_tail():
    clips = list(build_force_flow(frames(7), T=3, start=10))
    assert [c.clip_start for c in clips] == [10, 13]
    assert clips[1].values[:, 0].tolist() == [3.0, 4.0, 5.0]


def test_overlapping_and_gapped_strides():
    assert [c.clip_start for c in build_force_flow(frames(6), T=3, stride=1)] == [0, 1, 2, 3]
    gapped = list(build_force_flow(frames(10), T=3, stride=5))
    assert [c.clip_start for c in gapped] == [0, 5]
    assert gapped[1].values[:, 0].tolist() == [5.0, 6.0, 7.0]


def test_bad_window_arguments():
    with pytest.raises(ValueError):
        list(build_force_flow(frames(4), T=1))
    with pytest.raises(ValueError):
        list(build_force_flow(frames(4), T=2, stride=0))


def test_matrix_rejects_negative_or_nan():
    with pytest.raises(ValueError):
        ForceFlowMatrix(np.array([[1.0, -1.0]]))
    with pytest.raises(ValueError):
        ForceFlowMatrix(np.array([[np.nan, 1.0]]))


def test_words_are_columns_and_roundtrip():
    m = ForceFlowMatrix(np.arange(12, dtype=float).reshape(4, 3), clip_start=8)
    words = extract_words(m)
    assert [w.cell_index for w in words] == [0, 1, 2]
    assert words[1].values.tolist() == [1.0, 4.0, 7.0, 10.0]
    assert all(w.clip_start == 8 for w in words)
    back = assemble_matrix(words[::-1])
    assert np.array_equal(back.values, m.values) and back.clip_start == 8
    assert words_matrix(words).shape == (3, 4)


def test_normalized_words_have_unit_norm_or_zero():
    m = ForceFlowMatrix(np.array([[3.0, 0.0], [4.0, 0.0]]))
    w = extract_words(m, normalize=True)
    assert w[0].values.tolist() == [0.6, 0.8]
    assert w[1].values.tolist() == [0.0, 0.0]


def test_word_csv_roundtrip(tmp_path, rng):
    words = [VisualWord(rng.random(5), c, 30) for c in range(4)]
    write_words_csv(tmp_path / "w.csv", words)
    back = read_words_csv(tmp_path / "w.csv")
    assert all(np.array_equal(a.values, b.values) and a.cell_index == b.cell_index for a, b in zip(words, back))


def test_tagging_keeps_values():
    w = VisualWord([1.0, 2.0], 3, 4)
    t = w.tagged(7)
    assert t.token == 7 and w.token is None and np.array_equal(t.values, w.values)
