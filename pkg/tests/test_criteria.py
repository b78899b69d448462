import csv

import numpy as np
import pytest

from plsprune.criteria import (
    Criterion,
    apoz_scores,
    l1_norm_scores,
    pls_vip_scores,
    write_scores_csv,
)
from plsprune.data import Dataset
from plsprune.errors import CriterionError, IndexMismatchError
from plsprune.network import Conv2D, Dense, GlobalAvgPool, Network, ReLU, Softmax, build_cnn
from plsprune.representation import FeatureMapIndex, FilterKey


def index_of(widths):
    entries, col = [], 0
    for j, w in enumerate(widths):
        entries.append((FilterKey(0, j), col, col + w))
        col += w
    return FeatureMapIndex(tuple(entries))


def test_vip_global_identity():
    scores = pls_vip_scores([2.0, 0.5], index_of([1, 1]))
    assert [s.score for s in scores] == [2.0, 0.5]
    assert all(s.criterion is Criterion.PLS_VIP for s in scores)


def test_vip_pooled_mean():
    scores = pls_vip_scores([1, 1, 1, 1, 0, 2], index_of([4, 2]))
    assert [s.score for s in scores] == [1.0, 1.0]


def test_vip_length_mismatch():
    with pytest.raises(IndexMismatchError):
        pls_vip_scores([1.0, 2.0, 3.0], index_of([1, 1]))


def conv_net(weight, bias):
    conv = Conv2D(weight.shape[1], weight.shape[0], weight.shape[2], padding=0,
                  weight=weight, bias=bias)
    return Network([conv, ReLU(), GlobalAvgPool(), Dense(weight.shape[0], 2), Softmax()],
                   (weight.shape[1], 4, 4))


def test_l1_examples():
    w = np.zeros((3, 3, 3, 3))
    w[0] = 1.0
    w[2] = -1.0
    scores = l1_norm_scores(conv_net(w, np.full(3, 9.0)))
    assert [s.score for s in scores] == [27.0, 0.0, 27.0]


def test_apoz_examples():
    w = np.zeros((3, 1, 1, 1))
    bias = np.array([-1.0, 1.0, 0.0])
    w[2, 0, 0, 0] = 1.0
    net = conv_net(w, bias)
    # filter 2 copies the input; half of each image is zero
    x = np.zeros((4, 1, 4, 4))
    x[:, :, :2, :] = 0.5
    scores = apoz_scores(net, Dataset(x, [0, 1, 0, 1], 2), batch_size=3)
    assert [s.score for s in scores] == [0.0, 1.0, 0.5]


def test_apoz_needs_relu():
    net = Network([Conv2D(1, 2, 3), GlobalAvgPool(), Dense(2, 2), Softmax()], (1, 4, 4))
    with pytest.raises(CriterionError, match="conv layer 0"):
        apoz_scores(net, Dataset(np.zeros((1, 1, 4, 4)), [0], 2))


def test_all_criteria_cover_same_filters(rng):
    from plsprune.pls import nipals_fit, vip
    from plsprune.representation import build_feature_matrix

    net = build_cnn((1, 8, 8), (3, 4), n_classes=2, pool_after=(0,), seed=2)
    ds = Dataset(rng.random((12, 1, 8, 8)), np.arange(12) % 2, 2)
    X, index = build_feature_matrix(net, ds)
    pls = pls_vip_scores(vip(nipals_fit(X, ds.labels, 2)), index)
    keys = [s.key for s in pls]
    assert keys == [s.key for s in l1_norm_scores(net)] == [s.key for s in apoz_scores(net, ds)]
    assert len(set(keys)) == 7


def test_scores_csv(tmp_path):
    w = np.ones((2, 1, 3, 3))
    scores = l1_norm_scores(conv_net(w, np.zeros(2)))
    write_scores_csv(scores, tmp_path / "s.csv")
    rows = list(csv.DictReader(open(tmp_path / "s.csv")))
    assert rows[1] == {"layer_index": "0", "filter_index": "1", "criterion": "l1", "score": "9.0"}
