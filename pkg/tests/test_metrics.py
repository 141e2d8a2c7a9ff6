"""Classification metrics against brute-force and hand-counted oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfgstack.metrics import (EVAL_CSV_HEADER, LABEL_BENIGN, LABEL_MALICIOUS,
                              ConfusionCounts, accuracy, confusion,
                              eval_csv_rows, evaluate_model, prf1, roc_auc)


def pairwise_auc(scores, labels):
    """Mann-Whitney statistic: P(score_pos > score_neg) + half tie credit."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (pos.size * neg.size)


def test_confusion_counts_enumerated():
    preds = [1, 1, 0, 0, 1, 0]
    labs = [1, 0, 0, 1, 1, 0]
    c = confusion(preds, labs)
    assert (c.tp, c.tn, c.fp, c.fn) == (2, 2, 1, 1)
    assert c.total == 6
    s = c.swapped()
    assert (s.tp, s.tn, s.fp, s.fn) == (2, 2, 1, 1)


def test_confusion_rejects_bad_input():
    with pytest.raises(ValueError, match="length mismatch"):
        confusion([0, 1], [0])
    with pytest.raises(ValueError, match="at least one"):
        confusion([], [])


def test_prf1_recall_oracle():
    # 93 detected out of 102 actual positives
    c = ConfusionCounts(tp=93, tn=50, fp=7, fn=9)
    stats = prf1(c)
    assert stats.recall == pytest.approx(93 / 102)
    assert stats.precision == pytest.approx(93 / 100)
    expected_f1 = 2 * stats.precision * stats.recall / (stats.precision
                                                        + stats.recall)
    assert stats.f1 == pytest.approx(expected_f1)
    assert not stats.zero_division


def test_prf1_benign_view_swaps_counts():
    c = ConfusionCounts(tp=3, tn=5, fp=2, fn=1)
    b = prf1(c, positive_class=LABEL_BENIGN)
    assert b.precision == pytest.approx(5 / 6)
    assert b.recall == pytest.approx(5 / 7)


def test_prf1_zero_division_flag():
    # classifier that never predicts positive
    c = confusion([0, 0, 0], [0, 1, 1])
    stats = prf1(c)
    assert stats.precision == 0.0 and stats.recall == 0.0 and stats.f1 == 0.0
    assert stats.zero_division
    assert prf1(c, positive_class=LABEL_BENIGN).zero_division is False


def test_accuracy_matches_ratio():
    c = ConfusionCounts(tp=4, tn=3, fp=2, fn=1)
    assert accuracy(c) == pytest.approx(0.7)


def test_auc_perfect_and_reversed():
    scores = [0.9, 0.8, 0.2, 0.1]
    labels = [1, 1, 0, 0]
    auc, points = roc_auc(scores, labels)
    assert auc == 1.0
    flipped, _ = roc_auc([1 - s for s in scores], labels)
    assert flipped == pytest.approx(1.0 - auc, abs=1e-12)


def test_auc_all_tied_scores_is_half():
    auc, points = roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])
    assert auc == pytest.approx(0.5, abs=1e-12)
    assert points == [(0.0, 0.0), (1.0, 1.0)]


@settings(deadline=None, max_examples=60)
@given(st.data())
def test_auc_equals_pairwise_statistic(data):
    n = data.draw(st.integers(min_value=2, max_value=25))
    labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n)
                       .filter(lambda ls: 0 < sum(ls) < len(ls)))
    # coarse grid forces frequent score ties
    scores = data.draw(st.lists(st.integers(0, 4).map(lambda k: k / 4.0),
                                min_size=n, max_size=n))
    auc, _ = roc_auc(scores, labels)
    assert auc == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)


def test_auc_random_scores_near_half():
    rng = np.random.default_rng(2024)
    labels = rng.integers(0, 2, size=4000)
    labels[0], labels[1] = 0, 1
    scores = rng.random(4000)
    auc, _ = roc_auc(scores, labels)
    assert abs(auc - 0.5) < 0.03


def test_roc_points_are_monotone_and_anchored():
    rng = np.random.default_rng(3)
    labels = np.array([0, 1] * 20)
    scores = rng.random(40).round(1)
    _, points = roc_auc(scores, labels)
    assert points[0] == (0.0, 0.0)
    assert points[-1] == (1.0, 1.0)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    assert xs == sorted(xs) and ys == sorted(ys)


def test_roc_rejects_degenerate_input():
    with pytest.raises(ValueError, match="both classes"):
        roc_auc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError, match="length mismatch"):
        roc_auc([0.1], [1, 0])


def test_evaluate_model_report_and_csv_rows():
    preds = [1, 1, 0, 0]
    labels = [1, 0, 0, 1]
    scores = [0.9, 0.6, 0.3, 0.4]
    report = evaluate_model("se", preds, labels, scores)
    assert report.model == "se"
    assert report.accuracy == pytest.approx(0.5)
    assert report.auc == pytest.approx(pairwise_auc(scores, labels))
    rows = eval_csv_rows(report)
    assert len(rows) == 2
    assert rows[0][:2] == ("se", "benign")
    assert rows[1][:2] == ("se", "malicious")
    assert all(len(r) == len(EVAL_CSV_HEADER) for r in rows)
    assert rows[1][2] == pytest.approx(report.malicious.precision)
    assert rows[0][7] == 0


def test_label_constants():
    assert LABEL_BENIGN == 0 and LABEL_MALICIOUS == 1
