import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pairwise_auc

from rankfuse import metrics as mt
from rankfuse.errors import InvalidInput

sklearn_metrics = pytest.importorskip("sklearn.metrics")


class TestAuc:
    def test_perfect(self):
        assert mt.roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
        assert mt.roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0

    def test_all_tied(self):
        assert mt.roc_auc([0.5] * 6, [1, 0, 1, 0, 1, 0]) == 0.5

    def test_six_sample_case(self):
        # one misordered pair out of nine: (0.4 positive, 0.7 negative)
        scores = [0.9, 0.8, 0.4, 0.7, 0.3, 0.2]
        labels = [1, 1, 1, 0, 0, 0]
        assert pairwise_auc(scores, labels) == 8 / 9
        assert mt.roc_auc(scores, labels) == pytest.approx(8 / 9, abs=1e-15)

    def test_pairwise_oracle_with_ties(self, rng):
        for _ in range(40):
            n = int(rng.integers(2, 200))
            scores = rng.integers(0, 10, size=n) / 10
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                continue
            assert mt.roc_auc(scores, labels) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_single_class_undefined(self):
        assert mt.roc_auc([0.1, 0.9], [1, 1]) is None
        assert mt.average_precision([0.1, 0.9], [0, 0]) is None

    def test_sklearn_agrees(self, rng):
        scores = rng.integers(0, 20, size=300) / 20
        labels = rng.integers(0, 2, size=300)
        assert mt.roc_auc(scores, labels) == pytest.approx(sklearn_metrics.roc_auc_score(labels, scores), abs=1e-12)


class TestAveragePrecision:
    def test_perfect(self):
        assert mt.average_precision([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0

    def test_hand_case(self):
        # ranking: + - + ; precisions at the positives are 1 and 2/3
        assert mt.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2)

    def test_sklearn_oracle_with_ties(self, rng):
        for _ in range(30):
            scores = rng.integers(0, 8, size=100) / 8
            labels = rng.integers(0, 2, size=100)
            expected = sklearn_metrics.average_precision_score(labels, scores)
            assert mt.average_precision(scores, labels) == pytest.approx(expected, abs=1e-12)


class TestReport:
    def test_perfect_separation(self):
        r = mt.compute_report([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0])
        assert (r.acc, r.auc, r.precision, r.recall, r.f1, r.ap) == (1, 1, 1, 1, 1, 1)
        assert r.ac == pytest.approx((0.9 + 0.8 + 0.7 + 0.9) / 4)

    def test_threshold_is_strict(self):
        r = mt.compute_report([0.5, 0.6], [0, 1])
        assert r.acc == 1.0

    def test_counts(self):
        scores = [0.9, 0.7, 0.6, 0.4, 0.2, 0.8]
        labels = [1, 0, 1, 1, 0, 0]
        r = mt.compute_report(scores, labels)
        # predicted positive: 0.9, 0.7, 0.6, 0.8 -> tp 2, fp 2, fn 1
        assert r.precision == 0.5
        assert r.recall == pytest.approx(2 / 3)
        assert r.f1 == pytest.approx(2 * 0.5 * (2 / 3) / (0.5 + 2 / 3))
        assert r.acc == pytest.approx(3 / 6)
        assert r.ac == pytest.approx((0.9 + 0.6 + 0.8) / 3)

    def test_no_positive_predictions(self):
        r = mt.compute_report([0.1, 0.2], [1, 0])
        assert r.precision == 0.0 and r.f1 == 0.0

    def test_single_class(self):
        r = mt.compute_report([0.1, 0.2], [0, 0])
        assert r.auc is None and r.ap is None and r.acc == 1.0

    def test_predicted_override(self):
        r = mt.compute_report([0.9, 0.1], [1, 0], confidences=[0.6, 0.7], predicted=[0, 0])
        assert r.acc == 0.5 and r.ac == 0.7 and r.auc == 1.0

    def test_json_and_table(self):
        r = mt.compute_report([0.9, 0.1], [1, 1])
        d = json.loads(r.to_json())
        assert d["auc"] is None and d["positive_class"] == "malignant"
        assert "AUC   undefined" in r.table()

    @pytest.mark.parametrize(
        "kw", [dict(scores=[0.1], labels=[0, 1]), dict(scores=[], labels=[]), dict(scores=[0.1], labels=[2])]
    )
    def test_errors(self, kw):
        with pytest.raises(InvalidInput):
            mt.compute_report(**kw)


scores_labels = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 12).map(lambda v: v / 12), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n),
    )
).filter(lambda t: 0 < sum(t[1]) < len(t[1]))


@settings(max_examples=100, deadline=None)
@given(scores_labels)
def test_auc_invariant_to_monotone_transform(data):
    s, y = data
    s = np.array(s)
    assert mt.roc_auc(s, y) == pytest.approx(mt.roc_auc(np.exp(3 * s) - 7, y), abs=1e-12)
    assert mt.average_precision(s, y) == pytest.approx(mt.average_precision(2 * s + 1, y), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores_labels)
def test_auc_complement(data):
    s, y = np.array(data[0]), np.array(data[1])
    assert mt.roc_auc(s, y) + mt.roc_auc(s, 1 - y) == pytest.approx(1.0, abs=1e-12)
    assert mt.roc_auc(-s, y) == pytest.approx(1 - mt.roc_auc(s, y), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scores_labels, st.randoms(use_true_random=False))
def test_shuffle_invariance(data, rnd):
    s, y = list(data[0]), list(data[1])
    idx = list(range(len(s)))
    rnd.shuffle(idx)
    a = mt.compute_report(s, y)
    b = mt.compute_report([s[i] for i in idx], [y[i] for i in idx])
    assert a.auc == pytest.approx(b.auc, abs=1e-12)
    assert a.ap == pytest.approx(b.ap, abs=1e-12)
    assert (a.acc, a.f1) == pytest.approx((b.acc, b.f1))
