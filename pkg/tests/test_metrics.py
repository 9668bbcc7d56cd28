import math

import numpy as np
import pytest

from assoftmax.errors import ContractError
from assoftmax.metrics import (
    MetricSeries,
    accuracy,
    f1_scores,
    p_margin,
    p_margin_stats,
    pearson,
)


class TestF1:
    def test_hand_counts(self):
        # class 0: tp 1, fp 1, fn 0 -> 2/3
        res = f1_scores([[0], [0]], [[0], [1]], 2)
        assert res["per_class"][0] == pytest.approx(2 / 3)
        assert res["per_class"][1] == 0.0
        assert res["macro_f1"] == pytest.approx(1 / 3)
        assert res["micro_f1"] == pytest.approx(0.5)

    def test_zero_over_zero(self):
        res = f1_scores([[]], [[]], 3)
        assert res == {"macro_f1": 0.0, "micro_f1": 0.0, "per_class": [0.0, 0.0, 0.0]}

    def test_six_sample_multilabel(self):
        pred = [{0, 1}, {1}, set(), {2}, {0, 2}, {1, 2}]
        gold = [{0}, {1, 2}, {0}, {2}, {0, 1}, {1, 2}]
        # class0 tp2 fp0 fn1; class1 tp2 fp1 fn1; class2 tp2 fp1 fn1
        res = f1_scores(pred, gold, 3)
        np.testing.assert_allclose(res["per_class"], [4 / 5, 4 / 6, 4 / 6])
        assert res["micro_f1"] == pytest.approx(12 / 17)

    def test_micro_equals_accuracy_single_label(self):
        rng = np.random.default_rng(0)
        p = rng.integers(0, 4, 50)
        g = rng.integers(0, 4, 50)
        assert f1_scores(p.tolist(), g.tolist(), 4)["micro_f1"] == pytest.approx(accuracy(p, g))

    def test_indicator_input(self):
        a = np.array([[True, False], [False, True]])
        assert f1_scores(a, a, 2)["macro_f1"] == 1.0

    def test_errors(self):
        with pytest.raises(ContractError):
            f1_scores([], [], 2)
        with pytest.raises(ContractError):
            accuracy([1], [1, 2])


class TestPearson:
    def test_values(self):
        assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
        assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0)

    def test_constant(self):
        with pytest.raises(ContractError):
            pearson([1, 1, 1], [1, 2, 3])

    def test_matches_numpy(self):
        rng = np.random.default_rng(3)
        x, y = rng.normal(size=20), rng.normal(size=20)
        assert pearson(x, y) == pytest.approx(np.corrcoef(x, y)[0, 1], abs=1e-12)


class TestMargins:
    def test_p_margin(self):
        assert p_margin([0.5, 0.3, 0.2], 0) == pytest.approx(0.2)
        assert p_margin([0.5, 0.3, 0.2], 2) == pytest.approx(-0.3)

    def test_stats(self):
        logits = [np.log([0.5, 0.3, 0.2]), np.log([0.2, 0.2, 0.6]), [0.0, 0.0, 0.0]]
        samples, counts, edges = p_margin_stats(logits, [0, 0, 1])
        assert [s.correct for s in samples] == [True, False, False]
        assert counts.sum() == 3 and counts.size == 40
        assert edges[0] == -1 and edges[-1] == 1
        assert math.isclose(samples[1].p_margin, -0.4)


class TestSeries:
    def test_increasing(self):
        MetricSeries([1, 2], [0.1, 0.2])
        with pytest.raises(ContractError):
            MetricSeries([2, 2], [0.1, 0.2])


class TestSpecShapes:
    def test_accuracy(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_margin_examples(self):
        samples, _, _ = p_margin_stats([np.log([0.6, 0.25, 0.15])], [0])
        assert samples[0].p_margin == pytest.approx(0.35) and samples[0].correct
        assert p_margin([1.0, 0.0, 0.0], 0) == 1.0

    def test_pearson_affine(self):
        x = [0.3, 1.2, -0.4, 2.2]
        y = [1.0, 0.1, 0.7, 0.9]
        r = pearson(x, y)
        assert pearson([3 * v + 1 for v in x], y) == pytest.approx(r)
        assert pearson([-2 * v for v in x], y) == pytest.approx(-r)
        assert pearson(x, [-2 * v + 3 for v in x]) == pytest.approx(-1.0)
