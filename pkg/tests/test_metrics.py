import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from chsnet.errors import ShapeError
from chsnet.metrics import SCORES, ConfusionAccumulator, compute_metrics, confusion_counts, report_from_counts

from oracles import hand_confusion


def test_worked_confusion_example():
    rep = report_from_counts(tp=8, tn=88, fp=2, fn=2)
    assert rep.precision == pytest.approx(0.8) and rep.recall == pytest.approx(0.8)
    assert rep.dice == pytest.approx(0.8)
    assert rep.jaccard == pytest.approx(2 / 3)
    assert rep.accuracy == pytest.approx(0.96)
    assert rep.specificity == pytest.approx(88 / 90)
    assert rep.degenerate == ()


def test_perfect_and_inverted_predictions():
    y = np.zeros((5, 5))
    y[1:3, 1:4] = 1
    perfect = compute_metrics(y, y)
    assert all(v == 1.0 for v in perfect.scores().values())
    inverted = compute_metrics(y, 1 - y)
    assert inverted.accuracy == 0.0 and inverted.dice == 0.0


def test_degenerate_denominators_are_flagged():
    rep = compute_metrics(np.zeros(9), np.zeros(9))
    assert rep.accuracy == 1.0 and rep.dice == 0.0
    assert set(rep.degenerate) == {"precision", "recall", "dice", "jaccard"}
    full = compute_metrics(np.ones(9), np.ones(9))
    assert full.degenerate == ("specificity",)


shapes = st.tuples(st.integers(1, 6), st.integers(1, 6))


@given(shapes.flatmap(lambda s: st.tuples(
    arrays(np.int8, s, elements=st.sampled_from([0, 1])),
    arrays(np.float64, s, elements=st.floats(0, 1)),
)), st.sampled_from([0.3, 0.5, 0.7]))
def test_counts_match_hand_count(pair, threshold):
    y, p = pair
    rep = compute_metrics(y, p, threshold)
    assert (rep.tp, rep.tn, rep.fp, rep.fn) == hand_confusion(y, p, threshold)
    assert rep.total == y.size
    assert rep.dice >= rep.jaccard
    if rep.dice == rep.jaccard:
        assert rep.dice in (0.0, 1.0)
    for name in SCORES:
        assert 0.0 <= getattr(rep, name) <= 1.0


def test_threshold_is_inclusive():
    assert confusion_counts(np.array([1]), np.array([0.5])) == (1, 0, 0, 0)


def test_accumulator_pools_counts():
    rng = np.random.default_rng(0)
    ys = [(rng.random((4, 4)) > 0.5) for _ in range(3)]
    ps = [rng.random((4, 4)) for _ in range(3)]
    acc = ConfusionAccumulator()
    for y, p in zip(ys, ps):
        acc.update(y, p)
    assert acc.report() == compute_metrics(np.stack(ys), np.stack(ps))


def test_shape_mismatch_and_serialization():
    with pytest.raises(ShapeError):
        compute_metrics(np.ones(3), np.ones(4))
    d = compute_metrics(np.ones(4), np.ones(4)).to_dict()
    assert d["tp"] == 4 and isinstance(d["degenerate"], list)
