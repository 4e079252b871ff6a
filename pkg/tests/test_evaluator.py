from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bearing_vit import evaluator as ev
from bearing_vit.errors import EmptyInput, IdOutOfRange, LengthMismatch
from bearing_vit.trainer import TrainHistory


def test_perfect_accuracy():
    assert ev.accuracy([0, 1, 2, 1], [0, 1, 2, 1]) == 100.0


def test_half_accuracy():
    assert ev.accuracy([0, 0, 1, 1], [0, 1, 0, 1]) == 50.0


def test_small_confusion():
    cm = ev.confusion([0, 1, 1], [0, 0, 1], 2)
    assert cm.counts.tolist() == [[1, 1], [0, 1]]
    assert cm.overall_accuracy() == pytest.approx(200 / 3, rel=0, abs=1e-12)


def test_accuracy_equals_confusion_trace_over_random_cases():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(1, 15))
        n = int(rng.integers(1, 60))
        labels = rng.integers(0, k, n)
        preds = np.where(rng.random(n) < 0.7, labels, rng.integers(0, k, n))
        cm = ev.confusion(preds, labels, k)
        assert cm.total == n
        assert abs(ev.accuracy(preds, labels) - 100 * cm.trace / cm.total) < 1e-12


@given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=1, max_size=50), st.randoms())
def test_accuracy_is_permutation_invariant(pairs, rnd):
    preds, labels = map(list, zip(*pairs))
    shuffled = pairs[:]
    rnd.shuffle(shuffled)
    sp, sl = map(list, zip(*shuffled))
    assert ev.accuracy(preds, labels) == ev.accuracy(sp, sl)
    assert np.array_equal(ev.confusion(preds, labels, 5).counts, ev.confusion(sp, sl, 5).counts)


def test_per_class_accuracy_with_absent_class():
    labels = [0] * 5 + [2] * 2
    preds = [0, 0, 0, 0, 1, 2, 2]
    assert ev.per_class_accuracy(ev.confusion(preds, labels, 3)) == [80.0, None, 100.0]


@pytest.mark.parametrize(
    "preds, labels, exc",
    [([0, 1], [0], LengthMismatch), ([], [], EmptyInput)],
)
def test_accuracy_errors(preds, labels, exc):
    with pytest.raises(exc):
        ev.accuracy(preds, labels)


def test_confusion_id_range():
    with pytest.raises(IdOutOfRange):
        ev.confusion([0, 3], [0, 1], 3)
    with pytest.raises(IdOutOfRange):
        ev.confusion([0, 1], [-1, 1], 3)


def test_csv_round_trip():
    cm = ev.confusion([0, 2, 1, 1, 0], [0, 2, 2, 1, 1], 3, ["N", "7_IR", "7_BA"])
    text = ev.confusion_csv(cm)
    assert text.splitlines()[0] == "true\\pred,N,7_IR,7_BA"
    back = ev.parse_confusion_csv(text)
    assert back.class_names == cm.class_names
    assert np.array_equal(back.counts, cm.counts)


def test_export_is_byte_identical(tmp_path: Path):
    cm = ev.confusion([0, 1, 1, 0], [0, 1, 0, 0], 2, ["N", "7_IR"])
    hist = TrainHistory()
    hist.append(0.5, 0.6, 75.0, 50.0)
    overall = ev.accuracy([0, 1, 1, 0], [0, 1, 0, 0])
    a = ev.export_report(cm, hist, overall, tmp_path / "a", config_hash="abc")
    b = ev.export_report(cm, hist, overall, tmp_path / "b", config_hash="abc")
    assert [p.name for p in a] == ["confusion.csv", "summary.txt", "history.csv", "confusion.pgm"]
    for pa, pb in zip(a, b):
        assert pa.read_bytes() == pb.read_bytes()
    summary = (tmp_path / "a" / "summary.txt").read_text()
    assert "overall_accuracy_pct = 75.0" in summary
    assert "class.N.accuracy_pct = 66.66666666666667" in summary
    assert "config_hash = abc" in summary


def test_heatmap_pixels(tmp_path: Path):
    cm = ev.confusion([0, 1, 1, 0], [0, 1, 0, 0], 2)
    ev.export_report(cm, None, 75.0, tmp_path)
    data = (tmp_path / "confusion.pgm").read_bytes()
    header = b"P5\n2 2\n255\n"
    assert data[: len(header)] == header
    assert list(data[len(header):]) == [170, 85, 0, 255]
