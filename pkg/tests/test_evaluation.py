import csv
import io
import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from chatrecall.evaluation import (
    aggregate, classifier_accuracy, f2_score, format_report, report_csv, report_from_traces, report_json, score,
)

# (retrieved, relevant) -> (recall, precision, F2), computed by hand with exact fractions
ORACLE = [
    (range(10), range(5, 15), (Fraction(1, 2), Fraction(1, 2), Fraction(1, 2))),
    (range(4), range(2), (Fraction(1), Fraction(1, 2), Fraction(5, 6))),
    ([], [1, 2], (Fraction(0), Fraction(0), Fraction(0))),
    ([7, 8], [1], (Fraction(0), Fraction(0), Fraction(0))),
    ([1, 2, 3], [1, 2, 3], (Fraction(1), Fraction(1), Fraction(1))),
    ([1], [1, 2, 3, 4], (Fraction(1, 4), Fraction(1), Fraction(5, 17))),
]


@pytest.mark.parametrize("retrieved, relevant, expected", ORACLE)
def test_scores_match_oracle(retrieved, relevant, expected):
    s = score(retrieved, relevant)
    assert (s.recall, s.precision, s.f2) == pytest.approx(tuple(float(x) for x in expected), abs=1e-12)


def test_empty_relevant_is_rejected():
    with pytest.raises(ValueError):
        score([1], [])


def test_headline_weights_tests_equally():
    scored = [score([1], [1], "a1", "session")] + [score([1], [1, 2], f"b{i}", "dates") for i in range(9)]
    report = aggregate(scored)
    assert report.tests["session"].recall == 1.0 and report.tests["dates"].recall == 0.5
    assert report.headline["recall"] == pytest.approx(0.75)
    assert report.to_dict()["headline"]["recall"] == 75.0


def test_time_content_is_kept_out_of_the_headline():
    scored = [score([1], [1], "a", "session"), score([], [1], "b", "time_content")]
    report = aggregate(scored)
    assert report.headline["recall"] == 1.0
    assert report.time_content.recall == 0.0


probs = st.floats(0, 1, allow_nan=False)


@given(probs, probs)
def test_f2_bounds(p, r):
    f = f2_score(p, r)
    # a weighted harmonic mean sits between its inputs
    assert min(p, r) - 1e-12 <= f <= max(p, r) + 1e-12


@given(probs, probs, probs)
def test_f2_monotone_in_recall(p, r1, r2):
    lo, hi = sorted((r1, r2))
    assert f2_score(p, lo) <= f2_score(p, hi) + 1e-12


@given(st.sets(st.integers(0, 40)), st.sets(st.integers(0, 40), min_size=1), st.randoms())
def test_order_and_duplicates_do_not_matter(retrieved, relevant, rnd):
    a = list(retrieved)
    rnd.shuffle(a)
    assert score(a + a, list(relevant)) == score(sorted(retrieved), sorted(relevant))


def _trace(qid, test, meta, semantic, retrieved=(1,), relevant=(1,)):
    return {"question_id": qid, "test_name": test, "classification": {"meta": meta, "semantic": semantic},
            "retrieved": list(retrieved), "relevant": list(relevant)}


def test_classifier_accuracy_on_mixed_fixture():
    traces = [
        _trace("1", "session", True, False), _trace("2", "session", True, True),
        _trace("3", "dates", True, False), _trace("4", "dates", False, True),
        _trace("5", "time_content", True, True), _trace("6", "time_content", True, False),
        _trace("7", "time_content", None, None),
    ]
    stats = classifier_accuracy(traces)
    assert (stats["session"].correct, stats["session"].n) == (1, 2)
    assert stats["dates"].confusion == {"yn": 1, "ny": 1}
    assert stats["time_content"].n == 2 and stats["time_content"].accuracy == 0.5


def test_latest_trace_wins():
    traces = [_trace("q", "session", True, False, (2,)), _trace("q", "session", True, False, (1,))]
    report = report_from_traces(traces)
    assert report.tests["session"].n == 1 and report.tests["session"].recall == 1.0


def test_report_formats():
    traces = [_trace("a", "session", True, False), _trace("b", "dates", True, False, (1, 2), (2,)),
              _trace("c", "time_content", True, True, (), (3,))]
    report = report_from_traces(traces, {"kind": "cotable_semantic"})
    data = json.loads(report_json(report))
    assert data["tests"]["dates"]["precision"] == 50.0 and data["classifier"]["session"]["accuracy"] == 100.0
    rows = list(csv.DictReader(io.StringIO(report_csv(report))))
    assert [r["test"] for r in rows] == ["dates", "session", "time_content"]
    text = format_report(report)
    assert "time average" in text and "kind=cotable_semantic" in text
    assert text.index("session") < text.index("time_content")
