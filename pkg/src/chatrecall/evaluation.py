"""Recall / precision / F2 scoring, per-test aggregation, classifier accuracy and reports."""
from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Sequence

from .grammar import TIME_CONTENT, TIME_TESTS

# expected (needs_meta, needs_semantic) per question type
CLASSIFIER_LABELS = {**{t: (True, False) for t in TIME_TESTS}, TIME_CONTENT: (True, True)}


@dataclass(frozen=True)
class ScoredQuestion:
    question_id: str
    test_name: str
    recall: float
    precision: float
    f2: float
    retrieved_count: int
    relevant_count: int


def f2_score(precision: float, recall: float) -> float:
    if precision == 0 and recall == 0:
        return 0.0
    return 5 * precision * recall / (4 * precision + recall)


def score(retrieved: Iterable[int], relevant: Iterable[int], question_id: str = "",
          test_name: str = "") -> ScoredQuestion:
    got = set(retrieved)
    want = set(relevant)
    if not want:
        raise ValueError("recall is undefined without relevant responses")
    hits = len(got & want)
    recall = hits / len(want)
    precision = hits / len(got) if got else 0.0
    return ScoredQuestion(question_id, test_name, recall, precision, f2_score(precision, recall),
                          len(got), len(want))


@dataclass(frozen=True)
class TestSummary:
    test_name: str
    n: int
    recall: float
    recall_std: float
    precision: float
    precision_std: float
    f2: float
    f2_std: float


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    return statistics.fmean(values), statistics.pstdev(values)


def summarize(test_name: str, scored: Sequence[ScoredQuestion]) -> TestSummary:
    r = _mean_std([s.recall for s in scored])
    p = _mean_std([s.precision for s in scored])
    f = _mean_std([s.f2 for s in scored])
    return TestSummary(test_name, len(scored), r[0], r[1], p[0], p[1], f[0], f[1])


@dataclass
class ClassifierStats:
    n: int = 0
    correct: int = 0
    # keys like "yn": meta answered y, semantic answered n
    confusion: dict[str, int] = field(default_factory=dict)

    @property
    def accuracy(self) -> float:
        return self.correct / self.n if self.n else 0.0


@dataclass
class RunReport:
    tests: dict[str, TestSummary]
    headline: dict[str, float]
    classifier: dict[str, ClassifierStats] = field(default_factory=dict)
    mode: dict[str, Any] = field(default_factory=dict)

    @property
    def time_content(self) -> TestSummary | None:
        return self.tests.get(TIME_CONTENT)

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "headline": {k: round(v * 100, 4) for k, v in self.headline.items()},
            "tests": {name: _scaled(s) for name, s in sorted(self.tests.items())},
            "classifier": {
                name: {"n": c.n, "correct": c.correct, "accuracy": round(c.accuracy * 100, 4),
                       "confusion": dict(sorted(c.confusion.items()))}
                for name, c in sorted(self.classifier.items())
            },
        }


def _scaled(s: TestSummary) -> dict[str, Any]:
    d = asdict(s)
    for key in ("recall", "recall_std", "precision", "precision_std", "f2", "f2_std"):
        d[key] = round(d[key] * 100, 4)
    return d


def aggregate(scored: Iterable[ScoredQuestion], mode: dict[str, Any] | None = None,
              classifier: dict[str, ClassifierStats] | None = None) -> RunReport:
    """Per-test means and a headline that weights every test equally.

    The headline averages the per-test means of every test except
    time+content, which is reported on its own row.
    """
    grouped: dict[str, list[ScoredQuestion]] = {}
    for s in scored:
        grouped.setdefault(s.test_name, []).append(s)
    tests = {name: summarize(name, items) for name, items in grouped.items()}
    headline_tests = [t for name, t in tests.items() if name != TIME_CONTENT]
    headline = {}
    if headline_tests:
        headline = {
            "recall": statistics.fmean(t.recall for t in headline_tests),
            "precision": statistics.fmean(t.precision for t in headline_tests),
            "f2": statistics.fmean(t.f2 for t in headline_tests),
        }
    return RunReport(tests, headline, classifier or {}, mode or {})


def classifier_accuracy(traces: Iterable[dict[str, Any]]) -> dict[str, ClassifierStats]:
    out: dict[str, ClassifierStats] = {}
    for t in traces:
        cls = t.get("classification") or {}
        meta, semantic = cls.get("meta"), cls.get("semantic")
        label = CLASSIFIER_LABELS.get(t["test_name"])
        if meta is None or semantic is None or label is None:
            continue
        stats = out.setdefault(t["test_name"], ClassifierStats())
        stats.n += 1
        stats.correct += (meta, semantic) == label
        key = ("y" if meta else "n") + ("y" if semantic else "n")
        stats.confusion[key] = stats.confusion.get(key, 0) + 1
    return out


def score_traces(traces: Iterable[dict[str, Any]]) -> list[ScoredQuestion]:
    return [score(t["retrieved"], t["relevant"], t["question_id"], t["test_name"]) for t in traces]


def report_from_traces(traces: Sequence[dict[str, Any]], mode: dict[str, Any] | None = None) -> RunReport:
    # the latest record per question wins, so resumed runs never double count
    latest = {t["question_id"]: t for t in traces}
    ordered = [latest[k] for k in sorted(latest)]
    return aggregate(score_traces(ordered), mode, classifier_accuracy(ordered))


def _order(names: Iterable[str]) -> list[str]:
    rank = {name: i for i, name in enumerate(sorted(TIME_TESTS) + [TIME_CONTENT])}
    return sorted(names, key=lambda n: (rank.get(n, len(rank)), n))


def format_report(report: RunReport) -> str:
    lines = []
    if report.mode:
        lines.append("mode: " + ", ".join(f"{k}={v}" for k, v in report.mode.items()))
    lines.append(f"{'test':<15}{'n':>6}  {'recall':>14}  {'precision':>14}  {'F2':>14}")
    for name in _order(report.tests):
        s = report.tests[name]
        if name == TIME_CONTENT:
            lines.append("-" * 69)
        lines.append(
            f"{name:<15}{s.n:>6}  {s.recall * 100:7.2f} ±{s.recall_std * 100:5.2f}  "
            f"{s.precision * 100:7.2f} ±{s.precision_std * 100:5.2f}  {s.f2 * 100:7.2f} ±{s.f2_std * 100:5.2f}"
        )
    if report.headline:
        h = report.headline
        lines.append(f"{'time average':<21}  {h['recall'] * 100:7.2f}         {h['precision'] * 100:7.2f}"
                     f"         {h['f2'] * 100:7.2f}")
    if report.classifier:
        lines.append("")
        lines.append("classifier accuracy (meta, semantic):")
        for name in _order(report.classifier):
            c = report.classifier[name]
            lines.append(f"  {name:<15}{c.accuracy * 100:7.2f}  ({c.correct}/{c.n})")
    return "\n".join(lines)


def report_csv(report: RunReport) -> str:
    """Plot-ready per-test rows on the 0-100 scale."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["test", "n", "recall", "recall_std", "precision", "precision_std", "f2", "f2_std"])
    for name in _order(report.tests):
        s = _scaled(report.tests[name])
        writer.writerow([name, s["n"], s["recall"], s["recall_std"], s["precision"], s["precision_std"],
                         s["f2"], s["f2_std"]])
    return buf.getvalue()


def report_json(report: RunReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True)
