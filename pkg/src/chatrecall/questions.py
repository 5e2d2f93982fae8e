"""Benchmark question sets: time-based, ambiguous and time+content questions."""
from __future__ import annotations

import itertools
import json
import random
import re
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Any, Callable, Iterable, Iterator, Sequence

from .chatlog import ConversationSet, GroundTruthError, Response
from .grammar import (
    AMBIGUOUS_DATE_STYLES, TIME_CONTENT, TIME_TESTS, NowContext, phrases, questions_for_phrase,
)
from .temporal import WEEKDAYS, last_weekday, months_between

CLOCK_ADVANCE_MINUTES = 50
DATE_SPAN_LIMIT = 15
SESSION_SPAN_WIDTH = 3
QUESTION_FILE_FORMAT = "chatrecall.questions"
QUESTION_FILE_VERSION = 1

# context templates for ambiguous questions; {x} is the temporal phrase
CONTEXT_TEMPLATES: dict[int, tuple[tuple[str, str], ...]] = {
    1: (
        ("a", "I see in my calendar that we talked {x}."),
        ("b", "Yes! we did talk then. I always enjoy our chats."),
        ("a", "I enjoy them too! Can you summarize what we discussed?"),
    ),
    2: (
        ("a", "I am try to remember what we talked about {x}. Can you remember that far back?"),
        ("b", "Yes, I can remember that far back."),
        ("a", "Wow! You have a better memory than me!"),
        ("b", "I don't know about that! But I can summarize our discussion for you if you'd like."),
        ("a", "Yes, please do."),
    ),
    3: (
        ("a", "I remember {x} we had several discussions."),
        ("b", "Yes, we did."),
        ("a", "But I cannot quite remember what we discussed."),
        ("b", "Would you like me to tell you?"),
        ("a", "Yes, could you describe, in as much detail as you can, the content of those conversations?"),
    ),
}
CONTEXT_PATTERNS = (
    re.compile(r"I see in my calendar that we talked (.+?)\.(?:\s|$)"),
    re.compile(r"I am try to remember what we talked about (.+?)\. Can you remember"),
    re.compile(r"I remember (.+?) we had several discussions\."),
)


@dataclass(frozen=True)
class Question:
    id: str
    set_id: str
    test_name: str
    query: str
    relevant_indices: tuple[int, ...]
    now: NowContext
    variant_id: int = 0
    base_id: int = 0
    context_turns: tuple[tuple[str, str], ...] = ()
    template_slots: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def ambiguous(self) -> bool:
        return bool(self.context_turns)

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "set_id": self.set_id,
            "test_name": self.test_name,
            "query": self.query,
            "variant_id": self.variant_id,
            "base_id": self.base_id,
            "context_turns": [list(t) for t in self.context_turns],
            "template_slots": self.template_slots,
            "relevant_indices": list(self.relevant_indices),
            "now": self.now.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Question":
        return cls(
            id=data["id"],
            set_id=data["set_id"],
            test_name=data["test_name"],
            query=data["query"],
            relevant_indices=tuple(int(i) for i in data["relevant_indices"]),
            now=NowContext.from_dict(data["now"]),
            variant_id=int(data.get("variant_id", 0)),
            base_id=int(data.get("base_id", 0)),
            context_turns=tuple(tuple(t) for t in data.get("context_turns", ())),
            template_slots=dict(data.get("template_slots", {})),
        )


@dataclass
class QuestionSet:
    set_id: str
    questions: list[Question] = field(default_factory=list)
    notes: dict[str, str] = field(default_factory=dict)

    def by_test(self) -> dict[str, list[Question]]:
        grouped: dict[str, list[Question]] = {}
        for q in self.questions:
            grouped.setdefault(q.test_name, []).append(q)
        return grouped

    def counts(self) -> dict[str, dict[str, int]]:
        """Base-question and all-variant counts per test."""
        base = Counter()
        full = Counter()
        seen = set()
        for q in self.questions:
            full[q.test_name] += 1
            key = (q.test_name, q.base_id)
            if key not in seen:
                seen.add(key)
                base[q.test_name] += 1
        return {t: {"base": base[t], "full": full[t]} for t in sorted(full)}

    def __iter__(self) -> Iterator[Question]:
        return iter(self.questions)

    def __len__(self) -> int:
        return len(self.questions)


def advance_clock(conv: ConversationSet, minutes: int = CLOCK_ADVANCE_MINUTES) -> NowContext:
    """Question time: 50 minutes after the final response, still in the final session."""
    if not conv.responses:
        raise ValueError("conversation set is empty")
    last = conv.responses[-1]
    now = last.timestamp + timedelta(minutes=minutes)
    return NowContext(now.date(), now.time(), last.session_index)


# --- enumeration with brute-force ground truth ---------------------------------

Instance = tuple[dict[str, Any], Callable[[Response], bool]]


def _instances(test: str, real: Sequence[Response], now: NowContext, rng: random.Random) -> list[Instance]:
    today = now.date
    sessions = sorted({r.session_index for r in real})
    dates = sorted({r.date for r in real})
    months = sorted({(d.year, d.month) for d in dates})

    if test == "session":
        return [({"session": s}, lambda r, s=s: r.session_index == s) for s in sessions]
    if test == "session_span":
        return [({"start": s, "end": s + SESSION_SPAN_WIDTH},
                 lambda r, a=s, b=s + SESSION_SPAN_WIDTH: a <= r.session_index <= b)
                for s in sessions if s + SESSION_SPAN_WIDTH in sessions]
    if test == "rel_session":
        return [({"sessions_ago": now.session - s}, lambda r, s=s: r.session_index == s)
                for s in reversed(sessions) if s < now.session]
    if test == "dates":
        return [({"date": d.isoformat()}, lambda r, d=d: r.date == d) for d in dates]
    if test == "date_span":
        pairs = list(itertools.combinations(dates, 2))
        if len(pairs) > DATE_SPAN_LIMIT:
            pairs = sorted(rng.sample(pairs, DATE_SPAN_LIMIT))
        return [({"start": a.isoformat(), "end": b.isoformat()}, lambda r, a=a, b=b: a <= r.date <= b)
                for a, b in pairs]
    if test == "day_span":
        return [({"days": w}, lambda r, w=w: today - timedelta(days=w) <= r.date <= today) for w in (3, 7)]
    if test == "last_day":
        out = []
        for wd in range(7):
            d = last_weekday(today, wd)
            out.append(({"weekday": WEEKDAYS[wd]}, lambda r, d=d: r.date == d))
        return sorted(out, key=lambda inst: last_weekday(today, WEEKDAYS.index(inst[0]["weekday"])), reverse=True)
    if test == "month":
        return [({"year": y, "month": m}, lambda r, y=y, m=m: (r.date.year, r.date.month) == (y, m))
                for y, m in months]
    if test == "rel_day":
        return [({"days_ago": (today - d).days}, lambda r, d=d: r.date == d) for d in reversed(dates) if d < today]
    if test == "rel_month":
        out = []
        for y, m in reversed(months):
            n = months_between(date(y, m, 1), today)
            if n >= 1:
                out.append(({"months_ago": n}, lambda r, n=n: months_between(r.date, today) == n))
        return out
    if test == "earlier_today":
        return [({}, lambda r: r.date == today)]
    raise ValueError(f"unknown test {test!r}")


def generate_time_questions(
    conv: ConversationSet,
    tests: Sequence[str] = TIME_TESTS,
    seed: int = 0,
    now: NowContext | None = None,
) -> QuestionSet:
    """Every valid instantiation of each time template, with all wording variants.

    Ground truth is the set of non-padding rows satisfying the template's
    temporal predicate, evaluated directly over the responses. Instances
    with no matching rows are skipped.
    """
    now = now or advance_clock(conv)
    real = conv.real_responses
    out = QuestionSet(conv.set_id)
    for test in tests:
        rng = random.Random(f"{seed}:{conv.set_id}:{test}")
        base_id = 0
        for slots, predicate in _instances(test, real, now, rng):
            relevant = tuple(r.response_index for r in real if predicate(r))
            if not relevant:
                continue
            variant = 0
            for phrase in phrases(test, slots):
                for text in questions_for_phrase(phrase):
                    out.questions.append(Question(
                        id=f"{conv.set_id}:{test}:{base_id:04d}:{variant:02d}",
                        set_id=conv.set_id,
                        test_name=test,
                        query=text,
                        relevant_indices=relevant,
                        now=now,
                        variant_id=variant,
                        base_id=base_id,
                        template_slots={**slots, "phrase": phrase},
                    ))
                    variant += 1
            base_id += 1
        if base_id == 0:
            out.notes[test] = "no applicable instance in this conversation set"
    return out


def generate_ambiguous_questions(conv: ConversationSet, unambiguous: QuestionSet | None = None) -> QuestionSet:
    """Wrap each base time question in the three context templates, once per phrase variant.

    Dates are phrased in two styles here rather than four.
    """
    unambiguous = unambiguous or generate_time_questions(conv)
    speakers = (list(conv.speakers) + ["speaker_a", "speaker_b"])[:2]
    names = {"a": speakers[0], "b": speakers[1]}
    out = QuestionSet(conv.set_id, notes=dict(unambiguous.notes))
    seen: set[tuple[str, int]] = set()
    for q in unambiguous:
        if (q.test_name, q.base_id) in seen:
            continue
        seen.add((q.test_name, q.base_id))
        slots = {k: v for k, v in q.template_slots.items() if k != "phrase"}
        v = 0
        for phrase in phrases(q.test_name, slots, AMBIGUOUS_DATE_STYLES):
            for template_id, turns in CONTEXT_TEMPLATES.items():
                rendered = tuple((names[who], text.format(x=phrase)) for who, text in turns)
                out.questions.append(Question(
                    id=f"{conv.set_id}:{q.test_name}:amb{q.base_id:04d}:{v:02d}",
                    set_id=conv.set_id,
                    test_name=q.test_name,
                    query=rendered[-1][1],
                    relevant_indices=q.relevant_indices,
                    now=q.now,
                    variant_id=v,
                    base_id=q.base_id,
                    context_turns=rendered[:-1],
                    template_slots={**slots, "phrase": phrase, "context_template": template_id},
                ))
                v += 1
    return out


def extract_context_phrase(turns: Sequence[tuple[str, str]] | str) -> str | None:
    """Temporal phrase embedded in a context template, if any."""
    text = turns if isinstance(turns, str) else " ".join(t for _, t in turns)
    for pattern in CONTEXT_PATTERNS:
        m = pattern.search(text)
        if m:
            return m.group(1)
    return None


# --- time+content --------------------------------------------------------

class QuestionValidationError(ValueError):
    def __init__(self, problems: dict[str, list[str]]):
        self.problems = problems
        lines = [f"{qid}: {'; '.join(p)}" for qid, p in problems.items()]
        super().__init__("invalid questions:\n" + "\n".join(lines))


_QUERY_KEYS = ("query", "question", "q")
_INDEX_KEYS = ("relevant_indices", "relevant", "responses", "answer_indices", "evidence")


def _first(record: dict[str, Any], keys: Sequence[str]) -> Any:
    for k in keys:
        if k in record:
            return record[k]
    return None


def validate_time_content(question: Question, conv: ConversationSet) -> list[str]:
    problems = []
    try:
        conv.validate_ground_truth(question.relevant_indices)
    except GroundTruthError as exc:
        return [str(exc)]
    slots = question.template_slots
    rows = [conv.responses[i] for i in question.relevant_indices]
    speaker = slots.get("speaker")
    if speaker and any(r.speaker != speaker for r in rows):
        problems.append(f"relevant responses not all spoken by {speaker}")
    if slots.get("date"):
        d = date.fromisoformat(slots["date"])
        if any(r.date != d for r in rows):
            problems.append(f"relevant responses not all dated {d}")
    if slots.get("session") and any(r.session_index != int(slots["session"]) for r in rows):
        problems.append(f"relevant responses not all in session {slots['session']}")
    return problems


def load_time_content_questions(path: str | Path, conv: ConversationSet, strict: bool = True) -> QuestionSet:
    """Read a line-delimited (or JSON list) time+content file and validate it against ``conv``."""
    now = advance_clock(conv)
    records = [r for r in _read_records(path) if r.get("format") != QUESTION_FILE_FORMAT]
    out = QuestionSet(conv.set_id)
    problems: dict[str, list[str]] = {}
    for i, rec in enumerate(records):
        if rec.get("set_id", conv.set_id) != conv.set_id:
            continue
        slots = dict(rec.get("template_slots") or rec.get("slots") or {})
        for key in ("speaker", "date", "session", "topic"):
            if key in rec and key not in slots:
                slots[key] = rec[key]
        if slots.get("date"):
            slots["date"] = date.fromisoformat(str(slots["date"])).isoformat()
        q = Question(
            id=str(rec.get("id", f"{conv.set_id}:{TIME_CONTENT}:{i:04d}:00")),
            set_id=conv.set_id,
            test_name=TIME_CONTENT,
            query=_first(rec, _QUERY_KEYS),
            relevant_indices=tuple(int(x) for x in (_first(rec, _INDEX_KEYS) or ())),
            now=now,
            base_id=i,
            template_slots=slots,
        )
        found = validate_time_content(q, conv)
        if not q.query:
            found.append("missing query text")
        if found:
            problems[q.id] = found
        else:
            out.questions.append(q)
    if problems and strict:
        raise QuestionValidationError(problems)
    out.notes.update({qid: "; ".join(p) for qid, p in problems.items()})
    return out


# --- files -----------------------------------------------------------------

def _read_records(path: str | Path) -> list[dict[str, Any]]:
    text = Path(path).read_text(encoding="utf-8").strip()
    if not text:
        return []
    if text.startswith("["):
        return json.loads(text)
    return [json.loads(line) for line in text.splitlines() if line.strip()]


def write_questions(questions: Iterable[Question], path: str | Path, set_id: str, test_name: str) -> None:
    header = {"format": QUESTION_FILE_FORMAT, "version": QUESTION_FILE_VERSION,
              "set_id": set_id, "test_name": test_name}
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(q.to_dict(), sort_keys=True, ensure_ascii=False) for q in questions]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_questions(path: str | Path) -> list[Question]:
    records = _read_records(path)
    if records and records[0].get("format") == QUESTION_FILE_FORMAT:
        version = records[0].get("version")
        if version != QUESTION_FILE_VERSION:
            raise ValueError(f"unsupported question file version {version!r}")
        records = records[1:]
    return [Question.from_dict(r) for r in records]


def question_file_name(set_id: str, test_name: str, ambiguous: bool = False) -> str:
    return f"{set_id}.{test_name}{'.ambiguous' if ambiguous else ''}.jsonl"


def expected_base_counts(conv: ConversationSet, now: NowContext | None = None) -> dict[str, int]:
    """Closed-form base-question counts from the log's session and date structure.

    Kept separate from the enumeration above so the two can be checked
    against each other.
    """
    now = now or advance_clock(conv)
    real = conv.real_responses
    sessions = {r.session_index for r in real}
    dates = {r.date for r in real}
    months = {(d.year, d.month) for d in dates}
    today = now.date
    n_dates = len(dates)
    return {
        "session": len(sessions),
        "session_span": sum(1 for s in sessions if s + SESSION_SPAN_WIDTH in sessions),
        "rel_session": sum(1 for s in sessions if s < now.session),
        "dates": n_dates,
        "date_span": min(DATE_SPAN_LIMIT, n_dates * (n_dates - 1) // 2),
        "month": len(months),
        "rel_month": sum(1 for m in months if m < (today.year, today.month)),
        "rel_day": sum(1 for d in dates if d < today),
        "day_span": sum(1 for w in (3, 7) if any(today - timedelta(days=w) <= d <= today for d in dates)),
        "last_day": sum(1 for wd in range(7) if last_weekday(today, wd) in dates),
        "earlier_today": int(today in dates),
    }
