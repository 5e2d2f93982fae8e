"""Temporal question grammar.

One place defines how each time-based test is worded (``phrases``), how
free text is read back into a test name plus slots (``parse_temporal``) and
which filter calls answer it (``plan_calls``). The question generator and
the scripted oracle both build on it.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from typing import Any, Sequence

from .table import CONTENT_COLUMN, FunctionCall
from .temporal import (
    DATE_PATTERN, MONTHS, NUMBER_PATTERN, WEEKDAYS, cardinal_word, format_date, format_time,
    last_weekday, month_bounds, ordinal_word, parse_date, parse_number, parse_time, shift_months,
)

TIME_TESTS = (
    "earlier_today", "date_span", "dates", "day_span", "last_day", "month",
    "rel_day", "rel_month", "rel_session", "session_span", "session",
)
TIME_CONTENT = "time_content"
ALL_TESTS = TIME_TESTS + (TIME_CONTENT,)

LEADS = (
    "what did we discuss {x}?",
    "what did we talk about {x}?",
    "can you remind me what we talked about {x}?",
)
PHRASE_DATE_STYLES = ("mdy_ordinal", "mdy", "dmy", "mdy_word")
AMBIGUOUS_DATE_STYLES = ("mdy_ordinal", "dmy")
SPAN_WIDTHS = {3: ("over the last three days", "over the past 3 days"),
               7: ("over the last week", "over the past seven days")}


@dataclass(frozen=True)
class NowContext:
    date: date
    time: time
    session: int

    @property
    def timestamp(self) -> datetime:
        return datetime.combine(self.date, self.time)

    def to_dict(self) -> dict[str, Any]:
        return {"date": self.date.isoformat(), "time": format_time(self.time), "session": self.session}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "NowContext":
        return cls(date.fromisoformat(data["date"]), parse_time(data["time"]), int(data["session"]))


def _plural(n: int, word: str) -> str:
    return f"{n} {word}" if n == 1 else f"{n} {word}s"


def phrases(test: str, slots: dict[str, Any], date_styles: Sequence[str] = PHRASE_DATE_STYLES) -> list[str]:
    """Wording variants of the temporal phrase for one question instance."""
    if test == "earlier_today":
        return ["earlier today"]
    if test == "session":
        n = slots["session"]
        return [f"in session {n}", f"in our {ordinal_word(n)} conversation"]
    if test == "session_span":
        a, b = slots["start"], slots["end"]
        return [f"between session {a} and session {b}",
                f"between conversation {cardinal_word(a)} and conversation {cardinal_word(b)}"]
    if test == "rel_session":
        return [f"{_plural(slots['sessions_ago'], 'session')} ago"]
    if test == "dates":
        d = date.fromisoformat(slots["date"])
        return [f"on {format_date(d, s)}" for s in date_styles]
    if test == "date_span":
        a, b = date.fromisoformat(slots["start"]), date.fromisoformat(slots["end"])
        return [f"between {format_date(a, s)} and {format_date(b, s)}" for s in date_styles]
    if test == "day_span":
        return list(SPAN_WIDTHS[slots["days"]])
    if test == "last_day":
        return [f"last {slots['weekday']}"]
    if test == "month":
        return [f"in {MONTHS[slots['month'] - 1]}, {slots['year']}"]
    if test == "rel_day":
        return [f"{_plural(slots['days_ago'], 'day')} ago"]
    if test == "rel_month":
        return [f"{_plural(slots['months_ago'], 'month')} ago"]
    raise ValueError(f"no phrases for test {test!r}")


def questions_for_phrase(phrase: str) -> list[str]:
    return [lead.format(x=phrase) for lead in LEADS]


# --- parsing -----------------------------------------------------------------

_N = NUMBER_PATTERN
_NOUN = r"(?:session|conversation|discussion|chat)s?"
_WEEKDAY = "|".join(w.lower() for w in WEEKDAYS)
_MONTH = "|".join(m.lower() for m in MONTHS)

_PATTERNS: list[tuple[str, re.Pattern]] = [
    ("earlier_today", re.compile(r"\bearlier today\b")),
    ("session_span", re.compile(
        rf"\bbetween (?:the )?{_NOUN} ({_N}) and (?:(?:the )?{_NOUN} )?({_N})\b")),
    ("session_span", re.compile(
        rf"\bbetween (?:our|the) ({_N}) and (?:our |the )?({_N}) {_NOUN}\b")),
    ("rel_session", re.compile(rf"\b({_N}) {_NOUN} ago\b")),
    ("rel_session", re.compile(rf"\b(?:the )?(last|previous) {_NOUN}\b")),
    ("rel_day", re.compile(rf"\b({_N}) days? ago\b")),
    ("rel_day", re.compile(r"\b(yesterday)\b")),
    ("rel_month", re.compile(rf"\b({_N}) months? ago\b")),
    ("rel_month", re.compile(r"\b(last month)\b")),
    ("day_span", re.compile(rf"\b(?:over|in|during) the (?:last|past) ({_N}) days\b")),
    ("day_span", re.compile(r"\b(?:over|in|during) the (?:last|past) (week)\b")),
    ("last_day", re.compile(rf"\blast ({_WEEKDAY})\b")),
    ("month", re.compile(rf"\b(?:in|during) ({_MONTH}),? (\d{{4}})\b")),
    ("date_span", re.compile(rf"\bbetween ({DATE_PATTERN}) and ({DATE_PATTERN})", re.IGNORECASE)),
    ("dates", re.compile(rf"\bon ({DATE_PATTERN})", re.IGNORECASE)),
    ("session", re.compile(rf"\b(?:in|during|from) {_NOUN} ({_N})\b")),
    ("session", re.compile(rf"\b(?:in|during|from) (?:our|the) ({_N}) {_NOUN}\b")),
]


@dataclass(frozen=True)
class TemporalMatch:
    test_name: str
    slots: dict[str, Any]
    span: tuple[int, int]


def _date_slot(text: str) -> str:
    return parse_date(text.strip()).isoformat()


def _slots(test: str, groups: Sequence[str]) -> dict[str, Any]:
    if test == "earlier_today":
        return {}
    if test == "session":
        return {"session": parse_number(groups[0])}
    if test == "session_span":
        return {"start": parse_number(groups[0]), "end": parse_number(groups[1])}
    if test == "rel_session":
        g = groups[0]
        return {"sessions_ago": 1 if g in ("last", "previous") else parse_number(g)}
    if test == "rel_day":
        return {"days_ago": 1 if groups[0] == "yesterday" else parse_number(groups[0])}
    if test == "rel_month":
        return {"months_ago": 1 if groups[0] == "last month" else parse_number(groups[0])}
    if test == "day_span":
        return {"days": 7 if groups[0] == "week" else parse_number(groups[0])}
    if test == "last_day":
        return {"weekday": groups[0].capitalize()}
    if test == "month":
        return {"year": int(groups[1]), "month": MONTHS.index(groups[0].capitalize()) + 1}
    if test == "date_span":
        return {"start": _date_slot(groups[0]), "end": _date_slot(groups[1])}
    if test == "dates":
        return {"date": _date_slot(groups[0])}
    raise ValueError(test)


def parse_temporal(text: str) -> TemporalMatch | None:
    """Find the first recognised temporal phrase in ``text``."""
    lowered = text.lower()
    best: TemporalMatch | None = None
    for test, pattern in _PATTERNS:
        source = text if pattern.flags & re.IGNORECASE else lowered
        for m in pattern.finditer(source):
            try:
                slots = _slots(test, m.groups())
            except ValueError:
                continue
            if best is None or m.start() < best.span[0]:
                best = TemporalMatch(test, slots, m.span())
            break
    return best


_GENERIC_RE = re.compile(
    r"^(?:(?:so|and|ok|okay|hey|hi)\s+)?(?:can|could|would|will) you (?:please )?"
    r"(?:remind me|tell me|summari[sz]e|recap|describe)(?: of)? (?:what|everything) (?:we|you and i) "
    r"(?:discussed|talked about|chatted about|covered)$"
    r"|^(?:please )?(?:remind me|tell me|summari[sz]e|recap) (?:what|everything) we (?:discussed|talked about)$"
    r"|^what (?:did|have) we (?:discuss|discussed|talk about|talked about|chat about|cover)$"
    r"|^what (?:were|was) (?:we|our) (?:talking about|discussion about|conversation about)$"
    r"|^what (?:did )?we (?:discussed|talked about)$"
)


def is_generic_remainder(text: str) -> bool:
    """True when the words outside the temporal phrase ask for nothing specific."""
    rest = re.sub(r"[^a-z ]+", " ", text.lower())
    rest = re.sub(r"\s+", " ", rest).strip()
    return bool(_GENERIC_RE.match(rest))


# --- plans -----------------------------------------------------------------

@dataclass(frozen=True)
class QueryPlan:
    needs_meta: bool
    needs_semantic: bool
    calls: tuple[FunctionCall, ...]
    test_name: str | None = None
    content_query: str | None = None


def _guard(now: NowContext) -> list[FunctionCall]:
    # windows that include today also include the ongoing session; keep only earlier ones
    if now.session <= 1:
        return []
    return [FunctionCall("f_between", "Session_Index", (1, now.session - 1))]


def _date_window(low: date, high: date, now: NowContext) -> list[FunctionCall]:
    call = (FunctionCall("f_value", "Date", (low,)) if low == high
            else FunctionCall("f_between", "Date", (low, high)))
    return [call] + (_guard(now) if low <= now.date <= high else [])


def plan_calls(test: str, slots: dict[str, Any], now: NowContext) -> list[FunctionCall]:
    """Filter calls selecting exactly the rows a time question asks about."""
    today = now.date
    if test == "session":
        return [FunctionCall("f_value", "Session_Index", (slots["session"],))]
    if test == "session_span":
        return [FunctionCall("f_between", "Session_Index", (slots["start"], slots["end"]))]
    if test == "rel_session":
        return [FunctionCall("f_value", "Session_Index", (now.session - slots["sessions_ago"],))]
    if test == "dates":
        d = date.fromisoformat(slots["date"])
        return _date_window(d, d, now)
    if test == "date_span":
        return _date_window(date.fromisoformat(slots["start"]), date.fromisoformat(slots["end"]), now)
    if test == "day_span":
        return _date_window(today - timedelta(days=slots["days"]), today, now)
    if test == "last_day":
        d = last_weekday(today, WEEKDAYS.index(slots["weekday"]))
        return _date_window(d, d, now)
    if test == "month":
        low, high = month_bounds(slots["year"], slots["month"])
        return _date_window(low, high, now)
    if test == "rel_day":
        d = today - timedelta(days=slots["days_ago"])
        return _date_window(d, d, now)
    if test == "rel_month":
        target = shift_months(today, -slots["months_ago"])
        low, high = month_bounds(target.year, target.month)
        return _date_window(low, high, now)
    if test == "earlier_today":
        return _date_window(today, today, now)
    if test == TIME_CONTENT:
        calls = []
        if slots.get("speaker"):
            calls.append(FunctionCall("f_value", "Speaker", (slots["speaker"],)))
        if slots.get("date"):
            d = date.fromisoformat(slots["date"])
            calls.extend(_date_window(d, d, now))
        elif slots.get("session"):
            calls.append(FunctionCall("f_value", "Session_Index", (slots["session"],)))
        return calls
    raise ValueError(f"unknown test {test!r}")


def plan_from_slots(test: str, slots: dict[str, Any], now: NowContext, query: str,
                    content_column: bool = False) -> QueryPlan:
    calls = plan_calls(test, slots, now)
    needs_meta = bool(calls)
    semantic = test == TIME_CONTENT
    if semantic and content_column:
        calls = calls + [FunctionCall("f_value", CONTENT_COLUMN, (query,))]
    return QueryPlan(needs_meta, semantic, tuple(calls), test, query if semantic else None)


def plan_free_text(query: str, now: NowContext, speakers: Sequence[str] = (),
                   content_column: bool = False) -> QueryPlan:
    """Rule-based reading of a query the oracle did not generate itself."""
    match = parse_temporal(query)
    speaker_hits = [s for s in speakers if re.search(rf"\b{re.escape(s)}\b", query, re.IGNORECASE)]
    if match is None and not speaker_hits:
        calls = (FunctionCall("f_value", CONTENT_COLUMN, (query,)),) if content_column else ()
        return QueryPlan(False, True, calls, None, query)
    calls: list[FunctionCall] = []
    if speaker_hits:
        calls.append(FunctionCall("f_value", "Speaker", tuple(speaker_hits)))
    test = None
    remainder = query
    if match is not None:
        test = match.test_name
        try:
            calls.extend(plan_calls(test, match.slots, now))
        except (ValueError, IndexError):
            pass
        remainder = query[: match.span[0]] + " " + query[match.span[1]:]
    semantic = bool(speaker_hits) or not is_generic_remainder(remainder)
    needs_meta = bool(calls)
    if semantic and content_column:
        calls.append(FunctionCall("f_value", CONTENT_COLUMN, (query,)))
    if semantic and test is not None:
        test = TIME_CONTENT
    return QueryPlan(needs_meta, semantic, tuple(calls), test, query if semantic else None)
