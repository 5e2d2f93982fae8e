"""Columnar chat table with the two row-selection functions used in a chain of table calls."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field, replace
from datetime import date, datetime, time
from typing import Callable, Iterable, Sequence, Union

from .chatlog import ConversationSet, Response
from .temporal import WEEKDAYS, find_dates, format_time, is_number, parse_date, parse_number, parse_time

logger = logging.getLogger(__name__)

COLUMNS = ("Response_Index", "Session_Index", "Speaker", "Day_Name", "Week", "Date", "Time")
CONTENT_COLUMN = "Content"
INT_COLUMNS = frozenset({"Response_Index", "Session_Index", "Week"})
TEXT_COLUMNS = frozenset({"Speaker", "Day_Name"})
ORDERED_COLUMNS = frozenset({"Response_Index", "Session_Index", "Week", "Date", "Time"})
DEFAULT_MAX_FILTERS = 5
DEFAULT_CONTENT_K = 10

CellValue = Union[int, str, date, time, datetime]
# (query text, candidate response indices, k) -> ranked response indices
ContentSearch = Callable[[str, Sequence[int], int], list[int]]


class ChainError(Exception):
    """A function call that cannot be applied to the table."""

    def __init__(self, kind: str, message: str, step: int | None = None):
        self.kind = kind
        self.step = step
        super().__init__(f"{kind}: {message}" + (f" (step {step})" if step is not None else ""))


class ParseError(ValueError):
    def __init__(self, raw: str, reason: str = "unparseable function call"):
        self.raw = raw
        self.reason = reason
        super().__init__(f"{reason}: {raw!r}")


def _value_tag(value: CellValue) -> str:
    if isinstance(value, bool):
        return "bool"
    if isinstance(value, int):
        return "int"
    if isinstance(value, str):
        return "text"
    if isinstance(value, datetime):
        return "datetime"
    if isinstance(value, date):
        return "date"
    if isinstance(value, time):
        return "time"
    return type(value).__name__


def _column_accepts(column: str, value: CellValue) -> bool:
    tag = _value_tag(value)
    if column in INT_COLUMNS:
        return tag == "int"
    if column in TEXT_COLUMNS or column == CONTENT_COLUMN:
        return tag == "text"
    if column == "Date":
        return tag == "date"
    if column == "Time":
        return tag in ("time", "datetime")
    return False


def cell(response: Response, column: str) -> CellValue:
    if column == "Response_Index":
        return response.response_index
    if column == "Session_Index":
        return response.session_index
    if column == "Speaker":
        return response.speaker
    if column == "Day_Name":
        return response.day_name
    if column == "Week":
        return response.week
    if column == "Date":
        return response.date
    if column == "Time":
        return response.time
    if column == CONTENT_COLUMN:
        return response.text
    raise KeyError(column)


@dataclass(frozen=True)
class ChatTable:
    """Immutable row subset of one conversation set.

    ``pinned_date`` records a single-date equality filter applied earlier,
    which lets bare time-of-day ranges be compared within that day.
    """

    rows: tuple[Response, ...]
    content_search: ContentSearch | None = field(default=None, compare=False, repr=False)
    pinned_date: date | None = None
    content_k: int = DEFAULT_CONTENT_K

    @classmethod
    def from_conversation(cls, conv: ConversationSet, content_search: ContentSearch | None = None,
                          content_k: int = DEFAULT_CONTENT_K) -> "ChatTable":
        return cls(conv.responses, content_search, None, content_k)

    @property
    def columns(self) -> tuple[str, ...]:
        return COLUMNS + ((CONTENT_COLUMN,) if self.content_search is not None else ())

    @property
    def ids(self) -> list[int]:
        return [r.response_index for r in self.rows]

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list[CellValue]:
        self._check_column(name)
        return [cell(r, name) for r in self.rows]

    def header(self) -> str:
        return " | ".join(self.columns)

    def _check_column(self, name: str) -> None:
        if name not in self.columns:
            raise ChainError("UnknownColumn", f"no column {name!r}")

    def _subset(self, rows: Iterable[Response], **changes) -> "ChatTable":
        return replace(self, rows=tuple(rows), **changes)


def f_value(table: ChatTable, column: str, values: Sequence[CellValue]) -> ChatTable:
    """Rows whose ``column`` equals at least one of ``values``."""
    table._check_column(column)
    if not values:
        raise ChainError("EmptyValues", f"f_value({column}) needs at least one value")
    for v in values:
        if not _column_accepts(column, v):
            raise ChainError("TypeMismatch", f"{v!r} is not a valid {column} value")
    if column == CONTENT_COLUMN:
        return _content_filter(table, [str(v) for v in values])
    if column == "Time":
        minutes = {(v.hour, v.minute) for v in values if isinstance(v, time)}
        stamps = {v.replace(second=0, microsecond=0) for v in values if isinstance(v, datetime)}
        keep = [r for r in table.rows
                if (r.time.hour, r.time.minute) in minutes or r.timestamp in stamps]
        return table._subset(keep)
    if column == "Day_Name":
        wanted = {str(v).lower() for v in values}
        return table._subset(r for r in table.rows if r.day_name.lower() in wanted)
    wanted = set(values)
    keep = [r for r in table.rows if cell(r, column) in wanted]
    pinned = values[0] if column == "Date" and len(wanted) == 1 else table.pinned_date
    return table._subset(keep, pinned_date=pinned)


def f_between(table: ChatTable, column: str, low: CellValue, high: CellValue) -> ChatTable:
    """Rows with ``low <= column <= high``, both ends inclusive."""
    table._check_column(column)
    if column not in ORDERED_COLUMNS:
        raise ChainError("TypeMismatch", f"{column} is not an ordered column")
    for v in (low, high):
        if not _column_accepts(column, v):
            raise ChainError("TypeMismatch", f"{v!r} is not a valid {column} value")
    if column == "Time":
        return _time_between(table, low, high)
    if low > high:
        raise ChainError("EmptyRange", f"min {low!r} is greater than max {high!r}")
    return table._subset(r for r in table.rows if low <= cell(r, column) <= high)


def _time_between(table: ChatTable, low: time | datetime, high: time | datetime) -> ChatTable:
    if isinstance(low, datetime) != isinstance(high, datetime):
        raise ChainError("TypeMismatch", "time range mixes bare times and timestamps")
    if isinstance(low, datetime):
        if low > high:
            raise ChainError("EmptyRange", f"min {low} is greater than max {high}")
        return table._subset(r for r in table.rows if low <= r.timestamp <= high)
    if table.pinned_date is None:
        raise ChainError("TimeRangeNeedsDate",
                         "a bare time range needs a single-date f_value(Date, ...) earlier in the chain")
    if low > high:
        raise ChainError("EmptyRange", f"min {low} is greater than max {high}")
    return table._subset(r for r in table.rows if low <= r.time.replace(second=0) <= high)


def _content_filter(table: ChatTable, queries: list[str]) -> ChatTable:
    if table.content_search is None:
        raise ChainError("UnknownColumn", "this table has no Content column")
    ids = table.ids
    hits: set[int] = set()
    for q in queries:
        hits.update(table.content_search(q, ids, table.content_k))
    return table._subset(r for r in table.rows if r.response_index in hits)


# --- function calls ------------------------------------------------------

@dataclass(frozen=True)
class FunctionCall:
    name: str
    column: str | None = None
    args: tuple[CellValue, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        if self.name == "END":
            if self.column is not None or self.args:
                raise ValueError("END takes no arguments")
            return
        if self.name not in ("f_value", "f_between"):
            raise ValueError(f"unknown function {self.name!r}")
        if self.column is None:
            raise ValueError(f"{self.name} needs a column")
        if self.name == "f_value" and not self.args:
            raise ValueError("f_value needs at least one value")
        if self.name == "f_between":
            if len(self.args) != 2:
                raise ValueError("f_between takes exactly [min, max]")

    @property
    def is_end(self) -> bool:
        return self.name == "END"

    def render(self) -> str:
        if self.is_end:
            return "<END>"
        return f"{self.name}({self.column}, [{', '.join(render_value(v) for v in self.args)}])"

    def __str__(self) -> str:
        return self.render()


END = FunctionCall("END")


def render_value(value: CellValue) -> str:
    if isinstance(value, datetime):
        return value.strftime("%Y-%m-%d %H:%M")
    if isinstance(value, date):
        return value.isoformat()
    if isinstance(value, time):
        return format_time(value)
    if isinstance(value, str):
        if value != value.strip() or not value or re.search(r"[,\[\]()\"<>]", value) or is_number(value):
            return json.dumps(value)
        return value
    return str(value)


def render_chain(calls: Sequence[FunctionCall]) -> str:
    return " -> ".join(c.render() for c in calls)


_CALL_HEAD = re.compile(r"(f_value|f_between)\s*\(\s*([A-Za-z][A-Za-z_ ]*?)\s*,\s*", re.IGNORECASE)
_END_RE = re.compile(r"^\s*<?\s*END\s*>?", re.IGNORECASE)


def normalize_column(name: str, columns: Sequence[str] = COLUMNS + (CONTENT_COLUMN,)) -> str:
    key = re.sub(r"[\s_]+", "_", name.strip().strip("'\"`")).lower()
    for c in columns:
        if c.lower() == key:
            return c
    raise KeyError(name)


def _scan_list(text: str, start: int) -> tuple[str, int]:
    """Return the inside of the bracket list that opens at ``start`` and the index after ``]``."""
    assert text[start] == "["
    i = start + 1
    quote = None
    while i < len(text):
        ch = text[i]
        if quote:
            if ch == "\\":
                i += 2
                continue
            if ch == quote:
                quote = None
        elif ch == '"':
            quote = ch
        elif ch == "]":
            return text[start + 1:i], i + 1
        i += 1
    raise ValueError("unterminated list")


def _split_items(body: str) -> list[str]:
    items, buf, quote = [], [], False
    i = 0
    while i < len(body):
        ch = body[i]
        if quote:
            buf.append(ch)
            if ch == "\\" and i + 1 < len(body):
                buf.append(body[i + 1])
                i += 1
            elif ch == '"':
                quote = False
        elif ch == '"':
            quote = True
            buf.append(ch)
        elif ch == ",":
            items.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
        i += 1
    items.append("".join(buf))
    out = []
    for item in items:
        item = item.strip()
        if not item:
            continue
        if item.startswith('"'):
            out.append(json.loads(item))
        else:
            out.append(item.strip("'"))
    return out


def parse_values(column: str, body: str) -> list[CellValue]:
    """Parse the text inside ``[...]`` into typed values for ``column``."""
    if column == "Date":
        found = find_dates(body)
        if not found:
            raise ValueError(f"no date in {body!r}")
        leftover = body
        for (a, b), _ in reversed(found):
            leftover = leftover[:a] + leftover[b:]
        if re.sub(r"\band\b|[\s,\"']", "", leftover, flags=re.I):
            raise ValueError(f"stray text among dates: {body!r}")
        return [d for _, d in found]
    items = _split_items(body)
    if column in INT_COLUMNS:
        return [parse_number(str(x)) for x in items]
    if column == "Day_Name":
        out = []
        for x in items:
            name = str(x).strip().capitalize()
            if name not in WEEKDAYS:
                raise ValueError(f"not a weekday: {x!r}")
            out.append(name)
        return out
    if column == "Time":
        out = []
        for x in items:
            x = str(x).strip()
            m = re.fullmatch(r"(.+?)[ T](\d{1,2}:\d{2}(?:\s*[ap]\.?m\.?)?)", x, re.I)
            if m and find_dates(m.group(1)):
                out.append(datetime.combine(parse_date(m.group(1)), parse_time(m.group(2))))
            else:
                out.append(parse_time(x))
        return out
    return [str(x) for x in items]


def parse_function_call(text: str, columns: Sequence[str] = COLUMNS + (CONTENT_COLUMN,)) -> FunctionCall:
    """Parse one model emission such as ``f_value(Session_Index, [5])`` or ``<END>``.

    Leading/trailing whitespace and prose after the closing bracket are ignored.
    """
    raw = text
    m = _CALL_HEAD.search(text)
    if m is None:
        if _END_RE.match(text):
            return END
        raise ParseError(raw)
    name = m.group(1).lower()
    try:
        column = normalize_column(m.group(2), columns)
    except KeyError:
        raise ParseError(raw, f"unknown column {m.group(2)!r}") from None
    rest = m.end()
    while rest < len(text) and text[rest].isspace():
        rest += 1
    if rest >= len(text) or text[rest] != "[":
        raise ParseError(raw, "expected a [value, ...] list")
    try:
        body, _ = _scan_list(text, rest)
        values = parse_values(column, body)
    except (ValueError, json.JSONDecodeError) as exc:
        raise ParseError(raw, str(exc)) from None
    if name == "f_between" and len(values) != 2:
        raise ParseError(raw, "f_between needs exactly two values")
    try:
        return FunctionCall(name, column, tuple(values))
    except ValueError as exc:
        raise ParseError(raw, str(exc)) from None


# --- chains ----------------------------------------------------------------

@dataclass(frozen=True)
class Chain:
    calls: tuple[FunctionCall, ...]
    max_filters: int = DEFAULT_MAX_FILTERS

    def __post_init__(self):
        calls = list(self.calls)
        if not calls or not calls[-1].is_end:
            calls.append(END)
        if any(c.is_end for c in calls[:-1]):
            raise ValueError("END may only close a chain")
        deduped: list[FunctionCall] = []
        for c in calls:
            if c in deduped:
                logger.warning("dropping repeated call %s", c.render())
                continue
            deduped.append(c)
        object.__setattr__(self, "calls", tuple(deduped))

    @property
    def filters(self) -> tuple[FunctionCall, ...]:
        return self.calls[:-1]

    def render(self) -> str:
        return render_chain(self.calls)


def apply_call(table: ChatTable, call: FunctionCall) -> ChatTable:
    if call.is_end:
        return table
    if call.name == "f_value":
        return f_value(table, call.column, call.args)
    return f_between(table, call.column, call.args[0], call.args[1])


def apply_chain(table: ChatTable, chain: Chain | Sequence[FunctionCall]) -> ChatTable:
    if not isinstance(chain, Chain):
        chain = Chain(tuple(chain))
    if len(chain.filters) > chain.max_filters:
        raise ChainError("ChainTooLong", f"{len(chain.filters)} filters exceed the limit of {chain.max_filters}")
    for step, call in enumerate(chain.filters):
        try:
            table = apply_call(table, call)
        except ChainError as exc:
            raise ChainError(exc.kind, str(exc).split(": ", 1)[-1], step) from exc
    return table
