"""Calendar helpers shared by the parser, the question generator and the oracle.

Covers number/ordinal spelling ("5", "5th", "five", "fifth"), the date
surface forms used in prompts and questions, and month arithmetic.
"""
from __future__ import annotations

import calendar
import re
from datetime import date, datetime, time, timedelta

MONTHS = [
    "January", "February", "March", "April", "May", "June", "July",
    "August", "September", "October", "November", "December",
]
WEEKDAYS = ["Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday"]

_MONTH_LOOKUP = {m.lower(): i + 1 for i, m in enumerate(MONTHS)}
_MONTH_LOOKUP.update({m[:3].lower(): i + 1 for i, m in enumerate(MONTHS)})
_MONTH_LOOKUP["sept"] = 9

_ONES = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
         "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
         "seventeen", "eighteen", "nineteen"]
_TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]
_ORDINAL_IRREGULAR = {
    "one": "first", "two": "second", "three": "third", "five": "fifth",
    "eight": "eighth", "nine": "ninth", "twelve": "twelfth",
}


def cardinal_word(n: int) -> str:
    """Spell a non-negative integer below 1000 in English words."""
    if not 0 <= n < 1000:
        raise ValueError(f"cannot spell {n}")
    if n < 20:
        return _ONES[n]
    if n < 100:
        tens, ones = divmod(n, 10)
        return _TENS[tens] + (f"-{_ONES[ones]}" if ones else "")
    hundreds, rest = divmod(n, 100)
    head = f"{_ONES[hundreds]} hundred"
    return head if rest == 0 else f"{head} and {cardinal_word(rest)}"


def ordinal_word(n: int) -> str:
    if n < 1:
        raise ValueError(f"no ordinal for {n}")
    words = cardinal_word(n)
    # only the last word takes the ordinal form
    m = re.match(r"^(.*?)([a-z]+)$", words)
    head, last = m.group(1), m.group(2)
    if last in _ORDINAL_IRREGULAR:
        last = _ORDINAL_IRREGULAR[last]
    elif last.endswith("y"):
        last = last[:-1] + "ieth"
    else:
        last = last + "th"
    return head + last


def ordinal_suffix(n: int) -> str:
    if 10 <= n % 100 <= 20:
        suffix = "th"
    else:
        suffix = {1: "st", 2: "nd", 3: "rd"}.get(n % 10, "th")
    return f"{n}{suffix}"


_WORD_VALUES: dict[str, int] = {}
for _i, _w in enumerate(_ONES):
    _WORD_VALUES[_w] = _i
for _i, _w in enumerate(_TENS):
    if _w:
        _WORD_VALUES[_w] = _i * 10
_ORDINAL_VALUES: dict[str, int] = {}
for _w, _v in list(_WORD_VALUES.items()):
    if _v:
        _ORDINAL_VALUES[ordinal_word(_v)] = _v

_NUMBER_WORD = "|".join(sorted(list(_WORD_VALUES) + list(_ORDINAL_VALUES) + ["hundred", "and"],
                               key=len, reverse=True))
# digits with optional ordinal suffix, or a run of number words ("twenty-seventh", "two hundred and five")
NUMBER_PATTERN = (
    r"(?:\d+(?:st|nd|rd|th)?"
    rf"|(?:{_NUMBER_WORD})(?:[\s-]+(?:{_NUMBER_WORD}))*)"
)
_NUMBER_RE = re.compile(rf"^{NUMBER_PATTERN}$", re.IGNORECASE)


def parse_number(text: str) -> int:
    """Parse "5", "5th", "five", "fifth", "twenty-seventh", "two hundred and one"."""
    t = text.strip().lower()
    m = re.fullmatch(r"(\d+)(?:st|nd|rd|th)?", t)
    if m:
        return int(m.group(1))
    words = [w for w in re.split(r"[\s-]+", t) if w and w != "and"]
    if not words:
        raise ValueError(f"not a number: {text!r}")
    total = 0
    current = 0
    for w in words:
        if w == "hundred":
            if current == 0:
                raise ValueError(f"not a number: {text!r}")
            current *= 100
            continue
        if w in _WORD_VALUES:
            current += _WORD_VALUES[w]
        elif w in _ORDINAL_VALUES:
            current += _ORDINAL_VALUES[w]
        else:
            raise ValueError(f"not a number: {text!r}")
    total += current
    return total


def is_number(text: str) -> bool:
    if not _NUMBER_RE.match(text.strip()):
        return False
    try:
        parse_number(text)
    except ValueError:
        return False
    return True


# --- dates -----------------------------------------------------------------

DATE_STYLES = ("iso", "mdy_ordinal", "mdy", "dmy", "mdy_word")


def format_date(d: date, style: str = "iso") -> str:
    month = MONTHS[d.month - 1]
    if style == "iso":
        return d.isoformat()
    if style == "mdy_ordinal":
        return f"{month} {ordinal_suffix(d.day)}, {d.year}"
    if style == "mdy":
        return f"{month} {d.day}, {d.year}"
    if style == "dmy":
        return f"{d.day} {month} {d.year}"
    if style == "mdy_word":
        return f"{month} {ordinal_word(d.day)}, {d.year}"
    raise ValueError(f"unknown date style {style!r}")


_MONTH_NAME = r"(?:jan(?:uary)?|feb(?:ruary)?|mar(?:ch)?|apr(?:il)?|may|june?|july?|aug(?:ust)?|sept?(?:ember)?|oct(?:ober)?|nov(?:ember)?|dec(?:ember)?)"
_DAY_WORD = r"(?:[a-z]+(?:[\s-][a-z]+)?)"
DATE_PATTERN = (
    r"(?:\d{4}-\d{2}-\d{2}"
    rf"|{_MONTH_NAME}\.?\s+(?:\d{{1,2}}(?:st|nd|rd|th)?|{_DAY_WORD}),?\s+\d{{4}}"
    rf"|(?:the\s+)?(?:\d{{1,2}}(?:st|nd|rd|th)?|{_DAY_WORD})\s+(?:of\s+)?{_MONTH_NAME},?\s+\d{{4}})"
)
_DATE_RE = re.compile(DATE_PATTERN, re.IGNORECASE)
_ISO_RE = re.compile(r"(\d{4})-(\d{2})-(\d{2})")
_MDY_RE = re.compile(rf"({_MONTH_NAME})\.?\s+(.+?),?\s+(\d{{4}})$", re.IGNORECASE)
_DMY_RE = re.compile(rf"(?:the\s+)?(.+?)\s+(?:of\s+)?({_MONTH_NAME}),?\s+(\d{{4}})$", re.IGNORECASE)


def _month_number(name: str) -> int:
    key = name.lower().rstrip(".")
    if key in _MONTH_LOOKUP:
        return _MONTH_LOOKUP[key]
    if key[:3] in _MONTH_LOOKUP:
        return _MONTH_LOOKUP[key[:3]]
    raise ValueError(f"unknown month {name!r}")


def parse_date(text: str) -> date:
    """Parse one date written in any of the supported surface forms."""
    t = text.strip().strip(",.")
    m = _ISO_RE.fullmatch(t)
    if m:
        return date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
    m = _MDY_RE.fullmatch(t)
    if m and is_number(m.group(2)):
        return date(int(m.group(3)), _month_number(m.group(1)), parse_number(m.group(2)))
    m = _DMY_RE.fullmatch(t)
    if m and is_number(m.group(1)):
        return date(int(m.group(3)), _month_number(m.group(2)), parse_number(m.group(1)))
    raise ValueError(f"unrecognised date {text!r}")


def find_dates(text: str) -> list[tuple[tuple[int, int], date]]:
    """All dates in ``text`` as ((start, end), date), left to right."""
    found = []
    pos = 0
    while True:
        m = _DATE_RE.search(text, pos)
        if m is None:
            return found
        chunk = m.group(0)
        parsed = None
        # the word alternatives are greedy; shrink from the left until a number parses
        start = m.start()
        while start < m.end():
            try:
                parsed = parse_date(text[start:m.end()])
                break
            except ValueError:
                nxt = text.find(" ", start, m.end())
                if nxt < 0:
                    break
                start = nxt + 1
        if parsed is not None:
            found.append(((start, m.end()), parsed))
        pos = m.end() if chunk else m.start() + 1


# --- times -----------------------------------------------------------------

_TIME_RE = re.compile(r"^(\d{1,2})(?::(\d{2}))?\s*(am|pm|a\.m\.|p\.m\.)?$", re.IGNORECASE)


def parse_time(text: str) -> time:
    m = _TIME_RE.match(text.strip())
    if not m:
        raise ValueError(f"unrecognised time {text!r}")
    hour = int(m.group(1))
    minute = int(m.group(2) or 0)
    ampm = (m.group(3) or "").lower().replace(".", "")
    if ampm:
        if not 1 <= hour <= 12:
            raise ValueError(f"bad 12-hour time {text!r}")
        hour = hour % 12 + (12 if ampm == "pm" else 0)
    return time(hour, minute)


def format_time(t: time) -> str:
    return f"{t.hour:02d}:{t.minute:02d}"


def parse_datetime(text: str) -> datetime:
    """ISO "YYYY-MM-DD HH:MM" or LoCoMo style "1:56 pm on 8 May, 2023"."""
    t = text.strip()
    m = re.fullmatch(r"(\d{4}-\d{2}-\d{2})[ T](\d{1,2}:\d{2})(?::\d{2})?", t)
    if m:
        return datetime.combine(parse_date(m.group(1)), parse_time(m.group(2)))
    m = re.fullmatch(r"(.+?)\s+on\s+(.+)", t, re.IGNORECASE)
    if m:
        return datetime.combine(parse_date(m.group(2)), parse_time(m.group(1)))
    raise ValueError(f"unrecognised timestamp {text!r}")


# --- arithmetic --------------------------------------------------------------

def month_bounds(year: int, month: int) -> tuple[date, date]:
    return date(year, month, 1), date(year, month, calendar.monthrange(year, month)[1])


def shift_months(d: date, months: int) -> date:
    """Same day-of-month ``months`` later (negative for earlier), clamped to month end."""
    index = d.year * 12 + (d.month - 1) + months
    year, month0 = divmod(index, 12)
    last = calendar.monthrange(year, month0 + 1)[1]
    return date(year, month0 + 1, min(d.day, last))


def months_between(earlier: date, later: date) -> int:
    return (later.year * 12 + later.month) - (earlier.year * 12 + earlier.month)


def last_weekday(today: date, weekday: int) -> date:
    """Most recent date with ``weekday`` (0=Monday) strictly before ``today``."""
    back = (today.weekday() - weekday) % 7 or 7
    return today - timedelta(days=back)


def day_name(d: date) -> str:
    return WEEKDAYS[d.weekday()]


def iso_week(d: date) -> int:
    return d.isocalendar()[1]
