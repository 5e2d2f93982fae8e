from datetime import date, time

import pytest

from chatrecall.temporal import (
    cardinal_word, find_dates, format_date, last_weekday, month_bounds, months_between, ordinal_suffix,
    ordinal_word, parse_date, parse_datetime, parse_number, parse_time, shift_months,
)


@pytest.mark.parametrize("n, word", [(1, "first"), (2, "second"), (3, "third"), (5, "fifth"), (12, "twelfth"),
                                     (20, "twentieth"), (21, "twenty-first"), (31, "thirty-first")])
def test_ordinal_words(n, word):
    assert ordinal_word(n) == word
    assert parse_number(word) == n


@pytest.mark.parametrize("n, text", [(1, "1st"), (2, "2nd"), (3, "3rd"), (11, "11th"), (12, "12th"),
                                     (13, "13th"), (22, "22nd"), (101, "101st")])
def test_ordinal_suffix(n, text):
    assert ordinal_suffix(n) == text
    assert parse_number(text) == n


def test_cardinals_round_trip():
    for n in range(0, 400):
        assert parse_number(cardinal_word(n)) == n
        assert parse_number(str(n)) == n


def test_parse_number_rejects_junk():
    with pytest.raises(ValueError):
        parse_number("several")


@pytest.mark.parametrize("text", [
    "2023-01-27", "January 27th, 2023", "January 27, 2023", "27 January 2023",
    "January twenty-seventh, 2023", "the twenty-seventh of January 2023",
])
def test_parse_date_styles(text):
    assert parse_date(text) == date(2023, 1, 27)


def test_format_date_round_trip():
    d = date(2023, 3, 2)
    for style in ("iso", "mdy_ordinal", "mdy", "dmy", "mdy_word"):
        assert parse_date(format_date(d, style)) == d


def test_find_dates_in_sentence():
    found = find_dates("between March 3rd, 2023 and 9 March 2023 please")
    assert [d for _, d in found] == [date(2023, 3, 3), date(2023, 3, 9)]


def test_times():
    assert parse_time("14:10") == time(14, 10)
    assert parse_time("2:10 pm") == time(14, 10)
    assert parse_time("12:05 am") == time(0, 5)
    assert parse_datetime("1:56 pm on 8 May, 2023").isoformat() == "2023-05-08T13:56:00"


def test_calendar_helpers():
    assert month_bounds(2024, 2) == (date(2024, 2, 1), date(2024, 2, 29))
    assert shift_months(date(2023, 3, 31), -1) == date(2023, 2, 28)
    assert months_between(date(2022, 11, 30), date(2023, 1, 1)) == 2
    # 2023-06-10 is a Saturday; "last Saturday" is a week earlier, never today
    assert last_weekday(date(2023, 6, 10), 5) == date(2023, 6, 3)
    assert last_weekday(date(2023, 6, 10), 4) == date(2023, 6, 9)
